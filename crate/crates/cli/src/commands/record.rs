use std::path::PathBuf;

use anyhow::{Context, Result};
use iris_core::guest::{generate_workload, ProgramFile, RNG_ALGORITHM};
use iris_core::recorder::{record_program, serialize_trace, starting_session, TraceHeader};

use super::{outcome_status, DEFAULT_RNG_SEED};
use crate::args::RecordArgs;
use crate::doc::{histogram, Document, RecordDoc};
use crate::{write_file, Ctx};

pub fn record(ctx: &Ctx, a: RecordArgs) -> Result<u8> {
    let file = match &a.program {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            ProgramFile::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))?
        }
        None => {
            let workload = a.workload.expect("clap requires a workload without --program");
            let rng_seed = ctx.rng_seed.unwrap_or(DEFAULT_RNG_SEED);
            ProgramFile {
                workload,
                rng_algorithm: RNG_ALGORITHM.to_string(),
                rng_seed,
                program: generate_workload(workload, a.n_exits, rng_seed),
            }
        }
    };
    let mut session = starting_session(file.workload);
    let header = TraceHeader::new(file.workload.name(), &file.rng_algorithm, file.rng_seed);
    let (trace, summary) = record_program(&mut session, &file.program, header);

    let out = ctx.output_path(
        &a.out
            .unwrap_or_else(|| PathBuf::from(format!("{}.iris", file.workload.name().to_lowercase()))),
    );
    write_file(&out, serialize_trace(&trace))?;
    if let Some(p) = &a.save_snapshot {
        write_file(&ctx.output_path(p), session.to_snapshot_bytes())?;
    }

    let mut rows = histogram(&trace);
    rows.sort_by(|x, y| y.count.cmp(&x.count).then_with(|| x.reason.cmp(&y.reason)));
    let doc = RecordDoc {
        trace: out.display().to_string(),
        workload: file.workload.name().to_string(),
        rng_seed: file.rng_seed,
        exits: trace.len(),
        histogram: rows,
        guest_cycles: summary.guest_cycles,
        handler_cycles: summary.handler_cycles,
        overhead_cycles: summary.overhead_cycles,
        mode_trajectory: summary.mode_trajectory.iter().map(|m| m.to_string()).collect(),
        crash: summary.crash.as_ref().map(|r| format!("{:?}", r.outcome)),
    };
    ctx.say(format_args!("recorded {} exits of {} to {}", doc.exits, doc.workload, doc.trace));
    for row in &doc.histogram {
        ctx.say(format_args!("  {:<22} {:>6}  {:>5.1}%", row.reason, row.count, row.percent));
    }
    if let Some(c) = &doc.crash {
        ctx.say(format_args!("recording stopped: {c}"));
    }
    ctx.emit_json(&Document::Record(doc))?;
    Ok(summary.crash.map_or(crate::EXIT_OK, |r| outcome_status(&r.outcome)))
}
