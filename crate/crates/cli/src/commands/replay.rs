use anyhow::Result;
use iris_core::recorder::{record_cycles, serialize_trace, TraceFile, TraceRecord};
use iris_core::replayer::{
    compute_accuracy, cr0_write_trajectory, measure_throughput, replay_trace, start_dummy_vm,
    NoiseInjector, ReadPolicy, ReplayOutcome, ReplaySession, ThroughputReport,
};
use iris_core::vmx::ExitReason;

use super::{load_snapshot, DEFAULT_RNG_SEED};
use crate::args::ReplayArgs;
use crate::doc::{Document, FitPoint, ReplayDoc};
use crate::{read_trace, write_file, Ctx};

const CURVE_POINTS: usize = 10;

fn modes(m: &[iris_core::vmx::CpuMode]) -> Vec<String> {
    m.iter().map(|m| m.to_string()).collect()
}

pub fn replay(ctx: &Ctx, a: ReplayArgs) -> Result<u8> {
    let trace = read_trace(&a.trace)?;
    let start = a.from.as_deref().map(load_snapshot).transpose()?;
    let fresh = || -> ReplaySession {
        let mut s = start_dummy_vm(start.as_ref());
        if a.live_reads {
            s.policy = ReadPolicy::LiveFallback;
        }
        s
    };
    let mut session = fresh();
    let (result, metrics) = replay_trace(&mut session, &trace, a.with_metrics)?;

    let mut doc = ReplayDoc {
        trace: a.trace.display().to_string(),
        workload: trace.header.workload.clone(),
        from: a.from.as_ref().map(|p| p.display().to_string()),
        outcome: result.outcome.clone(),
        exits: result.exits,
        virtual_cycles: result.virtual_cycles,
        mode_trajectory: modes(&result.mode_trajectory),
        cr0_writes: None,
        accuracy: None,
        fitting_curve: Vec::new(),
        throughput: None,
    };

    match metrics {
        Some(replayed) => {
            let n = replayed.len();
            let reasons: Vec<ExitReason> = trace.reasons().take(n).collect();
            let mut recorded = trace.metrics();
            recorded.truncate(n);
            if let Some(p) = a.noise {
                NoiseInjector::new(p, ctx.rng_seed.unwrap_or(DEFAULT_RNG_SEED)).apply(&mut recorded);
            }
            let initial = result.mode_trajectory[0];
            doc.cr0_writes = Some((
                modes(&cr0_write_trajectory(initial, &recorded)),
                modes(&cr0_write_trajectory(initial, &replayed)),
            ));
            let mut points: Vec<usize> = (1..=CURVE_POINTS).map(|i| n * i / CURVE_POINTS).filter(|&k| k > 0).collect();
            points.dedup();
            for k in points {
                let acc = compute_accuracy(&reasons[..k], &recorded[..k], &replayed[..k], a.noise_threshold)?;
                doc.fitting_curve.push(FitPoint {
                    exits: k,
                    coverage_fitting: acc.coverage_fitting,
                    vmwrite_fitting: acc.vmwrite_fitting,
                });
            }
            doc.accuracy = Some(compute_accuracy(&reasons, &recorded, &replayed, a.noise_threshold)?);
            let mut t = measure_throughput(&mut fresh(), &trace)?;
            if !result.outcome.is_completed() {
                t.speedup_vs_record = None;
            }
            doc.throughput = Some(t);
            if let Some(p) = &a.save_metrics {
                let mut out = TraceFile::new(trace.header.clone());
                for (rec, m) in trace.records.iter().zip(replayed) {
                    out.push(TraceRecord { seed: rec.seed.clone(), metrics: m });
                }
                write_file(&ctx.output_path(p), serialize_trace(&out))?;
            }
        }
        None => {
            let recorded = result.outcome.is_completed().then(|| record_cycles(&trace)).flatten();
            doc.throughput = Some(ThroughputReport::new(result.exits, result.virtual_cycles, recorded));
        }
    }

    if let Some(p) = &a.save_snapshot {
        write_file(&ctx.output_path(p), session.dummy.to_snapshot_bytes())?;
    }
    let document = Document::Replay(doc);
    if let Some(p) = &a.report {
        write_file(&ctx.output_path(p), serde_json::to_string_pretty(&document)? + "\n")?;
    }
    let Document::Replay(doc) = &document else { unreachable!() };
    print_summary(ctx, doc);
    ctx.emit_json(&document)?;
    Ok(status(&doc.outcome))
}

/// Joins a mode trajectory, eliding the middle of long ones.
pub fn abbreviate(modes: &[String]) -> String {
    const KEEP: usize = 6;
    if modes.len() <= 2 * KEEP {
        return modes.join(" -> ");
    }
    format!(
        "{} -> ... ({} more) -> {}",
        modes[..KEEP].join(" -> "),
        modes.len() - 2 * KEEP,
        modes[modes.len() - KEEP..].join(" -> ")
    )
}

pub fn status(outcome: &ReplayOutcome) -> u8 {
    match outcome {
        ReplayOutcome::Completed => crate::EXIT_OK,
        ReplayOutcome::VmCrash { .. } => crate::EXIT_VM_CRASH,
        ReplayOutcome::HypCrash { .. } => crate::EXIT_HYP_CRASH,
        ReplayOutcome::Aborted { .. } => crate::EXIT_INVALID,
    }
}

fn print_summary(ctx: &Ctx, doc: &ReplayDoc) {
    match &doc.outcome {
        ReplayOutcome::Completed => ctx.say(format_args!("completed {} exits", doc.exits)),
        ReplayOutcome::VmCrash { exit, log } => ctx.say(format_args!("vm-crash at exit {exit}: {log}")),
        ReplayOutcome::HypCrash { exit, log } => ctx.say(format_args!("hyp-crash at exit {exit}: {log}")),
        ReplayOutcome::Aborted { exit, diagnostic } => {
            ctx.say(format_args!("aborted at exit {exit}: {diagnostic}"))
        }
    }
    ctx.say(format_args!("mode trajectory: {}", abbreviate(&doc.mode_trajectory)));
    if let Some(acc) = &doc.accuracy {
        ctx.say(format_args!("coverage_fitting {:.1}", acc.coverage_fitting));
        ctx.say(format_args!("vmwrite_fitting {:.1}", acc.vmwrite_fitting));
        if acc.diff_count > 0 {
            ctx.say(format_args!(
                "{} exits differ, {} within {} blocks",
                acc.diff_count, acc.noise_filtered, acc.noise_threshold
            ));
        }
    }
    if let Some(t) = &doc.throughput {
        ctx.say(format_args!(
            "{} virtual cycles, {:.0} exits/s equivalent ({:.2}x the reference)",
            t.virtual_cycles,
            t.exits_per_second_equivalent,
            t.reference_ratio()
        ));
        if let Some(s) = t.speedup_vs_record {
            ctx.say(format_args!("speedup over recording {s:.2}x"));
        }
    }
}
