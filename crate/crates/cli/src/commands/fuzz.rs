use std::path::Path;

use anyhow::{Context, Result};
use iris_core::fuzzer::{delta_table, run_test_case, CampaignSummary, FailureKind, FuzzConfig, FuzzError};
use iris_core::recorder::{seed_fragment, serialize_trace};

use super::{file_stem, load_snapshot};
use crate::args::FuzzArgs;
use crate::doc::Document;
use crate::{read_trace, write_file, Ctx, EXIT_OK};

pub fn fuzz(ctx: &Ctx, a: FuzzArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = FuzzConfig::from_toml(&text).with_context(|| a.config.display().to_string())?;
    if cfg.campaign.is_empty() {
        return Err(FuzzError::Config("no [[campaign]] entries".into()).into());
    }
    if let Some(seed) = ctx.rng_seed {
        cfg.rng_seed = seed;
    }
    if let Some(m) = a.mutants {
        cfg.mutants = m;
        for c in &mut cfg.campaign {
            c.mutants = None;
        }
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let out_dir = a.dest.as_deref().map_or_else(|| ctx.out_dir.clone(), |p| ctx.output_path(p));

    let mut summaries = Vec::new();
    for (ci, spec) in cfg.campaign.iter().enumerate() {
        let trace = read_trace(&base.join(&spec.trace))?;
        let start = spec.snapshot.as_ref().map(|p| load_snapshot(&base.join(p))).transpose()?;
        let trace_id = file_stem(&spec.trace);
        for tc in spec.test_cases(&cfg, &trace, &trace_id)? {
            let result = run_test_case(&trace, start.as_ref(), &tc, cfg.parallel)
                .with_context(|| format!("campaign {ci} on {trace_id}, seed {}", tc.seed_index))?;
            let mut summary = CampaignSummary::from_result(&result);
            let name = format!(
                "{ci:02}-{trace_id}-{}-{}",
                summary.reason.to_lowercase(),
                tc.area.name().to_lowercase()
            );
            for (crash, artifact) in summary.crashes.iter_mut().zip(&result.crash_artifacts) {
                let stem = format!("{name}-crash-{:05}", artifact.mutant_index);
                write_file(&out_dir.join(format!("{stem}.irisnap")), result.snapshot.to_snapshot_bytes())?;
                let fragment = seed_fragment(&trace.header, &artifact.seed);
                write_file(&out_dir.join(format!("{stem}.iris")), serialize_trace(&fragment))?;
                crash.artifact = Some(stem);
            }
            let doc = Document::Campaign(summary.clone());
            write_file(&out_dir.join(format!("{name}.json")), serde_json::to_string_pretty(&doc)? + "\n")?;
            ctx.say(format_args!(
                "{name}: {} mutants, {} -> {} blocks ({:+.1}%), vm-crash {}, hyp-crash {}",
                summary.mutants,
                summary.baseline_blocks,
                summary.campaign_blocks,
                summary.coverage_delta_pct,
                summary.failure_count(FailureKind::VmCrash),
                summary.failure_count(FailureKind::HypCrash),
            ));
            summaries.push(summary);
        }
    }
    let table = delta_table(&summaries);
    write_file(&out_dir.join("table.txt"), table.to_text())?;
    ctx.say("");
    ctx.say(table.to_text().trim_end());
    let docs: Vec<Document> = summaries.into_iter().map(Document::Campaign).collect();
    ctx.emit_json(&docs)?;
    Ok(EXIT_OK)
}
