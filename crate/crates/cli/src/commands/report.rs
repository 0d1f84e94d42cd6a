use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use iris_core::fuzzer::{delta_table, CampaignSummary, FailureKind};
use iris_core::replayer::{compute_accuracy, ReasonDiff};
use iris_core::vmx::ExitReason;

use crate::args::{Format, ReportArgs};
use crate::doc::{Document, RecordDoc, ReplayDoc};
use crate::{read_trace, write_file, Ctx, UsageError, EXIT_OK};

/// Per-reason coverage differences of one record/replay comparison.
struct DiffSection {
    title: String,
    coverage_fitting: f64,
    vmwrite_fitting: f64,
    diffs: BTreeMap<String, ReasonDiff>,
}

#[derive(Default)]
struct Inputs {
    records: Vec<RecordDoc>,
    replays: Vec<ReplayDoc>,
    campaigns: Vec<CampaignSummary>,
    diffs: Vec<DiffSection>,
}

fn is_trace(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "iris")
}

fn load(a: &ReportArgs) -> Result<Inputs> {
    let mut inputs = Inputs::default();
    let (traces, docs): (Vec<&PathBuf>, Vec<&PathBuf>) = a.inputs.iter().partition(|p| is_trace(p));
    if traces.len() % 2 != 0 {
        return Err(UsageError(format!(
            "trace inputs come in recorded/replayed pairs, got {}",
            traces.len()
        ))
        .into());
    }
    for pair in traces.chunks(2) {
        let recorded = read_trace(pair[0])?;
        let replayed = read_trace(pair[1])?;
        let n = recorded.len().min(replayed.len());
        let reasons: Vec<ExitReason> = recorded.reasons().take(n).collect();
        let acc = compute_accuracy(
            &reasons,
            &recorded.metrics()[..n],
            &replayed.metrics()[..n],
            a.noise_threshold,
        )?;
        inputs.diffs.push(DiffSection {
            title: format!("{} vs {}", pair[0].display(), pair[1].display()),
            coverage_fitting: acc.coverage_fitting,
            vmwrite_fitting: acc.vmwrite_fitting,
            diffs: acc.diffs_by_reason,
        });
    }
    for path in docs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let items = match value {
            serde_json::Value::Array(v) => v,
            v => vec![v],
        };
        for item in items {
            let doc: Document = serde_json::from_value(item)
                .with_context(|| format!("{} is not an iris document", path.display()))?;
            match doc {
                Document::Record(r) => inputs.records.push(r),
                Document::Replay(r) => {
                    if let Some(acc) = &r.accuracy {
                        inputs.diffs.push(DiffSection {
                            title: r.trace.clone(),
                            coverage_fitting: acc.coverage_fitting,
                            vmwrite_fitting: acc.vmwrite_fitting,
                            diffs: acc.diffs_by_reason.clone(),
                        });
                    }
                    inputs.replays.push(r);
                }
                Document::Campaign(c) => inputs.campaigns.push(c),
            }
        }
    }
    Ok(inputs)
}

fn text(inputs: &Inputs) -> String {
    let mut out = String::new();
    for r in &inputs.records {
        let _ = writeln!(out, "exit reasons: {} ({}, {} exits)", r.trace, r.workload, r.exits);
        for row in &r.histogram {
            let bar = "#".repeat((row.percent / 2.0).round() as usize);
            let _ = writeln!(out, "  {:<22} {:>6} {:>6.1}%  {bar}", row.reason, row.count, row.percent);
        }
        out.push('\n');
    }
    for r in &inputs.replays {
        let status = serde_json::to_value(&r.outcome).ok();
        let status = status.as_ref().and_then(|v| v["status"].as_str()).unwrap_or("?");
        let _ = writeln!(out, "replay: {} ({}, {} exits, {status})", r.trace, r.workload, r.exits);
        let _ = writeln!(out, "  modes: {}", super::replay::abbreviate(&r.mode_trajectory));
        if let Some((rec, rep)) = &r.cr0_writes {
            let _ = writeln!(out, "  GUEST_CR0 writes recorded: {}", rec.join(" -> "));
            let _ = writeln!(out, "  GUEST_CR0 writes replayed: {}", rep.join(" -> "));
        }
        if !r.fitting_curve.is_empty() {
            let _ = writeln!(out, "  {:>8}  {:>8}  {:>8}", "exits", "coverage", "vmwrite");
            for p in &r.fitting_curve {
                let _ = writeln!(out, "  {:>8}  {:>7.1}%  {:>7.1}%", p.exits, p.coverage_fitting, p.vmwrite_fitting);
            }
        }
        if let Some(t) = &r.throughput {
            let _ = writeln!(out, "  {} virtual cycles, {:.0} exits/s", t.virtual_cycles, t.exits_per_second_equivalent);
        }
        out.push('\n');
    }
    for d in &inputs.diffs {
        let _ = writeln!(
            out,
            "coverage differences: {} (coverage {:.1}%, vmwrite {:.1}%)",
            d.title, d.coverage_fitting, d.vmwrite_fitting
        );
        if d.diffs.is_empty() {
            let _ = writeln!(out, "  none");
        } else {
            let _ = writeln!(out, "  {:<22} {:>6} {:>7} {:>5}", "reason", "exits", "blocks", "max");
            for (reason, x) in &d.diffs {
                let _ = writeln!(out, "  {reason:<22} {:>6} {:>7} {:>5}", x.exits, x.blocks, x.max_blocks);
            }
        }
        out.push('\n');
    }
    if !inputs.campaigns.is_empty() {
        let _ = writeln!(out, "coverage delta by exit reason");
        out.push_str(&delta_table(&inputs.campaigns).to_text());
        out.push('\n');
        let _ = writeln!(out, "{:<40} {:>8} {:>8} {:>9}", "campaign", "mutants", "vm-crash", "hyp-crash");
        for c in &inputs.campaigns {
            let _ = writeln!(
                out,
                "{:<40} {:>8} {:>8} {:>9}",
                format!("{}/{}/{}", c.workload, c.reason, c.area.name()),
                c.mutants,
                c.failure_count(FailureKind::VmCrash),
                c.failure_count(FailureKind::HypCrash)
            );
        }
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

fn csv(inputs: &Inputs) -> String {
    let mut sections = Vec::new();
    if !inputs.records.is_empty() {
        let mut s = String::from("trace,workload,reason,count,percent\n");
        for r in &inputs.records {
            for row in &r.histogram {
                let _ = writeln!(s, "{},{},{},{},{:.2}", r.trace, r.workload, row.reason, row.count, row.percent);
            }
        }
        sections.push(s);
    }
    if inputs.replays.iter().any(|r| !r.fitting_curve.is_empty()) {
        let mut s = String::from("trace,exits,coverage_fitting,vmwrite_fitting\n");
        for r in &inputs.replays {
            for p in &r.fitting_curve {
                let _ = writeln!(s, "{},{},{:.2},{:.2}", r.trace, p.exits, p.coverage_fitting, p.vmwrite_fitting);
            }
        }
        sections.push(s);
    }
    if !inputs.replays.is_empty() {
        let mut s = String::from("trace,step,mode\n");
        for r in &inputs.replays {
            for (i, m) in r.mode_trajectory.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{m}", r.trace);
            }
        }
        sections.push(s);
    }
    if !inputs.diffs.is_empty() {
        let mut s = String::from("comparison,reason,exits,blocks,max_blocks\n");
        for d in &inputs.diffs {
            for (reason, x) in &d.diffs {
                let _ = writeln!(s, "{},{reason},{},{},{}", d.title, x.exits, x.blocks, x.max_blocks);
            }
        }
        sections.push(s);
    }
    if !inputs.campaigns.is_empty() {
        sections.push(delta_table(&inputs.campaigns).to_csv());
    }
    sections.join("\n")
}

pub fn report(ctx: &Ctx, a: ReportArgs) -> Result<u8> {
    if a.inputs.is_empty() {
        return Err(UsageError("report needs at least one input".into()).into());
    }
    let inputs = load(&a)?;
    let rendered = match a.format {
        Format::Text => text(&inputs),
        Format::Csv => csv(&inputs),
    };
    match &a.out {
        Some(p) => write_file(&ctx.output_path(p), &rendered)?,
        None if !ctx.quiet => print!("{rendered}"),
        None => {}
    }
    Ok(EXIT_OK)
}
