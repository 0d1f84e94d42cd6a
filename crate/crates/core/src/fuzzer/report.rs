use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::campaign::{CampaignResult, FailureKind};
use super::mutate::SeedArea;
use crate::guest::Workload;
use crate::vmx::{ExitReason, Field};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrashSummary {
    pub mutant_index: usize,
    pub entry_index: usize,
    pub bit_index: u8,
    /// Mutated VMCS field or register name.
    pub target: String,
    pub kind: FailureKind,
    pub log: String,
    /// Artifact file stem, once written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

/// JSON form of a [`CampaignResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub trace_id: String,
    pub workload: String,
    pub reason: String,
    pub seed_index: usize,
    pub area: SeedArea,
    pub mutants: usize,
    pub rng_seed: u64,
    pub baseline_blocks: usize,
    pub campaign_blocks: usize,
    pub new_blocks: Vec<String>,
    pub coverage_delta_pct: f64,
    pub failures: BTreeMap<FailureKind, usize>,
    pub crashes: Vec<CrashSummary>,
}

impl CampaignSummary {
    pub fn from_result(r: &CampaignResult) -> Self {
        let new = r.new_blocks();
        let crashes = r
            .crash_artifacts
            .iter()
            .map(|a| {
                let target = match a.mutation.area {
                    SeedArea::Vmcs => a.seed.read_entries[a.mutation.entry_index]
                        .field()
                        .map(Field::name)
                        .unwrap_or("?")
                        .to_string(),
                    SeedArea::Gpr => crate::vmx::GprId::from_encoding(
                        a.seed.gpr_entries[a.mutation.entry_index].encoding,
                    )
                    .map(|g| g.name())
                    .unwrap_or("?")
                    .to_string(),
                };
                CrashSummary {
                    mutant_index: a.mutant_index,
                    entry_index: a.mutation.entry_index,
                    bit_index: a.mutation.bit_index,
                    target,
                    kind: a.kind,
                    log: a.log.clone(),
                    artifact: None,
                }
            })
            .collect();
        CampaignSummary {
            trace_id: r.test_case.trace_id.clone(),
            workload: r.workload.clone(),
            reason: r.reason.name(),
            seed_index: r.test_case.seed_index,
            area: r.test_case.area,
            mutants: r.test_case.mutants,
            rng_seed: r.test_case.rng_seed,
            baseline_blocks: r.baseline_coverage.count(),
            campaign_blocks: r.campaign_coverage.count(),
            new_blocks: new.blocks().map(|b| b.label().to_string()).collect(),
            coverage_delta_pct: 100.0 * new.count() as f64 / r.baseline_coverage.count().max(1) as f64,
            failures: r.failures.clone(),
            crashes,
        }
    }

    pub fn failure_count(&self, kind: FailureKind) -> usize {
        self.failures.get(&kind).copied().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DeltaCell {
    Delta(f64),
    /// No seed of this reason in the workload's trace.
    Skipped,
}

/// Coverage deltas by exit reason (rows) and workload/area (columns).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaTable {
    pub columns: Vec<(String, SeedArea)>,
    pub rows: Vec<(String, Vec<DeltaCell>)>,
}

fn workload_rank(name: &str) -> usize {
    Workload::ALL
        .iter()
        .position(|w| w.name() == name)
        .unwrap_or(Workload::ALL.len())
}

fn reason_rank(name: &str) -> (u16, String) {
    (ExitReason::from_name(name).map_or(u16::MAX, |r| r.code()), name.to_string())
}

/// Pools summaries into a delta table; several campaigns on one cell are
/// averaged.
pub fn delta_table(summaries: &[CampaignSummary]) -> DeltaTable {
    let mut workloads: Vec<&str> = summaries.iter().map(|s| s.workload.as_str()).collect();
    workloads.sort_by_key(|w| (workload_rank(w), w.to_string()));
    workloads.dedup();
    let mut reasons: Vec<&str> = summaries.iter().map(|s| s.reason.as_str()).collect();
    reasons.sort_by_key(|r| reason_rank(r));
    reasons.dedup();
    let columns: Vec<(String, SeedArea)> = workloads
        .iter()
        .flat_map(|w| SeedArea::ALL.map(|a| (w.to_string(), a)))
        .collect();
    let rows = reasons
        .iter()
        .map(|reason| {
            let cells = columns
                .iter()
                .map(|(w, a)| {
                    let hits: Vec<f64> = summaries
                        .iter()
                        .filter(|s| s.reason == *reason && s.workload == *w && s.area == *a)
                        .map(|s| s.coverage_delta_pct)
                        .collect();
                    if hits.is_empty() {
                        DeltaCell::Skipped
                    } else {
                        DeltaCell::Delta(hits.iter().sum::<f64>() / hits.len() as f64)
                    }
                })
                .collect();
            (reason.to_string(), cells)
        })
        .collect();
    DeltaTable { columns, rows }
}

impl DeltaCell {
    fn text(self) -> String {
        match self {
            DeltaCell::Delta(d) => format!("+{d:.0}%"),
            DeltaCell::Skipped => "-".into(),
        }
    }
}

impl DeltaTable {
    pub fn cell(&self, reason: &str, workload: &str, area: SeedArea) -> Option<DeltaCell> {
        let col = self.columns.iter().position(|(w, a)| w == workload && *a == area)?;
        let row = self.rows.iter().find(|(r, _)| r == reason)?;
        Some(row.1[col])
    }

    pub fn to_text(&self) -> String {
        let headers: Vec<String> = self.columns.iter().map(|(w, a)| format!("{w}/{}", a.name())).collect();
        let first = self.rows.iter().map(|(r, _)| r.len()).max().unwrap_or(0).max("exit reason".len());
        let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "exit reason");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for (reason, cells) in &self.rows {
            let _ = write!(out, "{reason:<first$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {:>w$}", c.text());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("reason");
        for (w, a) in &self.columns {
            let _ = write!(out, ",{w}/{}", a.name());
        }
        out.push('\n');
        for (reason, cells) in &self.rows {
            out.push_str(reason);
            for c in cells {
                match c {
                    DeltaCell::Delta(d) => {
                        let _ = write!(out, ",{d:.2}");
                    }
                    DeltaCell::Skipped => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
