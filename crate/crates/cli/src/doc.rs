//! JSON documents written by the commands and read back by `report`.

use iris_core::fuzzer::CampaignSummary;
use iris_core::replayer::{AccuracyReport, ReplayOutcome, ThroughputReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Document {
    Record(RecordDoc),
    Replay(ReplayDoc),
    Campaign(CampaignSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub reason: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDoc {
    pub trace: String,
    pub workload: String,
    pub rng_seed: u64,
    pub exits: usize,
    pub histogram: Vec<HistogramRow>,
    pub guest_cycles: u64,
    pub handler_cycles: u64,
    pub overhead_cycles: u64,
    pub mode_trajectory: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub exits: usize,
    pub coverage_fitting: f64,
    pub vmwrite_fitting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDoc {
    pub trace: String,
    pub workload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    pub outcome: ReplayOutcome,
    pub exits: usize,
    pub virtual_cycles: u64,
    pub mode_trajectory: Vec<String>,
    /// Modes of the values written to GUEST_CR0 (recorded, replayed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cr0_writes: Option<(Vec<String>, Vec<String>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fitting_curve: Vec<FitPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputReport>,
}

pub fn histogram(trace: &iris_core::recorder::TraceFile) -> Vec<HistogramRow> {
    let total = trace.len().max(1) as f64;
    trace
        .reason_histogram()
        .into_iter()
        .map(|(r, n)| HistogramRow { reason: r.name(), count: n, percent: 100.0 * n as f64 / total })
        .collect()
}
