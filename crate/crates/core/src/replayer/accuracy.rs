use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::ReplayError;
use crate::guest::generate::rng_from_seed;
use crate::hypervisor::{CoverageBitmap, ASYNC_POOL};
use crate::recorder::ExitMetrics;
use crate::vmx::ExitReason;

pub const DEFAULT_NOISE_THRESHOLD: usize = 30;

/// Coverage differences of one exit reason.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonDiff {
    /// Exits of this reason whose coverage differs.
    pub exits: usize,
    /// Sum of the per-exit block differences.
    pub blocks: usize,
    pub max_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub exits: usize,
    pub recorded_blocks: usize,
    pub replayed_blocks: usize,
    /// Recorded unique blocks that replay also covered, in percent.
    pub coverage_fitting: f64,
    /// Exits whose VMCS writes match exactly, in percent.
    pub vmwrite_fitting: f64,
    pub noise_threshold: usize,
    pub diffs_by_reason: BTreeMap<String, ReasonDiff>,
    /// Exits with any coverage difference.
    pub diff_count: usize,
    /// Of those, exits whose difference is within the noise threshold.
    pub noise_filtered: usize,
}

impl AccuracyReport {
    pub fn all_diffs_are_noise(&self) -> bool {
        self.noise_filtered == self.diff_count
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        100.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Compares recorded and replayed per-exit metrics. `reasons` labels each exit.
pub fn compute_accuracy(
    reasons: &[ExitReason],
    recorded: &[ExitMetrics],
    replayed: &[ExitMetrics],
    noise_threshold: usize,
) -> Result<AccuracyReport, ReplayError> {
    if recorded.len() != replayed.len() || reasons.len() != recorded.len() {
        return Err(ReplayError::LengthMismatch {
            recorded: recorded.len(),
            replayed: replayed.len(),
        });
    }
    let mut rec_all = CoverageBitmap::new();
    let mut rep_all = CoverageBitmap::new();
    let mut writes_equal = 0;
    let mut diffs_by_reason: BTreeMap<String, ReasonDiff> = BTreeMap::new();
    let (mut diff_count, mut noise_filtered) = (0, 0);
    for ((reason, rec), rep) in reasons.iter().zip(recorded).zip(replayed) {
        rec_all.union_with(&rec.coverage);
        rep_all.union_with(&rep.coverage);
        if rec.write_entries == rep.write_entries {
            writes_equal += 1;
        }
        let d = rec.coverage.symmetric_difference_count(&rep.coverage);
        if d > 0 {
            diff_count += 1;
            if d <= noise_threshold {
                noise_filtered += 1;
            }
            let entry = diffs_by_reason.entry(reason.name()).or_default();
            entry.exits += 1;
            entry.blocks += d;
            entry.max_blocks = entry.max_blocks.max(d);
        }
    }
    let reproduced = rec_all.count() - rec_all.difference(&rep_all).count();
    Ok(AccuracyReport {
        exits: recorded.len(),
        recorded_blocks: rec_all.count(),
        replayed_blocks: rep_all.count(),
        coverage_fitting: percent(reproduced, rec_all.count()),
        vmwrite_fitting: percent(writes_equal, recorded.len()),
        noise_threshold,
        diffs_by_reason,
        diff_count,
        noise_filtered,
    })
}

/// Adds asynchronous-event blocks to recorded coverage, standing in for
/// interrupt-controller and timer activity that replay does not reproduce.
#[derive(Clone, Debug)]
pub struct NoiseInjector {
    pub probability: f64,
    rng: ChaCha8Rng,
}

impl NoiseInjector {
    pub fn new(probability: f64, rng_seed: u64) -> Self {
        Self { probability, rng: rng_from_seed(rng_seed) }
    }

    /// Marks 1 to `ASYNC_POOL.len()` pool blocks on each exit with the
    /// configured probability. Returns the number of exits touched.
    pub fn apply(&mut self, metrics: &mut [ExitMetrics]) -> usize {
        let mut touched = 0;
        for m in metrics {
            if !self.rng.gen_bool(self.probability) {
                continue;
            }
            touched += 1;
            let n = self.rng.gen_range(1..=ASYNC_POOL.len());
            for _ in 0..n {
                let block = ASYNC_POOL[self.rng.gen_range(0..ASYNC_POOL.len())];
                m.coverage.set(block);
            }
        }
        touched
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypervisor::Block;

    fn metrics(blocks: &[Block]) -> ExitMetrics {
        let mut coverage = CoverageBitmap::new();
        for &b in blocks {
            coverage.set(b);
        }
        ExitMetrics { coverage, write_entries: Vec::new(), cycles: 0 }
    }

    #[test]
    fn identical_lists_fit_fully() {
        let m = vec![metrics(&[Block::DispatchEntry, Block::RdtscEntry]); 4];
        let r = compute_accuracy(&[ExitReason::Rdtsc; 4], &m, &m, 30).unwrap();
        assert_eq!(r.coverage_fitting, 100.0);
        assert_eq!(r.vmwrite_fitting, 100.0);
        assert_eq!(r.diff_count, 0);
        assert!(r.diffs_by_reason.is_empty());
    }

    #[test]
    fn missing_blocks_cluster_under_reason() {
        let ext: Vec<Block> = crate::hypervisor::BLOCK_TABLE
            .iter()
            .filter(|(_, h, _)| *h == "external_interrupt" || *h == "dispatch")
            .map(|(b, _, _)| *b)
            .collect();
        assert!(ext.len() >= 11);
        let recorded = vec![metrics(&ext)];
        let replayed = vec![metrics(&ext[..ext.len() - 10])];
        let r = compute_accuracy(&[ExitReason::ExternalInterrupt], &recorded, &replayed, 30).unwrap();
        assert_eq!(r.diffs_by_reason["EXTERNAL_INTERRUPT"].blocks, 10);
        assert_eq!(r.noise_filtered, 1);
        assert!(r.coverage_fitting < 100.0);
    }

    #[test]
    fn unequal_lengths() {
        let m = vec![metrics(&[])];
        assert_eq!(
            compute_accuracy(&[ExitReason::Hlt], &m, &[], 30),
            Err(ReplayError::LengthMismatch { recorded: 1, replayed: 0 })
        );
    }

    #[test]
    fn noise_stays_in_pool() {
        let mut m = vec![metrics(&[]); 1000];
        let touched = NoiseInjector::new(0.05, 1).apply(&mut m);
        assert!((20..=90).contains(&touched), "{touched}");
        for x in &m {
            assert!(x.coverage.count() <= ASYNC_POOL.len());
            assert!(x.coverage.blocks().all(|b| ASYNC_POOL.contains(&b)));
        }
    }
}
