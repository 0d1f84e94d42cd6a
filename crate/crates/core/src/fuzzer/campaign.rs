use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mutate::{mutate_single_bitflip, Mutation, SeedArea};
use super::FuzzError;
use crate::guest::generate::rng_from_seed;
use crate::hypervisor::{CoverageBitmap, HandlerOutcome, Session};
use crate::recorder::{TraceFile, VmSeed};
use crate::replayer::{replay_trace, start_dummy_vm, ReadPolicy, ReplayOutcome, SeedOutcome};
use crate::vmx::ExitReason;

pub const DEFAULT_MUTANTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub trace_id: String,
    /// Position of the seed to mutate.
    pub seed_index: usize,
    pub area: SeedArea,
    pub mutants: usize,
    pub rng_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureKind {
    None,
    VmCrash,
    HypCrash,
}

pub fn detect_failure(outcome: &HandlerOutcome, _session: &Session) -> FailureKind {
    match outcome {
        HandlerOutcome::VmCrash(_) => FailureKind::VmCrash,
        HandlerOutcome::HypCrash(_) => FailureKind::HypCrash,
        HandlerOutcome::Resume | HandlerOutcome::InjectFault(_) => FailureKind::None,
    }
}

/// A crashing mutant, kept with what is needed to re-run it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrashArtifact {
    pub mutant_index: usize,
    pub mutation: Mutation,
    pub kind: FailureKind,
    pub log: String,
    pub seed: VmSeed,
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub test_case: TestCase,
    /// Workload named in the trace header.
    pub workload: String,
    pub reason: ExitReason,
    pub baseline_coverage: CoverageBitmap,
    /// Union of the baseline and every mutant's coverage.
    pub campaign_coverage: CoverageBitmap,
    pub failures: BTreeMap<FailureKind, usize>,
    /// First crashing mutant of each distinct crash log.
    pub crash_artifacts: Vec<CrashArtifact>,
    /// Session state just before the mutated seed.
    pub snapshot: Session,
}

impl CampaignResult {
    pub fn failure_count(&self, kind: FailureKind) -> usize {
        self.failures.get(&kind).copied().unwrap_or(0)
    }

    pub fn new_blocks(&self) -> CoverageBitmap {
        self.campaign_coverage.difference(&self.baseline_coverage)
    }
}

/// Outcome of one seed executed on a copy of `snapshot`.
pub fn execute_seed(snapshot: &Session, seed: &VmSeed) -> Result<(FailureKind, String, CoverageBitmap), FuzzError> {
    let mut s = start_dummy_vm(Some(snapshot));
    s.policy = ReadPolicy::LiveFallback;
    let (outcome, coverage) = s.replay_seed(seed, None)?;
    match outcome {
        SeedOutcome::Handled(report) => {
            let kind = detect_failure(&report.outcome, &s.dummy);
            let log = match report.outcome {
                HandlerOutcome::VmCrash(l) | HandlerOutcome::HypCrash(l) => l,
                _ => String::new(),
            };
            Ok((kind, log, coverage))
        }
        SeedOutcome::Aborted(d) => Err(FuzzError::MutantAborted(d)),
    }
}

/// Replays `trace` up to `tc.seed_index` from `start` (a fresh dummy VM when
/// `None`), then runs `tc.mutants` single-bit mutants of that seed, each on
/// its own copy of the reached state.
pub fn run_test_case(
    trace: &TraceFile,
    start: Option<&Session>,
    tc: &TestCase,
    parallel: bool,
) -> Result<CampaignResult, FuzzError> {
    if tc.seed_index >= trace.len() {
        return Err(FuzzError::SeedIndexOutOfRange { index: tc.seed_index, len: trace.len() });
    }
    if tc.mutants == 0 {
        return Err(FuzzError::NoMutants);
    }
    let mut session = start_dummy_vm(start);
    let mut prefix = TraceFile::new(trace.header.clone());
    prefix.records = trace.records[..tc.seed_index].to_vec();
    let (r, _) = replay_trace(&mut session, &prefix, false)?;
    if !r.outcome.is_completed() {
        let (exit, log) = match r.outcome {
            ReplayOutcome::VmCrash { exit, log } | ReplayOutcome::HypCrash { exit, log } => (exit, log),
            ReplayOutcome::Aborted { exit, diagnostic } => (exit, diagnostic),
            ReplayOutcome::Completed => unreachable!(),
        };
        return Err(FuzzError::CorruptPrefix { exit, log });
    }
    let s1 = session.dummy;
    let target = &trace.records[tc.seed_index].seed;
    let (_, _, baseline) = execute_seed(&s1, target)?;

    let mut rng = rng_from_seed(tc.rng_seed);
    let mutants: Vec<(VmSeed, Mutation)> = (0..tc.mutants)
        .map(|_| mutate_single_bitflip(target, tc.area, &mut rng))
        .collect::<Result<_, _>>()?;
    let run = |(seed, _): &(VmSeed, Mutation)| execute_seed(&s1, seed);
    let outcomes: Vec<_> = if parallel {
        mutants.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        mutants.iter().map(run).collect::<Result<_, _>>()?
    };

    let mut campaign_coverage = baseline;
    let mut failures = BTreeMap::new();
    let mut crash_artifacts: Vec<CrashArtifact> = Vec::new();
    for (i, ((kind, log, coverage), (seed, mutation))) in outcomes.into_iter().zip(mutants).enumerate() {
        campaign_coverage.union_with(&coverage);
        *failures.entry(kind).or_insert(0) += 1;
        if kind != FailureKind::None && !crash_artifacts.iter().any(|a| a.log == log) {
            crash_artifacts.push(CrashArtifact { mutant_index: i, mutation, kind, log, seed });
        }
    }
    Ok(CampaignResult {
        test_case: tc.clone(),
        workload: trace.header.workload.clone(),
        reason: target.reason(),
        baseline_coverage: baseline,
        campaign_coverage,
        failures,
        crash_artifacts,
        snapshot: s1,
    })
}

/// Percentage of new blocks over baseline blocks, per seed reason. Results
/// sharing a reason are pooled.
pub fn coverage_delta(results: &[CampaignResult]) -> Result<BTreeMap<ExitReason, f64>, FuzzError> {
    let mut pooled: BTreeMap<ExitReason, (CoverageBitmap, CoverageBitmap)> = BTreeMap::new();
    for r in results {
        let e = pooled.entry(r.reason).or_default();
        e.0.union_with(&r.baseline_coverage);
        e.1.union_with(&r.campaign_coverage);
    }
    pooled
        .into_iter()
        .map(|(reason, (base, camp))| {
            if base.is_empty() {
                return Err(FuzzError::EmptyBaseline);
            }
            let new = camp.difference(&base).count();
            Ok((reason, 100.0 * new as f64 / base.count() as f64))
        })
        .collect()
}

/// Index of the first seed of `reason` in `trace`.
pub fn first_of_reason(trace: &TraceFile, reason: ExitReason) -> Option<usize> {
    trace.reasons().position(|r| r == reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::Workload;
    use crate::recorder::{record_workload, RecordedRun};

    fn boot() -> RecordedRun {
        record_workload(Workload::OsBoot, 300, 11)
    }

    fn tc(trace: &TraceFile, reason: ExitReason, area: SeedArea, mutants: usize) -> TestCase {
        TestCase {
            trace_id: "t".into(),
            seed_index: first_of_reason(trace, reason).unwrap(),
            area,
            mutants,
            rng_seed: 5,
        }
    }

    #[test]
    fn campaign_covers_baseline_and_is_reproducible() {
        let run = boot();
        let t = tc(&run.trace, ExitReason::CrAccess, SeedArea::Vmcs, 500);
        let a = run_test_case(&run.trace, None, &t, false).unwrap();
        let b = run_test_case(&run.trace, None, &t, true).unwrap();
        assert!(a.campaign_coverage.is_superset_of(&a.baseline_coverage));
        assert_eq!(a.campaign_coverage, b.campaign_coverage);
        assert_eq!(a.failures, b.failures);
        assert_eq!(a.crash_artifacts, b.crash_artifacts);
        assert_eq!(a.failures.values().sum::<usize>(), 500);
        assert!(a.failure_count(FailureKind::VmCrash) > 0);
    }

    #[test]
    fn artifacts_replay_to_same_kind() {
        let run = boot();
        let t = tc(&run.trace, ExitReason::CrAccess, SeedArea::Vmcs, 2000);
        let r = run_test_case(&run.trace, None, &t, false).unwrap();
        assert!(!r.crash_artifacts.is_empty());
        for a in &r.crash_artifacts {
            let (kind, log, _) = execute_seed(&r.snapshot, &a.seed).unwrap();
            assert_eq!(kind, a.kind);
            assert_eq!(log, a.log);
        }
    }

    #[test]
    fn delta_zero_when_nothing_new() {
        let run = boot();
        let t = tc(&run.trace, ExitReason::CrAccess, SeedArea::Gpr, 1);
        let mut r = run_test_case(&run.trace, None, &t, false).unwrap();
        r.campaign_coverage = r.baseline_coverage;
        assert_eq!(coverage_delta(&[r.clone()]).unwrap()[&ExitReason::CrAccess], 0.0);
        r.baseline_coverage = CoverageBitmap::new();
        assert_eq!(coverage_delta(&[r]).unwrap_err(), FuzzError::EmptyBaseline);
    }

    #[test]
    fn bad_test_cases() {
        let run = boot();
        let mut t = tc(&run.trace, ExitReason::CrAccess, SeedArea::Gpr, 1);
        t.seed_index = 300;
        assert!(matches!(run_test_case(&run.trace, None, &t, false), Err(FuzzError::SeedIndexOutOfRange { .. })));
        t.seed_index = 0;
        t.mutants = 0;
        assert_eq!(run_test_case(&run.trace, None, &t, false).unwrap_err(), FuzzError::NoMutants);
    }

    #[test]
    fn mutant_order_does_not_matter() {
        let run = boot();
        let t = tc(&run.trace, ExitReason::IoInstruction, SeedArea::Vmcs, 200);
        let r = run_test_case(&run.trace, None, &t, false).unwrap();
        let target = &run.trace.records[t.seed_index].seed;
        let mut rng = rng_from_seed(t.rng_seed);
        let mutants: Vec<_> = (0..t.mutants)
            .map(|_| mutate_single_bitflip(target, t.area, &mut rng).unwrap().0)
            .collect();
        let mut failures = BTreeMap::new();
        let mut cov = r.baseline_coverage;
        for m in mutants.iter().rev() {
            let (kind, _, c) = execute_seed(&r.snapshot, m).unwrap();
            *failures.entry(kind).or_insert(0) += 1;
            cov.union_with(&c);
        }
        assert_eq!(failures, r.failures);
        assert_eq!(cov, r.campaign_coverage);
    }
}
