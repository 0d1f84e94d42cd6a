use std::sync::OnceLock;

use iris_core::guest::Workload;
use iris_core::hypervisor::{Session, ASYNC_POOL};
use iris_core::recorder::{record_cycles, record_workload, RecordedRun};
use iris_core::replayer::{
    compute_accuracy, measure_throughput, replay_trace, start_dummy_vm, NoiseInjector, ReadPolicy,
    ReplayOutcome, DEFAULT_NOISE_THRESHOLD,
};
use iris_core::vmx::{CpuMode, ExitReason};
use proptest::prelude::*;

fn boot_snapshot() -> &'static Session {
    static BOOT: OnceLock<Session> = OnceLock::new();
    BOOT.get_or_init(|| record_workload(Workload::OsBoot, 300, 77).session)
}

fn start_for(w: Workload) -> Option<&'static Session> {
    (w != Workload::OsBoot).then(boot_snapshot)
}

fn reasons(run: &RecordedRun) -> Vec<ExitReason> {
    run.trace.reasons().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn replay_reproduces_recorded_metrics(
        w in prop::sample::select(Workload::ALL.to_vec()),
        seed in any::<u64>(),
        n in 1usize..300,
    ) {
        let run = record_workload(w, n, seed);
        let mut s = start_dummy_vm(start_for(w));
        let (r, m) = replay_trace(&mut s, &run.trace, true).unwrap();
        prop_assert!(r.outcome.is_completed(), "{:?}", r.outcome);
        let m = m.unwrap();
        prop_assert_eq!(&m, &run.trace.metrics());
        let acc = compute_accuracy(&reasons(&run), &run.trace.metrics(), &m, DEFAULT_NOISE_THRESHOLD).unwrap();
        prop_assert_eq!(acc.coverage_fitting, 100.0);
        prop_assert_eq!(acc.vmwrite_fitting, 100.0);
        prop_assert_eq!(acc.diff_count, 0);
    }

    #[test]
    fn noise_only_adds_async_blocks(seed in any::<u64>(), p in 0.0f64..1.0) {
        let run = record_workload(Workload::Idle, 200, 4);
        let mut noisy = run.trace.metrics();
        let touched = NoiseInjector::new(p, seed).apply(&mut noisy);
        let mut changed = 0;
        for (clean, dirty) in run.trace.metrics().iter().zip(&noisy) {
            prop_assert!(dirty.coverage.is_superset_of(&clean.coverage));
            let extra = dirty.coverage.difference(&clean.coverage);
            prop_assert!(extra.blocks().all(|b| ASYNC_POOL.contains(&b)));
            prop_assert!(extra.count() <= 3);
            prop_assert_eq!(&dirty.write_entries, &clean.write_entries);
            changed += usize::from(extra.count() > 0);
        }
        prop_assert!(changed <= touched);
        let acc = compute_accuracy(&reasons(&run), &noisy, &run.trace.metrics(), DEFAULT_NOISE_THRESHOLD).unwrap();
        prop_assert!(acc.all_diffs_are_noise());
        prop_assert_eq!(acc.vmwrite_fitting, 100.0);
    }
}

#[test]
fn replay_is_deterministic() {
    let run = record_workload(Workload::MemBound, 500, 8);
    let go = || {
        let mut s = start_dummy_vm(Some(boot_snapshot()));
        let (r, m) = replay_trace(&mut s, &run.trace, true).unwrap();
        (r, m, s.dummy.to_snapshot_bytes())
    };
    assert_eq!(go(), go());
}

#[test]
fn live_fallback_agrees_with_strict_on_unmutated_traces() {
    let run = record_workload(Workload::IoBound, 400, 21);
    let mut strict = start_dummy_vm(Some(boot_snapshot()));
    let mut live = start_dummy_vm(Some(boot_snapshot()));
    live.policy = ReadPolicy::LiveFallback;
    let a = replay_trace(&mut strict, &run.trace, true).unwrap();
    let b = replay_trace(&mut live, &run.trace, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn boot_trace_ends_in_paged_protected_mode() {
    let run = record_workload(Workload::OsBoot, 1000, 1);
    assert_eq!(run.summary.mode_trajectory[..3], [CpuMode::Mode1, CpuMode::Mode2, CpuMode::Mode3]);
    assert_eq!(run.session.mode(), CpuMode::Mode3);
    let mut s = start_dummy_vm(None);
    let (r, _) = replay_trace(&mut s, &run.trace, false).unwrap();
    assert!(r.outcome.is_completed());
    assert_eq!(s.mode(), CpuMode::Mode3);
}

#[test]
fn non_boot_trace_needs_the_boot_prefix() {
    for w in [Workload::CpuBound, Workload::Idle, Workload::MemBound, Workload::IoBound] {
        let run = record_workload(w, 300, 6);
        let mut fresh = start_dummy_vm(None);
        let (r, _) = replay_trace(&mut fresh, &run.trace, false).unwrap();
        match &r.outcome {
            ReplayOutcome::VmCrash { exit: 0, log } => assert!(log.contains("bad RIP for mode 0"), "{log}"),
            o => panic!("{w}: {o:?}"),
        }
        let mut booted = start_dummy_vm(Some(boot_snapshot()));
        let (r, _) = replay_trace(&mut booted, &run.trace, false).unwrap();
        assert!(r.outcome.is_completed(), "{w}: {:?}", r.outcome);
    }
}

#[test]
fn replay_is_cheaper_than_recording() {
    for w in Workload::ALL {
        let run = record_workload(w, 800, 12);
        let mut s = start_dummy_vm(start_for(w));
        let t = measure_throughput(&mut s, &run.trace).unwrap();
        let speedup = t.speedup_vs_record.expect("generated trace");
        assert!(speedup > 1.0, "{w}: {speedup}");
        assert_eq!(record_cycles(&run.trace), Some(run.summary.total_cycles()), "{w}");
        assert_eq!((speedup * t.virtual_cycles as f64).round() as u64, run.summary.total_cycles(), "{w}");
    }
}
