//! Acceptance checks. Runs as a plain binary so every criterion prints its
//! PASS/FAIL line whether or not it fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use iris_core::format::FormatError;
use iris_core::fuzzer::{
    apply_mutation, coverage_delta, execute_seed, first_of_reason, hypcrash_mutation, run_test_case,
    CampaignResult, FailureKind, FuzzError, SeedArea, TestCase, DEFAULT_MUTANTS,
};
use iris_core::guest::Workload;
use iris_core::hypervisor::cost::{exit_cycles, record_overhead, RECORD_OVERHEAD_BP};
use iris_core::hypervisor::Session;
use iris_core::recorder::{
    attach_hooks, deserialize_trace, record_cycles, record_workload, seed_fragment, serialize_trace,
    RecordedRun, TraceHeader, VmSeed, TRACE_VERSION,
};
use iris_core::replayer::{
    compute_accuracy, cr0_write_trajectory, ideal_throughput, measure_throughput, replay_trace,
    start_dummy_vm, NoiseInjector, ReadPolicy, ReplayError, ReplayOutcome, ReplaySession,
    DEFAULT_NOISE_THRESHOLD,
};
use iris_core::vmx::{CpuMode, ExitReason, Field, GprFile, FIELD_COUNT};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

const EXITS: usize = 5000;
const RNG_SEED: u64 = 42;
const NOISE_P: f64 = 0.05;

type Check = Result<String, String>;
type Criterion = (&'static str, fn(&Fixtures) -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Fixtures {
    runs: BTreeMap<Workload, RecordedRun>,
    campaigns: OnceLock<Result<Vec<(CampaignResult, Duration)>, String>>,
}

impl Fixtures {
    fn new() -> Self {
        let runs = Workload::ALL.into_iter().map(|w| (w, record_workload(w, EXITS, RNG_SEED))).collect();
        Self { runs, campaigns: OnceLock::new() }
    }

    fn run(&self, w: Workload) -> &RecordedRun {
        &self.runs[&w]
    }

    fn boot_snapshot(&self) -> &Session {
        &self.run(Workload::OsBoot).session
    }

    /// Where a workload's replay starts: boot from power-on, the rest from
    /// the state the boot trace leaves behind.
    fn start(&self, w: Workload) -> Option<&Session> {
        (w != Workload::OsBoot).then(|| self.boot_snapshot())
    }

    fn dummy(&self, w: Workload) -> ReplaySession {
        start_dummy_vm(self.start(w))
    }

    /// One campaign per (workload, reason, area) cell, first seed of each reason.
    fn campaigns(&self) -> Result<&[(CampaignResult, Duration)], String> {
        self.campaigns
            .get_or_init(|| {
                let mut out = Vec::new();
                for w in Workload::ALL {
                    let run = self.run(w);
                    for (reason, _) in run.trace.reason_histogram() {
                        for area in SeedArea::ALL {
                            let tc = TestCase {
                                trace_id: w.name().into(),
                                seed_index: first_of_reason(&run.trace, reason).unwrap(),
                                area,
                                mutants: DEFAULT_MUTANTS,
                                rng_seed: RNG_SEED,
                            };
                            let t = Instant::now();
                            match run_test_case(&run.trace, self.start(w), &tc, true) {
                                Ok(r) => out.push((r, t.elapsed())),
                                Err(FuzzError::EmptyArea(_)) => {}
                                Err(e) => return Err(format!("{w}/{reason}/{}: {e}", area.name())),
                            }
                        }
                    }
                }
                Ok(out)
            })
            .as_ref()
            .map(Vec::as_slice)
            .map_err(Clone::clone)
    }
}

fn seed_size_law(_: &Fixtures) -> Check {
    let mut s = Session::power_on();
    let mut h = attach_hooks(&mut s, TraceHeader::new("OS_BOOT", "chacha8", 0), 1).map_err(|e| e.to_string())?;
    let (_, rec) = h.record_exit(&mut s, ExitReason::TripleFault);
    let reads = rec.seed.read_entries.len();
    let bytes = rec.seed.payload_bytes().len();
    ensure!(reads == 32, "triple-fault handler performed {reads} VMREADs, expected 32");
    ensure!(bytes == 470, "32-read seed payload is {bytes} bytes");

    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    let strategy = (1usize..=32, any::<[u64; 15]>(), prop::collection::vec((0..FIELD_COUNT, any::<u64>()), 32));
    runner
        .run(&strategy, |(k, regs, reads)| {
            let reads: Vec<(Field, u64)> = reads[..k].iter().map(|&(i, v)| (Field::all()[i], v)).collect();
            let seed = VmSeed::new(ExitReason::Cpuid, &GprFile::from_array(regs), &reads);
            prop_assert_eq!(seed.payload_bytes().len(), 10 * (15 + k));
            prop_assert_eq!(seed.payload_size(), 10 * (15 + k));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("recorded 32-read exit = {bytes} bytes; 256 cases of k in 1..=32 give 10*(15+k)"))
}

fn accuracy(fx: &Fixtures) -> Check {
    let mut parts = Vec::new();
    for w in [Workload::OsBoot, Workload::CpuBound, Workload::Idle] {
        let t = Instant::now();
        let run = fx.run(w);
        let (r, m) = replay_trace(&mut fx.dummy(w), &run.trace, true).map_err(|e| e.to_string())?;
        ensure!(r.outcome.is_completed(), "{w}: {:?}", r.outcome);
        let replayed = m.expect("metrics requested");
        let reasons: Vec<ExitReason> = run.trace.reasons().collect();
        let recorded = run.trace.metrics();
        let clean = compute_accuracy(&reasons, &recorded, &replayed, DEFAULT_NOISE_THRESHOLD).map_err(|e| e.to_string())?;
        ensure!(
            clean.coverage_fitting == 100.0 && clean.vmwrite_fitting == 100.0,
            "{w}: coverage {} vmwrite {}",
            clean.coverage_fitting,
            clean.vmwrite_fitting
        );
        let mut noisy = recorded.clone();
        NoiseInjector::new(NOISE_P, RNG_SEED).apply(&mut noisy);
        let n = compute_accuracy(&reasons, &noisy, &replayed, DEFAULT_NOISE_THRESHOLD).map_err(|e| e.to_string())?;
        let max = n.diffs_by_reason.values().map(|d| d.max_blocks).max().unwrap_or(0);
        ensure!(n.coverage_fitting >= 92.0, "{w}: noisy coverage fitting {:.2}", n.coverage_fitting);
        ensure!(n.all_diffs_are_noise() && max <= 30, "{w}: {} of {} diffs within 30 blocks", n.noise_filtered, n.diff_count);
        let secs = t.elapsed().as_secs_f64();
        ensure!(secs < 30.0, "{w}: took {secs:.1}s");
        parts.push(format!("{w} 100/100, noisy {:.2}% ({} diffs, max {max})", n.coverage_fitting, n.diff_count));
    }
    Ok(parts.join("; "))
}

fn mode_trajectory(fx: &Fixtures) -> Check {
    let run = fx.run(Workload::OsBoot);
    let prefix = [CpuMode::Mode1, CpuMode::Mode2, CpuMode::Mode3];
    let recorded = run.trace.metrics();
    let rec_traj = cr0_write_trajectory(CpuMode::Mode1, &recorded);
    ensure!(rec_traj.starts_with(&prefix), "recorded GUEST_CR0 writes: {rec_traj:?}");
    ensure!(run.summary.mode_trajectory.starts_with(&prefix), "recorded modes: {:?}", run.summary.mode_trajectory);

    let (r, m) = replay_trace(&mut fx.dummy(Workload::OsBoot), &run.trace, true).map_err(|e| e.to_string())?;
    let replayed = m.expect("metrics requested");
    let rep_traj = cr0_write_trajectory(CpuMode::Mode1, &replayed);
    ensure!(rep_traj.starts_with(&prefix), "replayed GUEST_CR0 writes: {rep_traj:?}");
    ensure!(r.mode_trajectory.starts_with(&prefix), "replayed modes: {:?}", r.mode_trajectory);
    ensure!(rep_traj == rec_traj, "trajectories diverge");
    let mut writes = 0;
    let mut mismatched = 0;
    for (a, b) in recorded.iter().zip(&replayed) {
        let x: Vec<u64> = a.writes_to(Field::GuestCr0).collect();
        let y: Vec<u64> = b.writes_to(Field::GuestCr0).collect();
        writes += x.len();
        mismatched += usize::from(x != y);
    }
    ensure!(mismatched == 0, "{mismatched} exits with mismatched GUEST_CR0 writes");
    Ok(format!("Mode1 -> Mode2 -> Mode3 in record and replay; {writes} GUEST_CR0 writes, 0 mismatched"))
}

fn boot_prefix(fx: &Fixtures) -> Check {
    let run = fx.run(Workload::CpuBound);
    let (fresh, _) = replay_trace(&mut start_dummy_vm(None), &run.trace, false).map_err(|e| e.to_string())?;
    let ReplayOutcome::VmCrash { exit, log } = &fresh.outcome else {
        return Err(format!("fresh replay: {:?}", fresh.outcome));
    };
    ensure!(log.contains("bad RIP for mode 0"), "fresh replay log: {log}");
    let (booted, _) =
        replay_trace(&mut start_dummy_vm(Some(fx.boot_snapshot())), &run.trace, false).map_err(|e| e.to_string())?;
    ensure!(booted.outcome.is_completed(), "replay from boot snapshot: {:?}", booted.outcome);
    ensure!(booted.exits == EXITS, "replayed {} exits", booted.exits);
    Ok(format!("fresh: vm-crash at exit {exit} \"{log}\"; from boot snapshot: {} exits completed", booted.exits))
}

fn efficiency(fx: &Fixtures) -> Check {
    let mut speedup = BTreeMap::new();
    for w in Workload::ALL {
        let run = fx.run(w);
        let t = measure_throughput(&mut fx.dummy(w), &run.trace).map_err(|e| e.to_string())?;
        let rec = record_cycles(&run.trace).ok_or("record time not reconstructible")?;
        ensure!(rec == run.summary.total_cycles(), "{w}: reconstructed {rec} vs measured {}", run.summary.total_cycles());
        ensure!(t.virtual_cycles < rec, "{w}: replay {} >= record {rec} cycles", t.virtual_cycles);
        speedup.insert(w, rec as f64 / t.virtual_cycles as f64);
    }
    let (idle, cpu, boot) = (speedup[&Workload::Idle], speedup[&Workload::CpuBound], speedup[&Workload::OsBoot]);
    ensure!(idle > cpu && cpu > boot, "speedups IDLE {idle:.2} CPU_BOUND {cpu:.2} OS_BOOT {boot:.2}");
    let all: Vec<String> = speedup.iter().map(|(w, s)| format!("{w} {s:.2}x")).collect();
    Ok(format!("replay < record for all; {}", all.join(", ")))
}

fn ideal(_: &Fixtures) -> Check {
    let t = ideal_throughput(EXITS);
    let want = EXITS as u64 * exit_cycles(ExitReason::PreemptionTimer);
    ensure!(t.virtual_cycles == want, "{} cycles, expected {want}", t.virtual_cycles);
    ensure!(t.exits_replayed == EXITS, "{} exits", t.exits_replayed);
    Ok(format!(
        "{} cycles for {EXITS} timer exits = {:.0} exits/s, {:.2}x the {:.0} exits/s reference",
        t.virtual_cycles,
        t.exits_per_second_equivalent,
        t.reference_ratio(),
        t.reference_exits_per_second
    ))
}

fn overhead(fx: &Fixtures) -> Check {
    let in_band = |oh: u64, c: u64| {
        let pct = 100.0 * oh as f64 / c as f64;
        ((1.02..=1.25).contains(&pct), pct)
    };
    ensure!((102..=125).contains(&RECORD_OVERHEAD_BP), "overhead constant {RECORD_OVERHEAD_BP} bp");
    let (mut lo, mut hi) = (f64::MAX, 0f64);
    for r in ExitReason::named().chain([ExitReason::PreemptionTimer]) {
        let c = exit_cycles(r);
        let (ok, pct) = in_band(record_overhead(c), c);
        ensure!(ok, "{r}: {pct:.3}%");
        lo = lo.min(pct);
        hi = hi.max(pct);
    }
    for (w, run) in &fx.runs {
        let mut sum = 0;
        for rec in &run.trace.records {
            let c = rec.metrics.cycles;
            let oh = record_overhead(c);
            let (ok, pct) = in_band(oh, c);
            ensure!(ok, "{w}: exit with {c} handler cycles has {pct:.3}% overhead");
            lo = lo.min(pct);
            hi = hi.max(pct);
            sum += oh;
        }
        ensure!(sum == run.summary.overhead_cycles, "{w}: charged {} vs modeled {sum}", run.summary.overhead_cycles);
    }
    Ok(format!("per-exit overhead {lo:.3}%..{hi:.3}% of handler cycles ({RECORD_OVERHEAD_BP} bp constant)"))
}

fn fuzz_positivity(fx: &Fixtures) -> Check {
    let campaigns = fx.campaigns()?;
    let mut cells = 0;
    let mut slowest = Duration::ZERO;
    for (r, took) in campaigns {
        let d = coverage_delta(std::slice::from_ref(r)).map_err(|e| e.to_string())?[&r.reason];
        ensure!(d > 0.0, "{}/{}/{}: delta {d}", r.workload, r.reason, r.test_case.area.name());
        ensure!(took.as_secs() < 300, "{}/{}: {took:?}", r.workload, r.reason);
        slowest = slowest.max(*took);
        cells += 1;
    }
    let mut rdtsc = Vec::new();
    for w in Workload::ALL {
        let cell = |area| {
            campaigns
                .iter()
                .find(|(r, _)| r.workload == w.name() && r.reason == ExitReason::Rdtsc && r.test_case.area == area)
                .map(|(r, _)| coverage_delta(std::slice::from_ref(r)).unwrap()[&ExitReason::Rdtsc])
        };
        if let (Some(v), Some(g)) = (cell(SeedArea::Vmcs), cell(SeedArea::Gpr)) {
            ensure!(v > g, "{w} RDTSC: VMCS {v:.1}% <= GPR {g:.1}%");
            rdtsc.push(format!("{w} {v:.0}%/{g:.0}%"));
        }
    }
    ensure!(!rdtsc.is_empty(), "no workload has RDTSC seeds");
    Ok(format!(
        "{cells} cells all > 0 at M={DEFAULT_MUTANTS}; RDTSC VMCS/GPR {}; slowest {:.1}s",
        rdtsc.join(", "),
        slowest.as_secs_f64()
    ))
}

/// Replays an artifact through its serialized forms only.
fn rerun_artifact(snapshot: &Session, header: &TraceHeader, seed: &VmSeed) -> Result<ReplayOutcome, String> {
    let snap = Session::from_snapshot_bytes(&snapshot.to_snapshot_bytes()).map_err(|e| e.to_string())?;
    let frag = deserialize_trace(&serialize_trace(&seed_fragment(header, seed))).map_err(|e| e.to_string())?;
    let mut s = start_dummy_vm(Some(&snap));
    s.policy = ReadPolicy::LiveFallback;
    let (r, _) = replay_trace(&mut s, &frag, false).map_err(|e| e.to_string())?;
    Ok(r.outcome)
}

fn crash_classes(fx: &Fixtures) -> Check {
    let campaigns = fx.campaigns()?;
    let cr_vmcs: Vec<&CampaignResult> = campaigns
        .iter()
        .map(|(r, _)| r)
        .filter(|r| r.reason == ExitReason::CrAccess && r.test_case.area == SeedArea::Vmcs)
        .collect();
    ensure!(!cr_vmcs.is_empty(), "no CR_ACCESS seeds");
    let vm_crashes: usize = cr_vmcs.iter().map(|r| r.failure_count(FailureKind::VmCrash)).sum();
    ensure!(cr_vmcs.iter().all(|r| r.failure_count(FailureKind::VmCrash) >= 1), "a CR_ACCESS/VMCS campaign found no VmCrash");

    let boot = fx.run(Workload::OsBoot);
    let r = cr_vmcs.iter().find(|r| r.workload == "OS_BOOT").ok_or("no OS_BOOT CR_ACCESS campaign")?;
    let seed = &boot.trace.records[r.test_case.seed_index].seed;
    let m = hypcrash_mutation(seed).ok_or("seed has no exit qualification")?;
    let (kind, log, _) = execute_seed(&r.snapshot, &apply_mutation(seed, m).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(kind == FailureKind::HypCrash, "designated bit gave {kind:?}: {log}");

    let mut artifacts = 0;
    for (r, _) in campaigns {
        let header = &fx.run(r.workload.parse().unwrap()).trace.header;
        for a in &r.crash_artifacts {
            let outcome = rerun_artifact(&r.snapshot, header, &a.seed)?;
            let (k, l) = match &outcome {
                ReplayOutcome::VmCrash { log, .. } => (FailureKind::VmCrash, log),
                ReplayOutcome::HypCrash { log, .. } => (FailureKind::HypCrash, log),
                o => return Err(format!("artifact {} of {}/{}: {o:?}", a.mutant_index, r.workload, r.reason)),
            };
            ensure!(k == a.kind && *l == a.log, "artifact {} of {}/{}: {k:?} {l}", a.mutant_index, r.workload, r.reason);
            artifacts += 1;
        }
    }
    Ok(format!(
        "{vm_crashes} VmCrash on CR_ACCESS/VMCS; designated bit -> HypCrash \"{log}\"; {artifacts} artifacts re-run identically"
    ))
}

fn format_round_trip(fx: &Fixtures) -> Check {
    let mut runner = TestRunner::new(Config { cases: 100, failure_persistence: None, ..Config::default() });
    runner
        .run(&common::trace(), |t| {
            let bytes = serialize_trace(&t);
            let back = deserialize_trace(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(serialize_trace(&back), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let good = serialize_trace(&fx.run(Workload::Idle).trace);
    let corrupt = |at: usize, v: u8| {
        let mut b = good.clone();
        b[at] ^= v;
        deserialize_trace(&b)
    };
    let magic = corrupt(0, 0x20);
    ensure!(matches!(magic, Err(FormatError::BadMagic { .. })), "magic: {magic:?}");
    let version = corrupt(4, 0x02);
    ensure!(version == Err(FormatError::UnsupportedVersion(TRACE_VERSION ^ 2)), "version: {version:?}");
    let hash = corrupt(9, 0x10);
    ensure!(matches!(hash, Err(FormatError::FieldTableMismatch { .. })), "hash: {hash:?}");

    let mut stale = fx.run(Workload::Idle).trace.clone();
    stale.header.field_table_hash ^= 1;
    let replay = replay_trace(&mut start_dummy_vm(Some(fx.boot_snapshot())), &stale, false).map(|_| ());
    ensure!(matches!(replay, Err(ReplayError::TraceFieldTable { .. })), "replay of stale trace: {replay:?}");
    Ok("100 random traces bit-exact; magic, version and field-table hash each rejected distinctly".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("seed size law", seed_size_law),
        ("record/replay accuracy", accuracy),
        ("mode trajectory fidelity", mode_trajectory),
        ("boot-prefix dependency", boot_prefix),
        ("efficiency ordering", efficiency),
        ("ideal throughput", ideal),
        ("recording overhead", overhead),
        ("fuzzer positivity and ordering", fuzz_positivity),
        ("crash classes", crash_classes),
        ("format round-trip", format_round_trip),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let t = Instant::now();
    let fx = Fixtures::new();
    println!("recorded {} workloads x {EXITS} exits in {:.1}s", fx.runs.len(), t.elapsed().as_secs_f64());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&fx))).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
