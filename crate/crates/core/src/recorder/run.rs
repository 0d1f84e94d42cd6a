use super::hooks::attach_hooks;
use super::trace::{TraceFile, TraceHeader};
use crate::guest::{
    generate_workload, load_exit_state, protected_mode_switch_program, run_program,
    GuestProgram, GuestState, StepResult, Workload, RNG_ALGORITHM,
};
use crate::hypervisor::{cost, ExitReport, Session};
use crate::vmx::CpuMode;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSummary {
    pub exits: usize,
    pub guest_cycles: u64,
    pub handler_cycles: u64,
    pub overhead_cycles: u64,
    /// Modes visited, starting with the mode at attach time.
    pub mode_trajectory: Vec<CpuMode>,
    pub crash: Option<ExitReport>,
}

impl RecordSummary {
    /// Virtual time of the recorded run: guest execution, handlers and hooks.
    pub fn total_cycles(&self) -> u64 {
        self.guest_cycles + self.handler_cycles + self.overhead_cycles
    }
}

#[derive(Clone, Debug)]
pub struct RecordedRun {
    pub trace: TraceFile,
    pub summary: RecordSummary,
    /// Session state after the last recorded exit.
    pub session: Session,
}

/// Session a workload starts from. Everything except the boot workload runs
/// on a vCPU that has already switched to protected mode; that switch is
/// not part of the recording.
pub fn starting_session(workload: Workload) -> Session {
    let mut s = Session::power_on();
    if workload != Workload::OsBoot {
        let run = run_program(&mut s, &protected_mode_switch_program());
        assert!(run.crash.is_none(), "protected-mode prologue crashed: {:?}", run.crash);
    }
    s
}

/// Records `program` on `session` until it completes or crashes.
pub fn record_program(
    session: &mut Session,
    program: &GuestProgram,
    header: TraceHeader,
) -> (TraceFile, RecordSummary) {
    let mut handle = attach_hooks(session, header, program.exit_count())
        .expect("fresh session has no hooks attached");
    let mut guest = GuestState::attach(session);
    let mut summary = RecordSummary {
        exits: 0,
        guest_cycles: 0,
        handler_cycles: 0,
        overhead_cycles: 0,
        mode_trajectory: vec![guest.mode],
        crash: None,
    };
    while let StepResult::Exit(reason, payload) = guest.step(program) {
        load_exit_state(session, &guest, &payload);
        let (report, _) = handle.record_exit(session, reason);
        summary.exits += 1;
        summary.handler_cycles += report.cycles;
        if report.outcome.is_crash() {
            summary.crash = Some(report);
            break;
        }
        guest.resume(session);
        if summary.mode_trajectory.last() != Some(&guest.mode) {
            summary.mode_trajectory.push(guest.mode);
        }
    }
    summary.guest_cycles = guest.virtual_cycles;
    summary.overhead_cycles = handle.overhead_cycles();
    (handle.detach(session), summary)
}

/// Generates and records `n_exits` exits of `workload`.
pub fn record_workload(workload: Workload, n_exits: usize, rng_seed: u64) -> RecordedRun {
    let mut session = starting_session(workload);
    let program = generate_workload(workload, n_exits, rng_seed);
    let header = TraceHeader::new(workload.name(), RNG_ALGORITHM, rng_seed);
    let (trace, summary) = record_program(&mut session, &program, header);
    RecordedRun { trace, summary, session }
}

/// Virtual time the recording of `trace` took, reconstructed by regenerating
/// its program from the header. `None` for traces of unknown workloads or
/// generators.
pub fn record_cycles(trace: &TraceFile) -> Option<u64> {
    if trace.header.rng_algorithm != RNG_ALGORITHM {
        return None;
    }
    let workload: Workload = trace.header.workload.parse().ok()?;
    let program = generate_workload(workload, trace.len(), trace.header.rng_seed);
    // Guest time up to the last recorded exit.
    let mut guest = 0u64;
    let mut exits = 0usize;
    for op in &program.ops {
        match op {
            crate::guest::GuestOp::Compute(c) => guest += c,
            crate::guest::GuestOp::Sensitive(..) => {
                exits += 1;
                if exits == trace.len() {
                    break;
                }
            }
            crate::guest::GuestOp::Halt => break,
        }
    }
    let handler = trace.handler_cycles();
    let overhead: u64 = trace
        .records
        .iter()
        .map(|r| cost::record_overhead(r.metrics.cycles))
        .sum();
    Some(guest + handler + overhead)
}
