use super::program::{ExitPayload, GuestOp, GuestProgram};
use crate::hypervisor::{ExitProbe, ExitReport, InterceptError, Session};
use crate::vmx::{classify_cr0_mode, CpuMode, ExitReason, Field, GprFile};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepResult {
    Exit(ExitReason, ExitPayload),
    Completed,
}

/// The guest side of a session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuestState {
    pub gprs: GprFile,
    /// CR0 as the guest reads it (owned bits from the read shadow).
    pub cr0_view: u64,
    pub mode: CpuMode,
    pub pc: usize,
    pub virtual_cycles: u64,
    pub halted: bool,
}

impl GuestState {
    /// Guest state matching a session's current VMCS.
    pub fn attach(session: &Session) -> Self {
        let mut g = GuestState {
            gprs: session.gprs,
            cr0_view: 0,
            mode: CpuMode::Mode1,
            pc: 0,
            virtual_cycles: 0,
            halted: false,
        };
        g.sync_control_registers(session);
        g
    }

    fn sync_control_registers(&mut self, session: &Session) {
        let eff = session.vmcs.read(Field::GuestCr0);
        let mask = session.vmcs.read(Field::Cr0GuestHostMask);
        let shadow = session.vmcs.read(Field::Cr0ReadShadow);
        self.cr0_view = (eff & !mask) | (shadow & mask);
        self.mode = classify_cr0_mode(eff);
    }

    /// Runs compute ops up to the next sensitive op. The sensitive op stays
    /// current until [`GuestState::resume`].
    pub fn step(&mut self, program: &GuestProgram) -> StepResult {
        while let Some(op) = program.ops.get(self.pc) {
            match op {
                GuestOp::Compute(c) => {
                    self.virtual_cycles += c;
                    self.pc += 1;
                }
                GuestOp::Sensitive(reason, payload) => {
                    for &(id, v) in &payload.gprs {
                        self.gprs.set(id, v);
                    }
                    match reason {
                        ExitReason::Hlt => self.halted = true,
                        ExitReason::ExternalInterrupt => self.halted = false,
                        _ => {}
                    }
                    return StepResult::Exit(*reason, payload.clone());
                }
                GuestOp::Halt => return StepResult::Completed,
            }
        }
        StepResult::Completed
    }

    /// Moves past the current sensitive op once its exit has been handled.
    pub fn resume(&mut self, session: &Session) {
        self.gprs = session.gprs;
        self.sync_control_registers(session);
        self.pc += 1;
    }
}

/// Processor half of a VM exit: the guest's registers and the state saved
/// on exit are handed to the session.
pub fn load_exit_state(session: &mut Session, guest: &GuestState, payload: &ExitPayload) {
    session.gprs = guest.gprs;
    for &(field, value) in &payload.exit_state {
        session.vmcs.store_exit_state(field, value);
    }
}

/// Traps into the hypervisor and handles the exit under `probe`.
pub fn deliver_exit(
    session: &mut Session,
    guest: &GuestState,
    reason: ExitReason,
    payload: &ExitPayload,
    probe: &mut dyn ExitProbe,
) -> Result<ExitReport, InterceptError> {
    load_exit_state(session, guest, payload);
    session.handle_exit(reason, probe)
}

/// Outcome of running a whole program without observers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub exits: usize,
    pub mode_trajectory: Vec<CpuMode>,
    pub guest_cycles: u64,
    pub handler_cycles: u64,
    /// Set when an exit ended in a crash; the run stops there.
    pub crash: Option<ExitReport>,
}

/// Executes `program` against `session` until completion or the first crash.
pub fn run_program(session: &mut Session, program: &GuestProgram) -> RunSummary {
    let mut guest = GuestState::attach(session);
    let mut summary = RunSummary {
        exits: 0,
        mode_trajectory: vec![guest.mode],
        guest_cycles: 0,
        handler_cycles: 0,
        crash: None,
    };
    while let StepResult::Exit(reason, payload) = guest.step(program) {
        let report = deliver_exit(session, &guest, reason, &payload, &mut crate::hypervisor::NoProbe)
            .expect("the pass-through probe never fails");
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
    summary
}
