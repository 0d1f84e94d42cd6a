//! The session unit (VMCS, GPRs, hypervisor state), the exit dispatcher and
//! the `.irisnap` snapshot container.

use super::blocks::Block;
use super::context::{ExitCtx, ExitProbe, HResult, InterceptError, NoProbe};
use super::coverage::{CoverageBitmap, BITMAP_BYTES};
use super::cost;
use super::handlers::{self, *};
use super::state::{HandlerOutcome, HypState, VECTOR_GP};
use crate::format::{FormatError, Reader, Writer};
use crate::vmx::cr0::{CR0_ET, CR0_PE, CR0_PG};
use crate::vmx::{
    vm_entry_check, CpuMode, ExitReason, Field, GprFile, LaunchState, Vmcs, FIELD_COUNT, GPR_COUNT,
};

pub const PIN_BASED_EXT_INTR_EXITING: u64 = 1 << 0;
pub const PIN_BASED_NMI_EXITING: u64 = 1 << 3;
pub const PIN_BASED_PREEMPTION_TIMER: u64 = 1 << 6;
pub const SECONDARY_ENABLE_EPT: u64 = 1 << 1;

/// Bit 31 of EXIT_REASON: the exit was caused by a failed VM entry.
pub const EXIT_REASON_ENTRY_FAILURE: u64 = 1 << 31;

pub const RESET_RIP: u64 = 0x7C00;
pub const RESET_RFLAGS: u64 = 0x2;
pub const DEFAULT_PAT: u64 = 0x0007_0406_0007_0406;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"IRSN";
pub const SNAPSHOT_VERSION: u16 = 1;

/// Result of one handled exit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitReport {
    /// Reason the dispatcher decoded from EXIT_REASON.
    pub dispatched: ExitReason,
    pub outcome: HandlerOutcome,
    /// Virtual cycles spent in dispatcher and handler.
    pub cycles: u64,
}

/// One vCPU: VMCS, guest GPRs and hypervisor bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Session {
    pub vmcs: Vmcs,
    pub gprs: GprFile,
    pub hyp: HypState,
    /// Set while recording hooks are attached.
    pub(crate) recording: bool,
}

impl Default for Session {
    fn default() -> Self {
        Self::power_on()
    }
}

impl Session {
    /// A freshly created vCPU: VMCLEAR, field setup, VMPTRLD, VMLAUNCH.
    pub fn power_on() -> Self {
        let mut vmcs = Vmcs::new();
        vmcs.clear();
        let mut hyp = HypState::default();
        vcpu_initialise(&mut vmcs, &mut hyp);
        vmcs.load().expect("cleared VMCS loads");
        vmcs.launch().expect("cleared VMCS launches");
        Self { vmcs, gprs: GprFile::new(), hyp, recording: false }
    }

    /// A vCPU that runs no guest code: the preemption timer is armed at zero
    /// so every VM entry is followed immediately by another exit.
    pub fn dummy() -> Self {
        let mut s = Self::power_on();
        let pin = s.vmcs.read(Field::PinBasedVmExecControl);
        s.vmcs
            .write(Field::PinBasedVmExecControl, pin | PIN_BASED_PREEMPTION_TIMER)
            .expect("control field");
        s.vmcs
            .write(Field::VmxPreemptionTimerValue, 0)
            .expect("control field");
        s
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn mode(&self) -> CpuMode {
        self.hyp.vcpu_mode
    }

    /// Processor side of a VM exit: latch the reason and retire the event
    /// injected on the previous entry.
    pub fn raise_exit(&mut self, reason: ExitReason) {
        self.vmcs
            .store_exit_state(Field::ExitReason, u64::from(reason.code()));
        let info = self.vmcs.read(Field::VmEntryIntrInfo);
        self.vmcs
            .store_exit_state(Field::VmEntryIntrInfo, info & !INTR_INFO_VALID);
    }

    /// Raises `reason` and runs the hypervisor exit path under `probe`.
    pub fn handle_exit(
        &mut self,
        reason: ExitReason,
        probe: &mut dyn ExitProbe,
    ) -> Result<ExitReport, InterceptError> {
        self.raise_exit(reason);
        let report = {
            let mut ctx = ExitCtx::new(&mut self.vmcs, &mut self.gprs, &mut self.hyp, probe);
            dispatch(&mut ctx)?
        };
        self.hyp.tsc = self.hyp.tsc.wrapping_add(report.cycles);
        if let HandlerOutcome::VmCrash(log) | HandlerOutcome::HypCrash(log) = &report.outcome {
            self.hyp.crash_log.push(log.clone());
        }
        Ok(report)
    }

    /// [`Session::handle_exit`] without observers.
    pub fn handle_exit_unobserved(&mut self, reason: ExitReason) -> ExitReport {
        self.handle_exit(reason, &mut NoProbe)
            .expect("the pass-through probe never fails")
    }

    pub fn coverage_snapshot(&self) -> CoverageBitmap {
        self.hyp.coverage_snapshot()
    }

    pub fn coverage_reset(&mut self) {
        self.hyp.coverage_reset();
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(1024);
        w.bytes(&SNAPSHOT_MAGIC);
        w.u16(SNAPSHOT_VERSION);
        w.u64(crate::vmx::fields::field_table_hash());
        w.u8(self.vmcs.launch_state().to_byte());
        w.u8(FIELD_COUNT as u8);
        for v in self.vmcs.values() {
            w.u64(*v);
        }
        for v in self.gprs.as_array() {
            w.u64(*v);
        }
        let h = &self.hyp;
        w.u8(h.vcpu_mode.index());
        w.u64(h.cr0_guest_host_mask);
        w.u64(h.cr0_read_shadow_cache);
        w.u8(u8::from(h.halted));
        w.u64(h.tsc);
        match h.pending_vector {
            Some(v) => {
                w.u8(1);
                w.u8(v);
            }
            None => {
                w.u8(0);
                w.u8(0);
            }
        }
        w.u8(h.tpr);
        w.u32(h.pci_address);
        w.u64(h.populated_pages);
        w.u64(h.timer_ticks);
        w.bytes(&h.coverage.to_bytes());
        w.u32(h.crash_log.len() as u32);
        for line in &h.crash_log {
            w.str32(line);
        }
        w.buf
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Session, FormatError> {
        let mut r = Reader::new(bytes);
        r.preamble(SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
        r.field_table_hash()?;
        let launch = LaunchState::from_byte(r.u8()?)
            .ok_or_else(|| FormatError::Malformed("bad launch state".into()))?;
        if r.u8()? as usize != FIELD_COUNT {
            return Err(FormatError::Malformed("VMCS field count differs".into()));
        }
        let mut values = [0u64; FIELD_COUNT];
        for v in values.iter_mut() {
            *v = r.u64()?;
        }
        let mut regs = [0u64; GPR_COUNT];
        for v in regs.iter_mut() {
            *v = r.u64()?;
        }
        let vcpu_mode = CpuMode::from_index(r.u8()?)
            .ok_or_else(|| FormatError::Malformed("bad vCPU mode".into()))?;
        let cr0_guest_host_mask = r.u64()?;
        let cr0_read_shadow_cache = r.u64()?;
        let halted = r.u8()? != 0;
        let tsc = r.u64()?;
        let has_pending = r.u8()? != 0;
        let vector = r.u8()?;
        let tpr = r.u8()?;
        let pci_address = r.u32()?;
        let populated_pages = r.u64()?;
        let timer_ticks = r.u64()?;
        let coverage = CoverageBitmap::from_bytes(&r.array::<BITMAP_BYTES>()?)
            .ok_or_else(|| FormatError::Malformed("coverage bits beyond block table".into()))?;
        let n = r.u32()?;
        let mut crash_log = Vec::new();
        for _ in 0..n {
            crash_log.push(r.str32()?);
        }
        r.finish()?;
        Ok(Session {
            vmcs: Vmcs::from_parts(values, launch),
            gprs: GprFile::from_array(regs),
            hyp: HypState {
                vcpu_mode,
                cr0_guest_host_mask,
                cr0_read_shadow_cache,
                halted,
                tsc,
                crash_log,
                coverage,
                pending_vector: has_pending.then_some(vector),
                tpr,
                pci_address,
                populated_pages,
                timer_ticks,
            },
            recording: false,
        })
    }
}

/// Field setup performed when the vCPU is created.
fn vcpu_initialise(vmcs: &mut Vmcs, hyp: &mut HypState) {
    let mut set = |f: Field, v: u64| vmcs.write(f, v).expect("initialise writes read-write fields");
    set(Field::GuestCr0, CR0_ET);
    set(Field::GuestCr3, 0);
    set(Field::GuestCr4, CR4_VMXE);
    set(Field::GuestRip, RESET_RIP);
    set(Field::GuestRflags, RESET_RFLAGS);
    set(Field::GuestCsLimit, 0xFFFF);
    set(Field::GuestGdtrLimit, 0xFFFF);
    set(Field::GuestLdtrLimit, 0xFFFF);
    set(Field::GuestIa32Pat, DEFAULT_PAT);
    set(Field::HostCr0, 0x8005_0033);
    set(Field::HostCr3, 0x0010_0000);
    set(Field::HostCr4, 0x0000_2660);
    set(Field::HostRip, 0xFFFF_82D0_4020_0000);
    set(Field::HostRsp, 0xFFFF_8300_0000_7F00);
    set(Field::PinBasedVmExecControl, PIN_BASED_EXT_INTR_EXITING | PIN_BASED_NMI_EXITING);
    set(
        Field::CpuBasedVmExecControl,
        CPU_BASED_HLT_EXITING | CPU_BASED_RDTSC_EXITING | CPU_BASED_UNCOND_IO | (1 << 31),
    );
    set(Field::SecondaryVmExecControl, SECONDARY_ENABLE_EPT);
    set(Field::ExceptionBitmap, 1 << 18);
    set(Field::VmExitControls, 0x0003_6DFF);
    set(Field::VmEntryControls, 0x0000_11FF);
    set(Field::Cr0GuestHostMask, CR0_PE | CR0_PG);
    set(Field::Cr0ReadShadow, CR0_ET);
    set(Field::Cr4GuestHostMask, CR4_VMXE);
    set(Field::Cr4ReadShadow, 0);
    set(Field::TscOffset, 0);
    set(Field::VmxPreemptionTimerValue, 0);
    set(Field::MsrBitmap, 0x0020_0000);
    set(Field::EptPointer, 0x0030_001E);
    hyp.vcpu_mode = CpuMode::Mode1;
    hyp.cr0_guest_host_mask = CR0_PE | CR0_PG;
    hyp.cr0_read_shadow_cache = CR0_ET;
}

fn dispatch(ctx: &mut ExitCtx<'_>) -> HResult<ExitReport> {
    ctx.hit(Block::DispatchEntry);
    let raw = ctx.read(Field::ExitReason)?;
    ctx.rip = ctx.read(Field::GuestRip)?;
    if ctx.hyp.halted {
        ctx.hit(Block::DispatchWakeVcpu);
        ctx.hyp.halted = false;
    }
    let reason = ExitReason::from_code(raw as u16);
    let cycles = cost::exit_cycles(reason);
    let done = |outcome| ExitReport { dispatched: reason, outcome, cycles };

    if raw & EXIT_REASON_ENTRY_FAILURE != 0 {
        ctx.hit(Block::DispatchEntryFailure);
        ctx.hit(Block::CrashPath);
        return Ok(done(HandlerOutcome::VmCrash(format!(
            "VM entry failure (exit reason {raw:#x})"
        ))));
    }

    let outcome = match reason {
        ExitReason::ExternalInterrupt => handlers::external_interrupt(ctx)?,
        ExitReason::TripleFault => handlers::triple_fault(ctx)?,
        ExitReason::InterruptWindow => handlers::interrupt_window(ctx)?,
        ExitReason::Cpuid => handlers::cpuid(ctx)?,
        ExitReason::Hlt => handlers::hlt(ctx)?,
        ExitReason::Rdtsc => handlers::rdtsc(ctx)?,
        ExitReason::Vmcall => handlers::vmcall(ctx)?,
        ExitReason::CrAccess => handlers::cr_access(ctx)?,
        ExitReason::IoInstruction => handlers::io_instruction(ctx)?,
        ExitReason::Rdmsr => handlers::rdmsr(ctx)?,
        ExitReason::Wrmsr => handlers::wrmsr(ctx)?,
        ExitReason::EptViolation => handlers::ept_violation(ctx)?,
        ExitReason::PreemptionTimer => handlers::preemption_timer(ctx)?,
        ExitReason::Other(code) => {
            ctx.hit(Block::DispatchUnhandled);
            HandlerOutcome::HypCrash(format!("unhandled VM exit reason {code}"))
        }
    };

    let outcome = match outcome {
        HandlerOutcome::Resume | HandlerOutcome::InjectFault(_) => {
            if let HandlerOutcome::InjectFault(vector) = outcome {
                ctx.hit(Block::ResumeInjectEvent);
                let mut info = INTR_INFO_VALID | INTR_TYPE_HW_EXCEPTION | u64::from(vector);
                if vector == VECTOR_GP {
                    info |= INTR_DELIVER_ERROR_CODE;
                    ctx.write(Field::VmEntryExceptionErrorCode, 0);
                }
                ctx.write(Field::VmEntryIntrInfo, info);
            }
            ctx.hit(Block::ResumeEnter);
            match vm_entry_check(ctx.vmcs).first() {
                None => outcome,
                Some(violation) => {
                    ctx.hit(Block::ResumeEntryFailed);
                    HandlerOutcome::VmCrash(violation.log_line())
                }
            }
        }
        crash => crash,
    };
    if outcome.is_crash() {
        ctx.hit(Block::CrashPath);
    }
    Ok(done(outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmx::GprId;

    fn exit_with(s: &mut Session, reason: ExitReason, state: &[(Field, u64)]) -> ExitReport {
        for &(f, v) in state {
            s.vmcs.store_exit_state(f, v);
        }
        s.handle_exit_unobserved(reason)
    }

    #[test]
    fn power_on_state() {
        let s = Session::power_on();
        assert_eq!(s.vmcs.launch_state(), LaunchState::ActiveCurrentLaunched);
        assert_eq!(s.mode(), CpuMode::Mode1);
        assert!(vm_entry_check(&s.vmcs).is_ok());
        let d = Session::dummy();
        assert_eq!(d.vmcs.read(Field::VmxPreemptionTimerValue), 0);
        assert_ne!(d.vmcs.read(Field::PinBasedVmExecControl) & PIN_BASED_PREEMPTION_TIMER, 0);
    }

    #[test]
    fn rdtsc_splits_counter_with_offset() {
        let mut s = Session::power_on();
        s.hyp.tsc = 0x1_0000_0000;
        s.vmcs.write(Field::TscOffset, 5).unwrap();
        let r = exit_with(&mut s, ExitReason::Rdtsc, &[(Field::VmExitInstructionLen, 2)]);
        assert_eq!(r.outcome, HandlerOutcome::Resume);
        assert_eq!(s.gprs.get(GprId::Rax), 5);
        assert_eq!(s.gprs.get(GprId::Rdx), 1);
        assert_eq!(s.vmcs.read(Field::GuestRip), RESET_RIP + 2);
        assert_eq!(r.cycles, 3500);
        assert_eq!(s.hyp.tsc, 0x1_0000_0000 + 3500);
    }

    #[test]
    fn hlt_blocks_vcpu() {
        let mut s = Session::power_on();
        let r = exit_with(
            &mut s,
            ExitReason::Hlt,
            &[(Field::GuestRflags, RFLAGS_IF | 2), (Field::VmExitInstructionLen, 1)],
        );
        assert_eq!(r.outcome, HandlerOutcome::Resume);
        assert!(s.hyp.halted);
    }

    #[test]
    fn unhandled_reason_is_hyp_crash() {
        let mut s = Session::power_on();
        let r = s.handle_exit_unobserved(ExitReason::Other(63));
        assert!(matches!(r.outcome, HandlerOutcome::HypCrash(_)));
        assert_eq!(s.hyp.crash_log.len(), 1);
    }

    fn mov_to_cr0(s: &mut Session, value: u64) -> ExitReport {
        s.gprs.set(GprId::Rax, value);
        exit_with(
            s,
            ExitReason::CrAccess,
            &[(Field::ExitQualification, 0), (Field::VmExitInstructionLen, 3)],
        )
    }

    #[test]
    fn setting_pe_goes_through_the_shadow() {
        let mut s = Session::power_on();
        let r = mov_to_cr0(&mut s, CR0_ET | CR0_PE);
        assert_eq!(r.outcome, HandlerOutcome::Resume);
        assert_eq!(s.vmcs.read(Field::Cr0ReadShadow) & CR0_PE, CR0_PE);
        assert_eq!(s.mode(), CpuMode::Mode2);
        // mov from CR0 into RBX
        exit_with(
            &mut s,
            ExitReason::CrAccess,
            &[(Field::ExitQualification, 0x0310), (Field::VmExitInstructionLen, 3)],
        );
        assert_eq!(s.gprs.get(GprId::Rbx) & 1, 1);
    }

    #[test]
    fn pg_without_pe_faults_without_writing() {
        let mut s = Session::power_on();
        let before = s.vmcs.read(Field::GuestCr0);
        let r = mov_to_cr0(&mut s, CR0_PG | CR0_ET);
        assert_eq!(r.outcome, HandlerOutcome::InjectFault(VECTOR_GP));
        assert_eq!(s.vmcs.read(Field::GuestCr0), before);
        assert_ne!(s.vmcs.read(Field::VmEntryIntrInfo) & INTR_INFO_VALID, 0);
    }

    #[test]
    fn mask_hit_and_pass_through_cover_different_blocks() {
        let mut a = Session::power_on();
        mov_to_cr0(&mut a, CR0_ET | CR0_PE);
        let mut b = Session::power_on();
        mov_to_cr0(&mut b, CR0_ET | (1 << 1));
        assert_ne!(a.coverage_snapshot(), b.coverage_snapshot());
        assert!(a.coverage_snapshot().contains(Block::CrCr0MaskHit));
        assert!(b.coverage_snapshot().contains(Block::CrCr0PassThrough));
    }

    #[test]
    fn cr8_with_exiting_disabled_is_an_assertion() {
        let mut s = Session::power_on();
        let r = exit_with(
            &mut s,
            ExitReason::CrAccess,
            &[(Field::ExitQualification, 8), (Field::VmExitInstructionLen, 3)],
        );
        assert!(matches!(r.outcome, HandlerOutcome::HypCrash(_)));
    }

    #[test]
    fn preemption_timer_is_minimal() {
        let mut s = Session::dummy();
        let before = s.vmcs.clone();
        for _ in 0..5000 {
            let r = s.handle_exit_unobserved(ExitReason::PreemptionTimer);
            assert_eq!(r.outcome, HandlerOutcome::Resume);
        }
        assert_eq!(s.vmcs.read(Field::VmxPreemptionTimerValue), 0);
        assert_eq!(s.vmcs.read(Field::GuestRip), before.read(Field::GuestRip));
        let expected: CoverageBitmap = [
            Block::DispatchEntry,
            Block::TimerEntry,
            Block::TimerRearm,
            Block::ResumeEnter,
        ]
        .into_iter()
        .collect();
        assert_eq!(s.coverage_snapshot(), expected);
    }

    #[test]
    fn identical_exits_give_identical_coverage() {
        let run = || {
            let mut s = Session::power_on();
            s.coverage_reset();
            exit_with(&mut s, ExitReason::Cpuid, &[(Field::VmExitInstructionLen, 2)]);
            (s.coverage_snapshot(), s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = Session::power_on();
        mov_to_cr0(&mut s, CR0_ET | CR0_PE);
        s.hyp.pending_vector = Some(0x30);
        s.hyp.crash_log.push("x".into());
        let bytes = s.to_snapshot_bytes();
        assert_eq!(Session::from_snapshot_bytes(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Session::from_snapshot_bytes(&bad),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            Session::from_snapshot_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::TruncatedStream(_))
        ));
    }
}
