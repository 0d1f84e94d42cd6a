//! Per-reason VM-exit handlers.
//!
//! Handlers read every VMCS value they branch on through [`ExitCtx::read`],
//! so the values a replayed seed supplies fully determine their control flow.

use super::blocks::Block;
use super::context::{ExitCtx, HResult};
use super::state::{HandlerOutcome, VECTOR_GP, VECTOR_UD};
use crate::vmx::cr0::{CR0_CD, CR0_EM, CR0_MP, CR0_NW, CR0_PE, CR0_PG, CR0_RESERVED, CR0_TS};
use crate::vmx::{classify_cr0_mode, Field, GprId};

pub const RFLAGS_TF: u64 = 1 << 8;
pub const RFLAGS_IF: u64 = 1 << 9;

pub const CR4_TSD: u64 = 1 << 2;
pub const CR4_PGE: u64 = 1 << 7;
pub const CR4_VMXE: u64 = 1 << 13;
pub const CR4_OSXSAVE: u64 = 1 << 18;
pub const CR4_DEFINED: u64 = 0x7F_FFFF & !(1 << 12) & !(1 << 15) & !(1 << 19);

pub const CPU_BASED_INTR_WINDOW: u64 = 1 << 2;
pub const CPU_BASED_HLT_EXITING: u64 = 1 << 7;
pub const CPU_BASED_RDTSC_EXITING: u64 = 1 << 12;
pub const CPU_BASED_CR8_LOAD_EXITING: u64 = 1 << 19;
pub const CPU_BASED_CR8_STORE_EXITING: u64 = 1 << 20;
pub const CPU_BASED_UNCOND_IO: u64 = 1 << 24;

pub const INTR_INFO_VALID: u64 = 1 << 31;
pub const INTR_TYPE_HW_EXCEPTION: u64 = 3 << 8;
pub const INTR_DELIVER_ERROR_CODE: u64 = 1 << 11;

pub const INTERRUPTIBILITY_STI: u64 = 1 << 0;
pub const INTERRUPTIBILITY_MOVSS: u64 = 1 << 1;

pub const PENDING_DBG_BS: u64 = 1 << 14;

pub const TIMER_VECTOR: u8 = 0xEF;
pub const TSC_AUX: u64 = 0x1;

/// Port through which the boot firmware hands the GDT location to the
/// hypervisor: RAX carries the base and RCX the limit.
pub const FW_GDT_PORT: u16 = 0x510;

pub const GUEST_RAM_TOP: u64 = 0x4000_0000;
pub const IOAPIC_BASE: u64 = 0xFEC0_0000;
pub const LAPIC_BASE: u64 = 0xFEE0_0000;

pub const HYPERCALL_VERSION: u64 = 17;
pub const HYPERCALL_CONSOLE_IO: u64 = 18;
pub const HYPERCALL_SCHED_OP: u64 = 29;
pub const HYPERCALL_EVENT_CHANNEL_OP: u64 = 32;
pub const HYPERCALL_HVM_OP: u64 = 34;
const HVM_OP_TABLE_LEN: u64 = 16;
const ENOSYS: u64 = (-38i64) as u64;
const EPERM: u64 = (-1i64) as u64;
const EINVAL: u64 = (-22i64) as u64;

pub const MSR_IA32_TSC: u32 = 0x10;
pub const MSR_IA32_APIC_BASE: u32 = 0x1B;
pub const MSR_IA32_TSC_ADJUST: u32 = 0x3B;
pub const MSR_IA32_SYSENTER_CS: u32 = 0x174;
pub const MSR_IA32_SYSENTER_ESP: u32 = 0x175;
pub const MSR_IA32_SYSENTER_EIP: u32 = 0x176;
pub const MSR_IA32_MISC_ENABLE: u32 = 0x1A0;
pub const MSR_IA32_PAT: u32 = 0x277;
pub const MSR_EFER: u32 = 0xC000_0080;
pub const MSR_HYPERCALL_PAGE: u32 = 0x4000_0000;
const EFER_LME: u64 = 1 << 8;
const APIC_BASE_ENABLE: u64 = 1 << 11;

/// Fields dumped when the guest triple-faults.
pub const TRIPLE_FAULT_DUMP: [Field; 30] = [
    Field::GuestCr0,
    Field::GuestCr3,
    Field::GuestCr4,
    Field::GuestRip,
    Field::GuestRsp,
    Field::GuestRflags,
    Field::GuestCsSelector,
    Field::GuestCsBase,
    Field::GuestCsLimit,
    Field::GuestDsSelector,
    Field::GuestDsBase,
    Field::GuestSsSelector,
    Field::GuestSsBase,
    Field::GuestGdtrBase,
    Field::GuestGdtrLimit,
    Field::GuestLdtrBase,
    Field::GuestLdtrLimit,
    Field::GuestInterruptibilityInfo,
    Field::GuestActivityState,
    Field::GuestPendingDbgExceptions,
    Field::GuestSysenterCs,
    Field::GuestSysenterEsp,
    Field::GuestSysenterEip,
    Field::GuestIa32Pat,
    Field::ExitQualification,
    Field::GuestLinearAddress,
    Field::GuestPhysicalAddress,
    Field::VmExitIntrInfo,
    Field::VmExitIntrErrorCode,
    Field::IdtVectoringInfo,
];

fn size_mask(bytes: u64) -> u64 {
    if bytes >= 8 {
        u64::MAX
    } else {
        (1u64 << (bytes * 8)) - 1
    }
}

/// Moves RIP past the exiting instruction and retires the interrupt shadow.
fn advance_rip(ctx: &mut ExitCtx<'_>, len: u64) -> HResult<()> {
    ctx.hit(Block::AdvanceRip);
    let rflags = ctx.rflags()?;
    let next = ctx.rip.wrapping_add(len);
    ctx.write(Field::GuestRip, next);
    if rflags & RFLAGS_TF != 0 {
        ctx.hit(Block::AdvanceSingleStep);
        ctx.write(Field::GuestPendingDbgExceptions, PENDING_DBG_BS);
    }
    let intr = ctx.read(Field::GuestInterruptibilityInfo)?;
    if intr & (INTERRUPTIBILITY_STI | INTERRUPTIBILITY_MOVSS) != 0 {
        ctx.hit(Block::AdvanceClearShadow);
        ctx.write(
            Field::GuestInterruptibilityInfo,
            intr & !(INTERRUPTIBILITY_STI | INTERRUPTIBILITY_MOVSS),
        );
    }
    Ok(())
}

fn advance_by_exit_length(ctx: &mut ExitCtx<'_>) -> HResult<()> {
    let len = ctx.read(Field::VmExitInstructionLen)?;
    advance_rip(ctx, len)
}

/// Current privilege level. Both selectors are read so the pair stays
/// consistent in the VMCS.
fn guest_cpl(ctx: &mut ExitCtx<'_>) -> HResult<u64> {
    let cs = ctx.read(Field::GuestCsSelector)?;
    ctx.read(Field::GuestSsSelector)?;
    Ok(cs & 3)
}

fn inject_external(ctx: &mut ExitCtx<'_>, vector: u8) {
    ctx.write(Field::VmEntryIntrInfo, INTR_INFO_VALID | u64::from(vector));
}

pub(crate) fn external_interrupt(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::ExtIntEntry);
    // Guest flagged itself idle before the interrupt arrived.
    if ctx.gpr(GprId::Rbx) & 1 != 0 {
        ctx.hit(Block::ExtIntIdleHint);
    } else {
        ctx.hit(Block::ExtIntBusy);
    }
    let info = ctx.read(Field::VmExitIntrInfo)?;
    if info & INTR_INFO_VALID == 0 {
        ctx.hit(Block::ExtIntSpurious);
        return Ok(HandlerOutcome::Resume);
    }
    let vector = (info & 0xFF) as u8;
    if vector < 0x20 {
        ctx.hit(Block::ExtIntBadVector);
        return Ok(HandlerOutcome::HypCrash(format!(
            "BUG: exception vector {vector:#x} delivered as external interrupt"
        )));
    }
    let forward = match vector {
        TIMER_VECTOR => {
            ctx.hit(Block::ExtIntTimer);
            ctx.hyp.timer_ticks += 1;
            true
        }
        0xF0..=0xFF => {
            ctx.hit(Block::ExtIntIpi);
            false
        }
        _ => {
            ctx.hit(Block::ExtIntDevice);
            true
        }
    };
    if forward {
        let rflags = ctx.rflags()?;
        let intr = ctx.read(Field::GuestInterruptibilityInfo)?;
        if rflags & RFLAGS_IF != 0 && intr & (INTERRUPTIBILITY_STI | INTERRUPTIBILITY_MOVSS) == 0 {
            ctx.hit(Block::ExtIntInject);
            inject_external(ctx, vector);
        } else {
            ctx.hit(Block::ExtIntDefer);
            ctx.hyp.pending_vector = Some(vector);
            let ctl = ctx.read(Field::CpuBasedVmExecControl)?;
            ctx.write(Field::CpuBasedVmExecControl, ctl | CPU_BASED_INTR_WINDOW);
        }
    }
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn triple_fault(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::TripleFaultEntry);
    for field in TRIPLE_FAULT_DUMP {
        ctx.read(field)?;
    }
    ctx.hit(Block::TripleFaultDump);
    Ok(HandlerOutcome::VmCrash("triple fault".into()))
}

pub(crate) fn interrupt_window(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::IntWinEntry);
    if ctx.gpr(GprId::Rcx) & 1 != 0 {
        ctx.hit(Block::IntWinHint);
    } else {
        ctx.hit(Block::IntWinNoHint);
    }
    let ctl = ctx.read(Field::CpuBasedVmExecControl)?;
    ctx.write(Field::CpuBasedVmExecControl, ctl & !CPU_BASED_INTR_WINDOW);
    let rflags = ctx.rflags()?;
    if rflags & RFLAGS_IF == 0 {
        // Guest cleared interrupts before the window opened; hold the event.
        ctx.hit(Block::IntWinSuppressed);
        return Ok(HandlerOutcome::Resume);
    }
    let intr = ctx.read(Field::GuestInterruptibilityInfo)?;
    if intr & (INTERRUPTIBILITY_STI | INTERRUPTIBILITY_MOVSS) != 0 {
        ctx.hit(Block::IntWinShadowed);
        ctx.write(Field::CpuBasedVmExecControl, ctl | CPU_BASED_INTR_WINDOW);
        return Ok(HandlerOutcome::Resume);
    }
    match ctx.hyp.pending_vector.take() {
        Some(vector) => {
            ctx.hit(Block::IntWinDeliver);
            inject_external(ctx, vector);
        }
        None => ctx.hit(Block::IntWinSpurious),
    }
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn cpuid(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::CpuidEntry);
    let rax = ctx.gpr(GprId::Rax);
    if rax >> 32 != 0 {
        ctx.hit(Block::CpuidUpperIgnored);
    }
    let leaf = rax as u32;
    let subleaf = ctx.gpr(GprId::Rcx) as u32;
    let (mut a, mut b, mut c, mut d) = (0u32, 0u32, 0u32, 0u32);
    match leaf {
        0 => {
            ctx.hit(Block::CpuidVendor);
            a = 0xD;
            b = u32::from_le_bytes(*b"Genu");
            d = u32::from_le_bytes(*b"ineI");
            c = u32::from_le_bytes(*b"ntel");
        }
        1 => {
            ctx.hit(Block::CpuidFeatures);
            a = 0x000906EA;
            c = 0x8000_0000 | (1 << 26);
            d = 0x178B_FBFF;
            let cr4 = ctx.read(Field::GuestCr4)?;
            if cr4 & CR4_OSXSAVE != 0 {
                ctx.hit(Block::CpuidOsxsave);
                c |= 1 << 27;
            }
        }
        4 | 7 | 0xB | 0xD => {
            ctx.hit(Block::CpuidSubleafLeaf);
            let limit = if leaf == 0xD { 3 } else { 2 };
            if subleaf == 0 {
                ctx.hit(Block::CpuidSubleafZero);
                a = leaf;
            } else if subleaf < limit {
                ctx.hit(Block::CpuidSubleafIndexed);
                a = subleaf;
            } else {
                ctx.hit(Block::CpuidSubleafInvalid);
            }
        }
        2..=0xD => {
            ctx.hit(Block::CpuidBasicOther);
            a = leaf;
        }
        0x4000_0000..=0x4000_00FF => {
            ctx.hit(Block::CpuidHypervisorLeaf);
            match leaf - 0x4000_0000 {
                0 => {
                    ctx.hit(Block::CpuidHypSignature);
                    a = 0x4000_0005;
                    b = u32::from_le_bytes(*b"Iris");
                    c = u32::from_le_bytes(*b"SimV");
                    d = u32::from_le_bytes(*b"MM\0\0");
                }
                1..=4 => {
                    ctx.hit(Block::CpuidHypFeatures);
                    a = 0x0004_0011;
                }
                _ => ctx.hit(Block::CpuidHypUnknown),
            }
        }
        0x8000_0000..=0x8000_0008 => {
            ctx.hit(Block::CpuidExtended);
            a = if leaf == 0x8000_0000 { 0x8000_0008 } else { 0 };
        }
        _ => {
            ctx.hit(Block::CpuidOutOfRange);
        }
    }
    ctx.set_gpr(GprId::Rax, u64::from(a));
    ctx.set_gpr(GprId::Rbx, u64::from(b));
    ctx.set_gpr(GprId::Rcx, u64::from(c));
    ctx.set_gpr(GprId::Rdx, u64::from(d));
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn hlt(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::HltEntry);
    let rflags = ctx.rflags()?;
    if rflags & RFLAGS_IF == 0 {
        ctx.hit(Block::HltInterruptsOff);
        return Ok(HandlerOutcome::VmCrash(
            "vcpu down: HLT with interrupts disabled".into(),
        ));
    }
    if ctx.hyp.pending_vector.is_some() {
        ctx.hit(Block::HltEventPending);
    } else {
        ctx.hit(Block::HltBlock);
        ctx.hyp.halted = true;
    }
    // Poll-before-block hint from the guest idle loop.
    if ctx.gpr(GprId::Rax) & 1 != 0 {
        ctx.hit(Block::HltPollHint);
    } else {
        ctx.hit(Block::HltNoPoll);
    }
    let intr = ctx.read(Field::GuestInterruptibilityInfo)?;
    if intr & INTERRUPTIBILITY_STI != 0 {
        // sti; hlt
        ctx.hit(Block::HltStiIdiom);
    }
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn rdtsc(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::RdtscEntry);
    if ctx.gpr(GprId::Rax) >> 32 != 0 {
        ctx.hit(Block::RdtscZeroExtendRax);
    }
    if ctx.gpr(GprId::Rdx) >> 32 != 0 {
        ctx.hit(Block::RdtscZeroExtendRdx);
    }
    let cr4 = ctx.read(Field::GuestCr4)?;
    if cr4 & CR4_TSD != 0 {
        ctx.hit(Block::RdtscTsdSet);
        if guest_cpl(ctx)? != 0 {
            ctx.hit(Block::RdtscTsdFault);
            return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
        }
    }
    let offset = ctx.read(Field::TscOffset)?;
    let tsc = if offset == 0 {
        ctx.hit(Block::RdtscNoOffset);
        ctx.hyp.tsc
    } else {
        ctx.hit(Block::RdtscApplyOffset);
        ctx.hyp.tsc.wrapping_add(offset)
    };
    let len = ctx.read(Field::VmExitInstructionLen)?;
    match len {
        2 => ctx.hit(Block::RdtscPlain),
        3 => {
            ctx.hit(Block::RdtscpAux);
            ctx.set_gpr(GprId::Rcx, TSC_AUX);
        }
        _ => {
            ctx.hit(Block::RdtscBadLength);
            return Ok(HandlerOutcome::InjectFault(VECTOR_UD));
        }
    }
    ctx.set_gpr(GprId::Rax, tsc & 0xFFFF_FFFF);
    ctx.set_gpr(GprId::Rdx, tsc >> 32);
    advance_rip(ctx, len)?;
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn vmcall(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::VmcallEntry);
    if guest_cpl(ctx)? != 0 {
        ctx.hit(Block::VmcallFromUser);
        ctx.set_gpr(GprId::Rax, EPERM);
        advance_by_exit_length(ctx)?;
        return Ok(HandlerOutcome::Resume);
    }
    let rax = ctx.gpr(GprId::Rax);
    if rax >> 32 != 0 {
        ctx.hit(Block::VmcallUpperIgnored);
    }
    let arg1 = ctx.gpr(GprId::Rbx);
    let result = match u64::from(rax as u32) {
        HYPERCALL_VERSION => {
            ctx.hit(Block::VmcallVersion);
            if arg1 == 0 {
                ctx.hit(Block::VmcallVersionNumber);
                0x0004_0011
            } else {
                ctx.hit(Block::VmcallVersionOther);
                0
            }
        }
        HYPERCALL_SCHED_OP => {
            ctx.hit(Block::VmcallSchedOp);
            match arg1 {
                0 => ctx.hit(Block::VmcallSchedYield),
                1 => {
                    ctx.hit(Block::VmcallSchedBlock);
                    ctx.hyp.halted = true;
                }
                _ => ctx.hit(Block::VmcallSchedOther),
            }
            0
        }
        HYPERCALL_HVM_OP => {
            ctx.hit(Block::VmcallHvmOp);
            if arg1 < HVM_OP_TABLE_LEN {
                ctx.hit(Block::VmcallHvmOpDispatch);
                0
            } else {
                ctx.hit(Block::VmcallHvmOpInvalid);
                EINVAL
            }
        }
        HYPERCALL_CONSOLE_IO => {
            ctx.hit(Block::VmcallConsoleIo);
            let count = ctx.gpr(GprId::Rcx);
            if count > 0x1000 {
                ctx.hit(Block::VmcallConsoleTruncate);
            }
            count.min(0x1000)
        }
        HYPERCALL_EVENT_CHANNEL_OP => {
            ctx.hit(Block::VmcallEventChannel);
            0
        }
        _ => {
            ctx.hit(Block::VmcallEnosys);
            ENOSYS
        }
    };
    ctx.set_gpr(GprId::Rax, result);
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

fn read_operand(ctx: &mut ExitCtx<'_>, reg: u8) -> HResult<u64> {
    match GprId::from_qualification(reg) {
        Some(id) => Ok(ctx.gpr(id)),
        None => {
            ctx.hit(Block::CrRspOperand);
            ctx.read(Field::GuestRsp)
        }
    }
}

fn write_operand(ctx: &mut ExitCtx<'_>, reg: u8, value: u64) {
    match GprId::from_qualification(reg) {
        Some(id) => ctx.set_gpr(id, value),
        None => {
            ctx.hit(Block::CrRspOperand);
            ctx.write(Field::GuestRsp, value);
        }
    }
}

/// CR0 as the guest sees it: owned bits come from the read shadow.
fn guest_view_cr0(ctx: &mut ExitCtx<'_>) -> HResult<u64> {
    let effective = ctx.read_cr0()?;
    let mask = ctx.read(Field::Cr0GuestHostMask)?;
    let shadow = ctx.read(Field::Cr0ReadShadow)?;
    Ok((effective & !mask) | (shadow & mask))
}

/// Emulated write of `value` to CR0 under the guest/host mask.
///
/// Owned bits go to the read shadow, the rest straight to the effective CR0;
/// owned PE/PG are then propagated from the shadow so the effective CR0
/// carries the guest's operating mode.
fn write_cr0(ctx: &mut ExitCtx<'_>, value: u64) -> HResult<HandlerOutcome> {
    ctx.hit(Block::CrCr0Write);
    let old = ctx.read_cr0()?;
    let mask = ctx.read(Field::Cr0GuestHostMask)?;
    let shadow = ctx.read(Field::Cr0ReadShadow)?;
    if value & CR0_RESERVED != 0 {
        ctx.hit(Block::CrCr0Reserved);
        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
    }
    if value & CR0_PG != 0 && value & CR0_PE == 0 {
        ctx.hit(Block::CrCr0PgNoPe);
        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
    }
    if value & CR0_NW != 0 && value & CR0_CD == 0 {
        ctx.hit(Block::CrCr0NwNoCd);
        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
    }
    if (value ^ shadow) & mask != 0 {
        ctx.hit(Block::CrCr0MaskHit);
    }
    if (value ^ old) & !mask != 0 {
        ctx.hit(Block::CrCr0PassThrough);
    }
    let new_shadow = (shadow & !mask) | (value & mask);
    let synced = mask & (CR0_PE | CR0_PG);
    let effective = (((old & mask) | (value & !mask)) & !synced) | (new_shadow & synced);
    ctx.write(Field::Cr0ReadShadow, new_shadow);
    ctx.write(Field::GuestCr0, effective);
    ctx.hyp.cr0_guest_host_mask = mask;
    ctx.hyp.cr0_read_shadow_cache = new_shadow;

    let old_mode = classify_cr0_mode(old);
    let new_mode = classify_cr0_mode(effective);
    if new_mode != old_mode {
        ctx.hit(Block::CrModeChange);
        if old_mode.is_real() && !new_mode.is_real() {
            ctx.hit(Block::CrEnterProtected);
        } else if !old_mode.is_real() && new_mode.is_real() {
            ctx.hit(Block::CrLeaveProtected);
        }
        if new_mode.has_paging() && !old_mode.has_paging() {
            ctx.hit(Block::CrPagingOn);
            let cr3 = ctx.read(Field::GuestCr3)?;
            if cr3 & 0xFFF != 0 {
                ctx.hit(Block::CrPagingCr3Unaligned);
            }
        } else if !new_mode.has_paging() && old_mode.has_paging() {
            ctx.hit(Block::CrPagingOff);
        }
    } else if !new_mode.is_real() {
        // CS still carries a real-mode selector: load the flat segments.
        let cs = ctx.read(Field::GuestCsSelector)?;
        ctx.read(Field::GuestSsSelector)?;
        if cs == 0 {
            ctx.hit(Block::CrSegmentSync);
            ctx.write(Field::GuestCsSelector, 0x08);
            ctx.write(Field::GuestCsBase, 0);
            ctx.write(Field::GuestCsLimit, 0xFFFF_FFFF);
            ctx.write(Field::GuestDsSelector, 0x10);
            ctx.write(Field::GuestDsBase, 0);
            ctx.write(Field::GuestSsSelector, 0x10);
            ctx.write(Field::GuestSsBase, 0);
        }
    }
    ctx.hyp.vcpu_mode = new_mode;
    Ok(HandlerOutcome::Resume)
}

fn check_cr8_exiting(ctx: &mut ExitCtx<'_>, bit: u64) -> HResult<Option<HandlerOutcome>> {
    ctx.hit(Block::CrCr8Access);
    let ctl = ctx.read(Field::CpuBasedVmExecControl)?;
    if ctl & bit == 0 {
        ctx.hit(Block::CrCr8Unexpected);
        return Ok(Some(HandlerOutcome::HypCrash(
            "BUG: CR8 access exit with CR8 exiting disabled".into(),
        )));
    }
    Ok(None)
}

pub(crate) fn cr_access(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::CrEntry);
    let q = ctx.read(Field::ExitQualification)?;
    let cr = (q & 0xF) as u8;
    let access = (q >> 4) & 3;
    let reg = ((q >> 8) & 0xF) as u8;
    if !matches!(cr, 0 | 3 | 4 | 8) {
        ctx.hit(Block::CrBadRegister);
        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
    }
    let outcome = match access {
        0 => {
            let value = read_operand(ctx, reg)?;
            match cr {
                0 => write_cr0(ctx, value)?,
                3 => {
                    ctx.hit(Block::CrMovToCr3);
                    if value >> 32 != 0 {
                        ctx.hit(Block::CrCr3Reserved);
                        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
                    }
                    let cr0 = ctx.read_cr0()?;
                    if cr0 & CR0_PG != 0 {
                        ctx.hit(Block::CrCr3Flush);
                    }
                    ctx.write(Field::GuestCr3, value);
                    HandlerOutcome::Resume
                }
                4 => {
                    ctx.hit(Block::CrMovToCr4);
                    if value & !CR4_DEFINED != 0 {
                        ctx.hit(Block::CrCr4Reserved);
                        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
                    }
                    let old = ctx.read(Field::GuestCr4)?;
                    let mask = ctx.read(Field::Cr4GuestHostMask)?;
                    if (value ^ old) & CR4_PGE != 0 {
                        ctx.hit(Block::CrCr4PgeFlush);
                    }
                    ctx.write(Field::Cr4ReadShadow, value & mask);
                    ctx.write(Field::GuestCr4, (old & mask) | (value & !mask));
                    HandlerOutcome::Resume
                }
                _ => {
                    if let Some(crash) = check_cr8_exiting(ctx, CPU_BASED_CR8_LOAD_EXITING)? {
                        return Ok(crash);
                    }
                    if value > 0xF {
                        ctx.hit(Block::CrCr8Invalid);
                        return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
                    }
                    ctx.hyp.tpr = value as u8;
                    HandlerOutcome::Resume
                }
            }
        }
        1 => {
            let value = match cr {
                0 => {
                    ctx.hit(Block::CrMovFromCr0);
                    guest_view_cr0(ctx)?
                }
                3 => {
                    ctx.hit(Block::CrMovFromCr3);
                    ctx.read(Field::GuestCr3)?
                }
                4 => {
                    ctx.hit(Block::CrMovFromCr4);
                    let eff = ctx.read(Field::GuestCr4)?;
                    let mask = ctx.read(Field::Cr4GuestHostMask)?;
                    let shadow = ctx.read(Field::Cr4ReadShadow)?;
                    (eff & !mask) | (shadow & mask)
                }
                _ => {
                    if let Some(crash) = check_cr8_exiting(ctx, CPU_BASED_CR8_STORE_EXITING)? {
                        return Ok(crash);
                    }
                    u64::from(ctx.hyp.tpr)
                }
            };
            write_operand(ctx, reg, value);
            HandlerOutcome::Resume
        }
        2 => {
            ctx.hit(Block::CrClts);
            let view = guest_view_cr0(ctx)?;
            write_cr0(ctx, view & !CR0_TS)?
        }
        _ => {
            ctx.hit(Block::CrLmsw);
            let source = (q >> 16) & 0xF;
            let view = guest_view_cr0(ctx)?;
            // LMSW can set PE but never clear it.
            let low = CR0_PE | CR0_MP | CR0_EM | CR0_TS;
            let value = (view & !low) | source | (view & CR0_PE);
            write_cr0(ctx, value)?
        }
    };
    if outcome == HandlerOutcome::Resume {
        advance_by_exit_length(ctx)?;
    }
    Ok(outcome)
}

fn io_port(ctx: &mut ExitCtx<'_>, port: u16, input: bool, value: u64) -> HResult<u64> {
    let result = match port {
        0x20 | 0xA0 => {
            if input {
                ctx.hit(Block::IoPicRead);
            } else if value & 0x10 != 0 {
                ctx.hit(Block::IoPicInit);
            } else {
                ctx.hit(Block::IoPicOcw);
            }
            0
        }
        0x21 | 0xA1 => {
            if input {
                ctx.hit(Block::IoPicRead);
            } else if value & 0xFF == 0xFF {
                ctx.hit(Block::IoPicMaskAll);
            } else {
                ctx.hit(Block::IoPicMaskPartial);
            }
            0xFF
        }
        0x40..=0x43 => {
            ctx.hit(Block::IoPit);
            0
        }
        0x70 | 0x71 => {
            ctx.hit(Block::IoRtc);
            0x26
        }
        0x3F8..=0x3FF => {
            ctx.hit(Block::IoSerial);
            if !input && port == 0x3F8 {
                ctx.hit(Block::IoSerialTx);
            }
            0x60
        }
        0xCF8 => {
            ctx.hit(Block::IoPciAddress);
            if !input {
                ctx.hyp.pci_address = value as u32;
            }
            u64::from(ctx.hyp.pci_address)
        }
        0xCFC..=0xCFF => {
            ctx.hit(Block::IoPciData);
            if ctx.hyp.pci_address & 0x8000_0000 == 0 {
                ctx.hit(Block::IoPciDisabled);
            }
            u64::MAX
        }
        FW_GDT_PORT => {
            ctx.hit(Block::IoFwGdt);
            if !input {
                let base = ctx.gpr(GprId::Rax);
                let limit = ctx.gpr(GprId::Rcx) & 0xFFFF_FFFF;
                ctx.write(Field::GuestGdtrBase, base);
                ctx.write(Field::GuestGdtrLimit, limit);
            }
            0
        }
        _ => {
            ctx.hit(Block::IoUnclaimed);
            u64::MAX
        }
    };
    Ok(result)
}

pub(crate) fn io_instruction(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::IoEntry);
    let q = ctx.read(Field::ExitQualification)?;
    let size = match q & 7 {
        0 => 1,
        1 => 2,
        3 => 4,
        enc => {
            ctx.hit(Block::IoBadSize);
            return Ok(HandlerOutcome::HypCrash(format!(
                "BUG: invalid I/O access size encoding {enc}"
            )));
        }
    };
    let input = q & (1 << 3) != 0;
    let string = q & (1 << 4) != 0;
    let rep = q & (1 << 5) != 0;
    let immediate = q & (1 << 6) != 0;
    let port = ((q >> 16) & 0xFFFF) as u16;
    if !immediate && ctx.gpr(GprId::Rdx) & 0xFFFF != u64::from(port) {
        // DX disagrees with the decoded port; the qualification wins.
        ctx.hit(Block::IoPortMismatch);
    }
    let mask = size_mask(size);

    if string {
        ctx.hit(Block::IoString);
        let linear = ctx.read(Field::GuestLinearAddress)?;
        ctx.read(Field::VmxInstructionInfo)?;
        if linear & (size - 1) != 0 {
            ctx.hit(Block::IoUnaligned);
        }
        let count = if rep {
            ctx.hit(Block::IoRep);
            ctx.gpr(GprId::Rcx)
        } else {
            1
        };
        if count == 0 {
            ctx.hit(Block::IoRepZero);
        }
        // Elements that fit before the page boundary are handled this exit.
        let room = (0x1000 - (linear & 0xFFF)) / size;
        let done = count.min(room.max(1));
        let index = if input { GprId::Rdi } else { GprId::Rsi };
        let advanced = ctx.gpr(index).wrapping_add(done * size);
        ctx.set_gpr(index, advanced);
        if rep {
            ctx.set_gpr(GprId::Rcx, count - done);
        }
    } else {
        let rax = ctx.gpr(GprId::Rax);
        let result = io_port(ctx, port, input, rax & mask)?;
        if input {
            if rax & mask != 0 {
                ctx.hit(Block::IoInMerge);
            }
            ctx.set_gpr(GprId::Rax, (rax & !mask) | (result & mask));
        } else if rax & !mask != 0 {
            ctx.hit(Block::IoOutTruncate);
        }
    }
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

fn msr_index(ctx: &mut ExitCtx<'_>, upper_block: Block) -> u32 {
    let rcx = ctx.gpr(GprId::Rcx);
    if rcx >> 32 != 0 {
        ctx.hit(upper_block);
    }
    rcx as u32
}

pub(crate) fn rdmsr(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::RdmsrEntry);
    let msr = msr_index(ctx, Block::RdmsrUpperIgnored);
    let value = match msr {
        MSR_IA32_TSC => {
            ctx.hit(Block::RdmsrTsc);
            let offset = ctx.read(Field::TscOffset)?;
            ctx.hyp.tsc.wrapping_add(offset)
        }
        MSR_IA32_APIC_BASE => {
            ctx.hit(Block::RdmsrApicBase);
            LAPIC_BASE | APIC_BASE_ENABLE | (1 << 8)
        }
        MSR_IA32_SYSENTER_CS => {
            ctx.hit(Block::RdmsrSysenter);
            ctx.read(Field::GuestSysenterCs)?
        }
        MSR_IA32_SYSENTER_ESP => {
            ctx.hit(Block::RdmsrSysenter);
            ctx.read(Field::GuestSysenterEsp)?
        }
        MSR_IA32_SYSENTER_EIP => {
            ctx.hit(Block::RdmsrSysenter);
            ctx.read(Field::GuestSysenterEip)?
        }
        MSR_IA32_PAT => {
            ctx.hit(Block::RdmsrPat);
            ctx.read(Field::GuestIa32Pat)?
        }
        MSR_IA32_MISC_ENABLE => {
            ctx.hit(Block::RdmsrMiscEnable);
            1
        }
        MSR_EFER => {
            ctx.hit(Block::RdmsrEfer);
            0
        }
        0x800..=0x8FF => {
            ctx.hit(Block::RdmsrX2apic);
            return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
        }
        _ => {
            ctx.hit(Block::RdmsrUnknown);
            return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
        }
    };
    ctx.set_gpr(GprId::Rax, value & 0xFFFF_FFFF);
    ctx.set_gpr(GprId::Rdx, value >> 32);
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

fn pat_valid(value: u64) -> bool {
    value
        .to_le_bytes()
        .iter()
        .all(|t| matches!(t, 0 | 1 | 4 | 5 | 6 | 7))
}

pub(crate) fn wrmsr(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::WrmsrEntry);
    let msr = msr_index(ctx, Block::WrmsrUpperIgnored);
    let value = (ctx.gpr(GprId::Rdx) << 32) | (ctx.gpr(GprId::Rax) & 0xFFFF_FFFF);
    match msr {
        MSR_IA32_TSC_ADJUST => {
            ctx.hit(Block::WrmsrTscAdjust);
            ctx.write(Field::TscOffset, value);
        }
        MSR_IA32_APIC_BASE => {
            ctx.hit(Block::WrmsrApicBase);
            if value & APIC_BASE_ENABLE == 0 {
                ctx.hit(Block::WrmsrApicDisable);
            }
        }
        MSR_IA32_SYSENTER_CS => {
            ctx.hit(Block::WrmsrSysenter);
            ctx.write(Field::GuestSysenterCs, value);
        }
        MSR_IA32_SYSENTER_ESP => {
            ctx.hit(Block::WrmsrSysenter);
            ctx.write(Field::GuestSysenterEsp, value);
        }
        MSR_IA32_SYSENTER_EIP => {
            ctx.hit(Block::WrmsrSysenter);
            ctx.write(Field::GuestSysenterEip, value);
        }
        MSR_IA32_PAT => {
            ctx.hit(Block::WrmsrPat);
            if !pat_valid(value) {
                ctx.hit(Block::WrmsrPatInvalid);
                return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
            }
            ctx.write(Field::GuestIa32Pat, value);
        }
        MSR_IA32_MISC_ENABLE => ctx.hit(Block::WrmsrMiscEnable),
        MSR_EFER => {
            ctx.hit(Block::WrmsrEfer);
            if value & EFER_LME != 0 {
                // Long mode is not offered to guests.
                ctx.hit(Block::WrmsrEferLongMode);
                return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
            }
        }
        0x800..=0x8FF => {
            ctx.hit(Block::WrmsrX2apic);
            return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
        }
        MSR_HYPERCALL_PAGE => ctx.hit(Block::WrmsrHypercallPage),
        _ => {
            ctx.hit(Block::WrmsrUnknown);
            return Ok(HandlerOutcome::InjectFault(VECTOR_GP));
        }
    }
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

pub const EPT_READ: u64 = 1 << 0;
pub const EPT_WRITE: u64 = 1 << 1;
pub const EPT_EXEC: u64 = 1 << 2;
pub const EPT_GLA_VALID: u64 = 1 << 7;

fn mmio_access(ctx: &mut ExitCtx<'_>, write: bool) -> u64 {
    let rax = ctx.gpr(GprId::Rax);
    if write {
        ctx.hit(Block::EptMmioWrite);
        if rax >> 32 != 0 {
            ctx.hit(Block::EptMmioWide);
        }
        rax
    } else {
        ctx.hit(Block::EptMmioRead);
        0
    }
}

pub(crate) fn ept_violation(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::EptEntry);
    let q = ctx.read(Field::ExitQualification)?;
    let gpa = ctx.read(Field::GuestPhysicalAddress)?;
    if q & EPT_GLA_VALID != 0 {
        ctx.hit(Block::EptLinearValid);
        ctx.read(Field::GuestLinearAddress)?;
    }
    let write = q & EPT_WRITE != 0;
    let exec = q & EPT_EXEC != 0;
    // Guest hint that neighbouring pages will be touched too.
    let bulk = ctx.gpr(GprId::Rcx) & 1 != 0;
    if bulk {
        ctx.hit(Block::EptBulkHint);
    } else {
        ctx.hit(Block::EptSingleHint);
    }
    match gpa {
        0..0xA_0000 | 0x10_0000..GUEST_RAM_TOP => {
            // Demand-populate and restart the instruction.
            ctx.hit(Block::EptRamPopulate);
            ctx.hyp.populated_pages += 1;
            if exec {
                ctx.hit(Block::EptRamExec);
            }
            if bulk {
                ctx.hyp.populated_pages += 15;
            }
            return Ok(HandlerOutcome::Resume);
        }
        0xA_0000..0x10_0000 => {
            ctx.hit(Block::EptLegacyRegion);
            if write {
                ctx.hit(Block::EptRomWrite);
            }
        }
        IOAPIC_BASE..0xFEC0_1000 => {
            ctx.hit(Block::EptIoapic);
            let data = mmio_access(ctx, write);
            if write {
                ctx.set_gpr(GprId::Rax, data);
            } else {
                ctx.set_gpr(GprId::Rax, 0x0017_0011);
            }
        }
        LAPIC_BASE..0xFEE0_1000 => {
            ctx.hit(Block::EptLapic);
            let data = mmio_access(ctx, write);
            match gpa & 0xFF0 {
                0xB0 => ctx.hit(Block::EptLapicEoi),
                0x300 => {
                    ctx.hit(Block::EptLapicIcr);
                    if data & 0xC_0000 != 0 {
                        ctx.hit(Block::EptLapicBroadcast);
                    }
                }
                _ => ctx.hit(Block::EptLapicOther),
            }
        }
        _ => {
            ctx.hit(Block::EptUnmapped);
            if exec {
                ctx.hit(Block::EptUnmappedExec);
                return Ok(HandlerOutcome::VmCrash(format!(
                    "EPT violation: instruction fetch from unmapped gfn {:#x}",
                    gpa >> 12
                )));
            }
        }
    }
    advance_by_exit_length(ctx)?;
    Ok(HandlerOutcome::Resume)
}

pub(crate) fn preemption_timer(ctx: &mut ExitCtx<'_>) -> HResult<HandlerOutcome> {
    ctx.hit(Block::TimerEntry);
    ctx.write(Field::VmxPreemptionTimerValue, 0);
    ctx.hit(Block::TimerRearm);
    Ok(HandlerOutcome::Resume)
}
