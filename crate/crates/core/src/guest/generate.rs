//! Deterministic workload program generation.

use super::profile::{build_profile, Workload, WorkloadProfile};
use super::program::{ExitPayload, GuestOp, GuestProgram};
use crate::hypervisor::handlers::{
    CR4_OSXSAVE, CR4_PGE, CR4_TSD, CR4_VMXE, EPT_EXEC, EPT_GLA_VALID, EPT_READ, EPT_WRITE,
    FW_GDT_PORT, HYPERCALL_CONSOLE_IO, HYPERCALL_EVENT_CHANNEL_OP, HYPERCALL_HVM_OP,
    HYPERCALL_SCHED_OP, HYPERCALL_VERSION, INTERRUPTIBILITY_MOVSS, INTERRUPTIBILITY_STI,
    INTR_INFO_VALID, IOAPIC_BASE, LAPIC_BASE, MSR_EFER, MSR_HYPERCALL_PAGE, MSR_IA32_APIC_BASE,
    MSR_IA32_MISC_ENABLE, MSR_IA32_PAT, MSR_IA32_SYSENTER_CS, MSR_IA32_SYSENTER_EIP,
    MSR_IA32_SYSENTER_ESP, MSR_IA32_TSC, MSR_IA32_TSC_ADJUST, RFLAGS_IF, RFLAGS_TF, TIMER_VECTOR,
};
use crate::hypervisor::session::DEFAULT_PAT;
use crate::vmx::cr0::{CR0_AM, CR0_CD, CR0_ET, CR0_MP, CR0_NE, CR0_PE, CR0_PG, CR0_TS, CR0_WP};
use crate::vmx::{ExitReason, Field, GprId};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier of the program generator's RNG, stored in trace headers.
pub const RNG_ALGORITHM: &str = "chacha8";

pub const KERNEL_CS: u64 = 0x08;
pub const KERNEL_SS: u64 = 0x10;
pub const USER_CS: u64 = 0x1B;
pub const USER_SS: u64 = 0x23;

pub const GDT_BASE: u64 = 0x7E00;
pub const GDT_LIMIT: u64 = 0x27;

/// CR0 once the protected-mode prologue has run.
pub const BOOTED_CR0: u64 = CR0_PG | CR0_ET | CR0_PE;

const RFLAGS_FIXED: u64 = 0x2;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn real_mode_exit(rip: u64, cs: u64, ss: u64, len: u64) -> ExitPayload {
    ExitPayload::default()
        .state(Field::GuestRip, rip)
        .state(Field::GuestRsp, 0x7BF0)
        .state(Field::GuestRflags, RFLAGS_FIXED)
        .state(Field::GuestCsSelector, cs)
        .state(Field::GuestSsSelector, ss)
        .state(Field::GuestCr4, CR4_VMXE)
        .state(Field::GuestInterruptibilityInfo, 0)
        .state(Field::VmExitInstructionLen, len)
}

/// Six exits taking a freshly reset vCPU from real mode to paged protected
/// mode: interrupts held off, PIC masked, GDT handed over, PE set, segments
/// reloaded, PG set.
pub fn protected_mode_switch_program() -> GuestProgram {
    let q_io = |port: u64, size_enc: u64| (port << 16) | size_enc;
    let mov_to_cr0_from_rax = 0u64;
    let ops = vec![
        GuestOp::Sensitive(
            ExitReason::InterruptWindow,
            real_mode_exit(0x7C00, 0, 0, 1),
        ),
        GuestOp::Compute(20),
        GuestOp::Sensitive(
            ExitReason::IoInstruction,
            real_mode_exit(0x7C01, 0, 0, 2)
                .gpr(GprId::Rax, 0xFF)
                .gpr(GprId::Rdx, 0x21)
                .state(Field::ExitQualification, q_io(0x21, 0)),
        ),
        GuestOp::Compute(40),
        GuestOp::Sensitive(
            ExitReason::IoInstruction,
            real_mode_exit(0x7C10, 0, 0, 1)
                .gpr(GprId::Rax, GDT_BASE)
                .gpr(GprId::Rcx, GDT_LIMIT)
                .gpr(GprId::Rdx, u64::from(FW_GDT_PORT))
                .state(Field::ExitQualification, q_io(u64::from(FW_GDT_PORT), 3)),
        ),
        GuestOp::Compute(30),
        GuestOp::Sensitive(
            ExitReason::CrAccess,
            real_mode_exit(0x7C20, 0, 0, 3)
                .gpr(GprId::Rax, CR0_ET | CR0_PE)
                .state(Field::ExitQualification, mov_to_cr0_from_rax),
        ),
        GuestOp::Compute(10),
        GuestOp::Sensitive(
            ExitReason::CrAccess,
            real_mode_exit(0x7C28, 0, 0, 3)
                .gpr(GprId::Rax, CR0_ET | CR0_PE)
                .state(Field::ExitQualification, mov_to_cr0_from_rax),
        ),
        GuestOp::Compute(60),
        GuestOp::Sensitive(
            ExitReason::CrAccess,
            real_mode_exit(0x0010_0000, KERNEL_CS, KERNEL_SS, 3)
                .gpr(GprId::Rax, BOOTED_CR0)
                .state(Field::ExitQualification, mov_to_cr0_from_rax),
        ),
    ];
    GuestProgram { ops }
}

/// Number of exits in [`protected_mode_switch_program`].
pub const PROLOGUE_EXITS: usize = 6;

/// Generates `n_exits` exits for `profile`, deterministic in `rng_seed`.
/// Boot programs start with the protected-mode prologue; every other
/// workload assumes it has already run.
pub fn generate_program(profile: &WorkloadProfile, n_exits: usize, rng_seed: u64) -> GuestProgram {
    let mut ops = Vec::new();
    if n_exits == 0 {
        return GuestProgram { ops };
    }
    let mut remaining = n_exits;
    if profile.name == Workload::OsBoot {
        let prologue = protected_mode_switch_program();
        let mut taken = 0;
        for op in prologue.ops {
            if taken == n_exits {
                break;
            }
            if matches!(op, GuestOp::Sensitive(..)) {
                taken += 1;
            }
            ops.push(op);
        }
        remaining -= taken;
    }
    let mut gen = Generator::new(profile, rng_seed);
    for i in 0..remaining {
        let c = gen.rng.gen_range(
            profile.guest_cycles_between_exits.min..=profile.guest_cycles_between_exits.max,
        );
        ops.push(GuestOp::Compute(c));
        // Boot ends by reloading the kernel's CR0.
        let (reason, payload) = if gen.booting() && i + 1 == remaining {
            (ExitReason::CrAccess, gen.settle_cr0())
        } else {
            let reason = gen.pick_reason();
            (reason, gen.payload(reason))
        };
        ops.push(GuestOp::Sensitive(reason, payload));
    }
    ops.push(GuestOp::Halt);
    GuestProgram { ops }
}

/// Convenience wrapper over [`build_profile`] + [`generate_program`].
pub fn generate_workload(workload: Workload, n_exits: usize, rng_seed: u64) -> GuestProgram {
    generate_program(&build_profile(workload), n_exits, rng_seed)
}

struct Generator {
    rng: ChaCha8Rng,
    workload: Workload,
    reasons: Vec<ExitReason>,
    weights: WeightedIndex<f64>,
    /// CR0 as last written by the guest.
    cr0: u64,
    /// Guest-written CR4 bits (VMXE excluded).
    cr4: u64,
    cr3: u64,
    user: bool,
    kernel_only: bool,
}

impl Generator {
    fn new(profile: &WorkloadProfile, seed: u64) -> Self {
        let reasons = profile.reason_mix.iter().map(|(r, _)| *r).collect();
        let weights = WeightedIndex::new(profile.reason_mix.iter().map(|(_, p)| *p))
            .expect("profile weights are positive");
        Generator {
            rng: rng_from_seed(seed),
            workload: profile.name,
            reasons,
            weights,
            cr0: BOOTED_CR0,
            cr4: 0,
            cr3: 0,
            user: false,
            kernel_only: false,
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn booting(&self) -> bool {
        self.workload == Workload::OsBoot
    }

    fn pick_reason(&mut self) -> ExitReason {
        self.reasons[self.weights.sample(&mut self.rng)]
    }

    fn user_share(&self) -> f64 {
        match self.workload {
            Workload::OsBoot => 0.0,
            Workload::CpuBound | Workload::MemBound => 0.3,
            Workload::IoBound => 0.1,
            Workload::Idle => 0.05,
        }
    }

    fn cr4_at_exit(&mut self) -> u64 {
        if self.booting() {
            CR4_VMXE | self.cr4
        } else {
            let mut cr4 = CR4_VMXE | CR4_PGE;
            if self.chance(0.5) {
                cr4 |= CR4_OSXSAVE;
            }
            if self.chance(0.1) {
                cr4 |= CR4_TSD;
            }
            cr4
        }
    }

    /// Processor-saved state common to every exit.
    fn base(&mut self, len: u64) -> ExitPayload {
        self.user = !self.kernel_only && self.chance(self.user_share());
        let (rip, rsp, cs, ss) = if self.user {
            (
                0x0804_8000 + self.rng.gen_range(0..0x10_0000u64),
                0xBFFF_0000 + (self.rng.gen_range(0..0xF000u64) & !0xF),
                USER_CS,
                USER_SS,
            )
        } else {
            (
                0xC010_0000 + self.rng.gen_range(0..0x40_0000u64),
                0xC0F0_0000 + (self.rng.gen_range(0..0xF000u64) & !0xF),
                KERNEL_CS,
                KERNEL_SS,
            )
        };
        let mut rflags = RFLAGS_FIXED | RFLAGS_IF;
        let mut intr = 0;
        if !self.booting() {
            if self.chance(0.01) {
                rflags |= RFLAGS_TF;
            }
            if self.chance(0.03) {
                intr |= INTERRUPTIBILITY_STI;
            } else if self.chance(0.01) {
                intr |= INTERRUPTIBILITY_MOVSS;
            }
        }
        let cr4 = self.cr4_at_exit();
        ExitPayload::default()
            .state(Field::GuestRip, rip)
            .state(Field::GuestRsp, rsp)
            .state(Field::GuestRflags, rflags)
            .state(Field::GuestCsSelector, cs)
            .state(Field::GuestSsSelector, ss)
            .state(Field::GuestCr4, cr4)
            .state(Field::GuestInterruptibilityInfo, intr)
            .state(Field::VmExitInstructionLen, len)
    }

    fn maybe_upper(&mut self, value: u64, p: f64) -> u64 {
        if self.chance(p) {
            value | (u64::from(self.rng.gen::<u32>() | 1) << 32)
        } else {
            value
        }
    }

    fn payload(&mut self, reason: ExitReason) -> ExitPayload {
        match reason {
            ExitReason::Rdtsc => self.rdtsc(),
            ExitReason::Cpuid => self.cpuid(),
            ExitReason::Hlt => self.hlt(),
            ExitReason::ExternalInterrupt => self.external_interrupt(),
            ExitReason::InterruptWindow => self.interrupt_window(),
            ExitReason::Vmcall => self.vmcall(),
            ExitReason::CrAccess => self.cr_access(),
            ExitReason::IoInstruction => self.io(),
            ExitReason::Rdmsr => self.rdmsr(),
            ExitReason::Wrmsr => self.wrmsr(),
            ExitReason::EptViolation => self.ept(),
            other => self.base(0).state(Field::ExitQualification, u64::from(other.code())),
        }
    }

    fn rdtsc(&mut self) -> ExitPayload {
        let len = match self.rng.gen_range(0..100) {
            0..=84 => 2,
            85..=97 => 3,
            _ => 4,
        };
        let rax = self.rng.gen::<u32>() as u64;
        let rax = self.maybe_upper(rax, 0.1);
        let rdx = self.rng.gen::<u32>() as u64;
        let rdx = self.maybe_upper(rdx, 0.1);
        self.base(len).gpr(GprId::Rax, rax).gpr(GprId::Rdx, rdx)
    }

    fn cpuid(&mut self) -> ExitPayload {
        let (leaf, subleaf): (u64, u64) = match self.rng.gen_range(0..10) {
            0 => (0, 0),
            1 | 2 => (1, 0),
            3 => ([4, 7, 0xB, 0xD][self.rng.gen_range(0..4)], self.rng.gen_range(0..4)),
            4 => (self.rng.gen_range(2..=0xD), 0),
            5 | 6 => (0x4000_0000 + self.rng.gen_range(0..6), 0),
            7 | 8 => (0x8000_0000 + self.rng.gen_range(0..=8), 0),
            _ => (self.rng.gen_range(0x14..0x40), 0),
        };
        let rax = self.maybe_upper(leaf, 0.05);
        self.base(2).gpr(GprId::Rax, rax).gpr(GprId::Rcx, subleaf)
    }

    fn hlt(&mut self) -> ExitPayload {
        let poll = u64::from(self.chance(0.3));
        let mut p = self.base(1).gpr(GprId::Rax, poll);
        p.exit_state.retain(|(f, _)| {
            !matches!(f, Field::GuestRflags | Field::GuestInterruptibilityInfo)
        });
        let intr = if self.chance(0.5) { INTERRUPTIBILITY_STI } else { 0 };
        p.state(Field::GuestRflags, RFLAGS_FIXED | RFLAGS_IF)
            .state(Field::GuestInterruptibilityInfo, intr)
    }

    fn external_interrupt(&mut self) -> ExitPayload {
        let vector: u64 = match self.rng.gen_range(0..100) {
            0..=49 => u64::from(TIMER_VECTOR),
            50..=64 => self.rng.gen_range(0xF0..=0xFB),
            _ => self.rng.gen_range(0x30..=0xDF),
        };
        let info = if self.booting() || self.chance(0.98) {
            INTR_INFO_VALID | vector
        } else {
            vector
        };
        let hint = u64::from(self.chance(0.3));
        let rbx = (self.rng.gen::<u32>() as u64 & !1) | hint;
        let mut p = self.base(0).gpr(GprId::Rbx, rbx);
        if !self.booting() && self.chance(0.15) {
            p.exit_state.retain(|(f, _)| *f != Field::GuestRflags);
            p = p.state(Field::GuestRflags, RFLAGS_FIXED);
        }
        p.state(Field::VmExitIntrInfo, info)
    }

    fn interrupt_window(&mut self) -> ExitPayload {
        let hint = u64::from(self.chance(0.3));
        let mut p = self.base(0).gpr(GprId::Rcx, hint);
        p.exit_state.retain(|(f, _)| {
            !matches!(f, Field::GuestRflags | Field::GuestInterruptibilityInfo)
        });
        let rflags = if self.chance(0.1) { RFLAGS_FIXED } else { RFLAGS_FIXED | RFLAGS_IF };
        let intr = if self.chance(0.05) { INTERRUPTIBILITY_STI } else { 0 };
        p.state(Field::GuestRflags, rflags)
            .state(Field::GuestInterruptibilityInfo, intr)
    }

    fn vmcall(&mut self) -> ExitPayload {
        let (nr, arg1, count) = match self.rng.gen_range(0..12) {
            0 | 1 => (HYPERCALL_VERSION, self.rng.gen_range(0..3), 0),
            2..=4 => (HYPERCALL_SCHED_OP, self.rng.gen_range(0..3), 0),
            5 | 6 => (HYPERCALL_HVM_OP, self.rng.gen_range(0..20), 0),
            7 | 8 => (HYPERCALL_CONSOLE_IO, 0, self.rng.gen_range(1..0x1400)),
            9 | 10 => (HYPERCALL_EVENT_CHANNEL_OP, self.rng.gen_range(0..12), 0),
            _ => (self.rng.gen_range(40..48), 0, 0),
        };
        // Hypercalls are issued by the guest kernel.
        self.kernel_only = true;
        let p = self.base(3);
        self.kernel_only = false;
        p.gpr(GprId::Rax, nr)
            .gpr(GprId::Rbx, arg1)
            .gpr(GprId::Rcx, count)
    }

    /// Operand register for a CR move; RSP (4) is carried in the VMCS.
    fn cr_operand(&mut self, p: ExitPayload, value: u64) -> (ExitPayload, u64) {
        let reg = self.rng.gen_range(0..16u64);
        let p = if reg == 4 {
            let mut p = p;
            p.exit_state.retain(|(f, _)| *f != Field::GuestRsp);
            p.state(Field::GuestRsp, value)
        } else {
            let id = GprId::from_qualification(reg as u8).expect("not RSP");
            p.gpr(id, value)
        };
        (p, reg << 8)
    }

    fn settle_cr0(&mut self) -> ExitPayload {
        self.cr0 = BOOTED_CR0;
        let p = self.base(3);
        let (p, reg) = self.cr_operand(p, BOOTED_CR0);
        p.state(Field::ExitQualification, reg)
    }

    fn cr_access(&mut self) -> ExitPayload {
        let p = self.base(3);
        let (p, q) = match self.rng.gen_range(0..20) {
            0..=6 => {
                let toggle = [CR0_AM, CR0_TS, CR0_CD, CR0_WP, CR0_NE, CR0_MP][self.rng.gen_range(0..6)];
                self.cr0 ^= toggle;
                let (p, reg) = self.cr_operand(p, self.cr0);
                (p, reg)
            }
            7 | 8 => {
                let (p, reg) = self.cr_operand(p, 0);
                (p, reg | (1 << 4))
            }
            9..=12 => {
                let mut cr3 = self.rng.gen_range(0x10..0x4000u64) << 12;
                if self.chance(0.2) {
                    cr3 |= 0x18;
                }
                self.cr3 = cr3;
                let (p, reg) = self.cr_operand(p, cr3);
                (p, reg | 3)
            }
            13 => {
                let (p, reg) = self.cr_operand(p, 0);
                (p, reg | (1 << 4) | 3)
            }
            14 | 15 => {
                let bit = [CR4_PGE, CR4_OSXSAVE, 1 << 4, 1 << 9][self.rng.gen_range(0..4)];
                self.cr4 ^= bit;
                let (p, reg) = self.cr_operand(p, self.cr4);
                (p, reg | 4)
            }
            16 => {
                let (p, reg) = self.cr_operand(p, 0);
                (p, reg | (1 << 4) | 4)
            }
            17 | 18 => {
                self.cr0 &= !CR0_TS;
                (p, 2 << 4)
            }
            _ => {
                let mut msw = CR0_PE;
                if self.chance(0.5) {
                    msw |= CR0_MP;
                }
                if self.chance(0.5) {
                    msw |= CR0_TS;
                }
                self.cr0 = (self.cr0 & !(CR0_MP | CR0_TS)) | msw;
                (p, (3 << 4) | (msw << 16))
            }
        };
        p.state(Field::ExitQualification, q)
    }

    fn io(&mut self) -> ExitPayload {
        let len = self.rng.gen_range(1..=2);
        let p = self.base(len);
        let boot_ports: &[(u64, u64)] = &[
            (0x20, 0),
            (0x21, 0),
            (0xA0, 0),
            (0xA1, 0),
            (0x40, 0),
            (0x43, 0),
            (0x70, 0),
            (0x71, 0),
            (0x3F8, 0),
            (0x3FD, 0),
            (0xCF8, 3),
            (0xCFC, 3),
            (0xCFE, 1),
            (0x80, 0),
            (0x64, 0),
        ];
        let io_ports: &[(u64, u64)] = &[
            (0x3F8, 0),
            (0x3F9, 0),
            (0x3FD, 0),
            (0x40, 0),
            (0x43, 0),
            (0x70, 0),
            (0x71, 0),
            (0x20, 0),
            (0x21, 0),
            (0x1F0, 1),
            (0x1F7, 0),
            (0x80, 0),
        ];
        let ports = if self.booting() { boot_ports } else { io_ports };
        let (port, mut size_enc) = ports[self.rng.gen_range(0..ports.len())];
        if size_enc == 0 && self.chance(0.1) {
            size_enc = 1;
        }
        let input = self.chance(0.5);
        let string = self.chance(0.1);
        let rep = string && self.chance(0.5);
        let q = size_enc
            | (u64::from(input) << 3)
            | (u64::from(string) << 4)
            | (u64::from(rep) << 5)
            | (port << 16);
        let mut p = p.state(Field::ExitQualification, q).gpr(GprId::Rdx, port);
        if string {
            let size = [1u64, 2, 0, 4][size_enc as usize];
            let mut linear = 0xC800_0000 + self.rng.gen_range(0..0x10_0000u64);
            if size == 1 || self.chance(0.9) {
                linear &= !(size - 1);
            }
            let count = if self.chance(0.05) { 0 } else { self.rng.gen_range(1..0x800) };
            p = p
                .state(Field::GuestLinearAddress, linear)
                .state(Field::VmxInstructionInfo, self.rng.gen::<u32>() as u64 & 0x3F_FF80)
                .gpr(GprId::Rcx, count)
                .gpr(GprId::Rsi, linear)
                .gpr(GprId::Rdi, linear);
        } else {
            let mut rax = self.rng.gen::<u32>() as u64;
            if port == 0x20 || port == 0xA0 {
                rax = if self.chance(0.3) { 0x11 } else { 0x20 };
            } else if port == 0x21 || port == 0xA1 {
                rax = if self.chance(0.5) { 0xFF } else { rax & 0xFB };
            } else if port == 0xCF8 {
                rax = 0x8000_0000 | (rax & 0x00FF_FFFC);
                if self.chance(0.1) {
                    rax &= 0x7FFF_FFFF;
                }
            }
            let rax = self.maybe_upper(rax, 0.05);
            p = p.gpr(GprId::Rax, rax);
        }
        p
    }

    fn msr_index(&mut self, msr: u32) -> u64 {
        self.maybe_upper(u64::from(msr), 0.03)
    }

    fn rdmsr(&mut self) -> ExitPayload {
        let msrs = [
            MSR_IA32_TSC,
            MSR_IA32_APIC_BASE,
            MSR_IA32_SYSENTER_CS,
            MSR_IA32_SYSENTER_ESP,
            MSR_IA32_SYSENTER_EIP,
            MSR_IA32_PAT,
            MSR_IA32_MISC_ENABLE,
            MSR_EFER,
            0x802,
            0x123,
        ];
        let msr = msrs[self.rng.gen_range(0..msrs.len())];
        let rcx = self.msr_index(msr);
        self.base(2).gpr(GprId::Rcx, rcx)
    }

    fn wrmsr(&mut self) -> ExitPayload {
        let choice = self.rng.gen_range(0..12);
        let (msr, value): (u32, u64) = match choice {
            0 => (MSR_IA32_TSC_ADJUST, self.rng.gen_range(0..0x1_0000)),
            1 => {
                let enable = if self.chance(0.9) { 1 << 11 } else { 0 };
                (MSR_IA32_APIC_BASE, LAPIC_BASE | enable)
            }
            2 => (MSR_IA32_SYSENTER_CS, KERNEL_CS),
            3 => (MSR_IA32_SYSENTER_ESP, 0xC0F0_0000 + self.rng.gen_range(0..0x1000)),
            4 => (MSR_IA32_SYSENTER_EIP, 0xC010_0000 + self.rng.gen_range(0..0x10_0000)),
            5 | 6 => {
                let v = if self.chance(0.9) { DEFAULT_PAT } else { DEFAULT_PAT | 0x02 };
                (MSR_IA32_PAT, v)
            }
            7 => (MSR_IA32_MISC_ENABLE, 1),
            8 => {
                let v = if self.chance(0.1) { 1 << 8 } else { 1 << 11 };
                (MSR_EFER, v)
            }
            9 => (0x80B, 0),
            10 => (MSR_HYPERCALL_PAGE, 0x0020_0001),
            _ => (0x1234, self.rng.gen()),
        };
        let rcx = self.msr_index(msr);
        self.base(2)
            .gpr(GprId::Rcx, rcx)
            .gpr(GprId::Rax, value & 0xFFFF_FFFF)
            .gpr(GprId::Rdx, value >> 32)
    }

    fn ept(&mut self) -> ExitPayload {
        let (gpa, exec_ok, mmio) = match self.rng.gen_range(0..100) {
            0..=14 => (self.rng.gen_range(0..0xA_0000u64), true, false),
            15..=59 => (self.rng.gen_range(0x10_0000..0x4000_0000u64), true, false),
            60..=69 => (self.rng.gen_range(0xA_0000..0x10_0000u64), true, false),
            70..=79 => (IOAPIC_BASE + (self.rng.gen_range(0..4u64) << 4), false, true),
            80..=94 => {
                let off = match self.rng.gen_range(0..10) {
                    0..=4 => 0xB0,
                    5..=7 => 0x300,
                    _ => [0x20u64, 0x80, 0xF0, 0x380][self.rng.gen_range(0..4)],
                };
                (LAPIC_BASE + off, false, true)
            }
            _ => (0xE000_0000 + self.rng.gen_range(0..0x1000_0000u64), false, false),
        };
        let write = self.chance(0.5);
        let mut q = if write { EPT_WRITE } else { EPT_READ };
        if exec_ok && !write && self.chance(0.2) {
            q |= EPT_EXEC;
        }
        let gla = self.chance(0.8);
        let len = if mmio { self.rng.gen_range(2..=6) } else { 0 };
        let mut p = self.base(len);
        if gla {
            q |= EPT_GLA_VALID;
            p = p.state(Field::GuestLinearAddress, 0xC000_0000 | (gpa & 0x0FFF_FFFF));
        }
        let hint = u64::from(self.chance(0.3));
        p = p
            .state(Field::ExitQualification, q)
            .state(Field::GuestPhysicalAddress, gpa)
            .gpr(GprId::Rcx, hint);
        if mmio {
            let mut rax = self.rng.gen::<u32>() as u64;
            if gpa & 0xFFF == 0x300 && self.chance(0.3) {
                rax |= 0xC_0000;
            } else if gpa & 0xFFF == 0x300 {
                rax &= !0xC_0000;
            }
            let rax = self.maybe_upper(rax, 0.05);
            p = p.gpr(GprId::Rax, rax);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::state::run_program;
    use crate::hypervisor::Session;
    use crate::vmx::CpuMode;
    use std::collections::HashMap;

    fn counts(p: &GuestProgram) -> HashMap<ExitReason, usize> {
        let mut m = HashMap::new();
        for (r, _) in p.exits() {
            *m.entry(r).or_default() += 1;
        }
        m
    }

    #[test]
    fn empty_program() {
        for w in Workload::ALL {
            assert!(generate_workload(w, 0, 1).ops.is_empty());
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_workload(Workload::CpuBound, 500, 42);
        assert_eq!(a, generate_workload(Workload::CpuBound, 500, 42));
        assert_ne!(a, generate_workload(Workload::CpuBound, 500, 43));
        assert_eq!(a.exit_count(), 500);
    }

    #[test]
    fn cpu_bound_rdtsc_share() {
        let p = generate_workload(Workload::CpuBound, 5000, 42);
        let n = counts(&p)[&ExitReason::Rdtsc];
        assert!((3850..=4150).contains(&n), "{n}");
    }

    #[test]
    fn frequencies_track_the_mix() {
        for w in Workload::ALL {
            let profile = build_profile(w);
            let p = generate_program(&profile, 5000, 7);
            let c = counts(&p);
            for (r, prob) in &profile.reason_mix {
                let freq = *c.get(r).unwrap_or(&0) as f64 / 5000.0;
                assert!((freq - prob).abs() < 0.03, "{w} {r}: {freq} vs {prob}");
            }
        }
    }

    #[test]
    fn boot_begins_with_prologue() {
        let boot = generate_workload(Workload::OsBoot, 5000, 9);
        let prologue = protected_mode_switch_program();
        assert_eq!(&boot.ops[..prologue.ops.len()], &prologue.ops[..]);
        assert_eq!(boot.exit_count(), 5000);
        assert_eq!(generate_workload(Workload::OsBoot, 3, 9).exit_count(), 3);
    }

    #[test]
    fn prologue_sets_cr0_bit_zero_and_reaches_paging() {
        let p = protected_mode_switch_program();
        assert_eq!(p.exit_count(), PROLOGUE_EXITS);
        assert!(p.exits().any(|(r, payload)| r == ExitReason::CrAccess
            && payload.gprs.iter().any(|&(id, v)| id == GprId::Rax && v & 1 == 1)));
        let mut s = Session::power_on();
        let run = run_program(&mut s, &p);
        assert!(run.crash.is_none(), "{:?}", run.crash);
        assert_eq!(run.mode_trajectory, vec![CpuMode::Mode1, CpuMode::Mode2, CpuMode::Mode3]);
    }

    #[test]
    fn unmutated_workloads_run_clean() {
        for w in Workload::ALL {
            let mut s = Session::power_on();
            if w != Workload::OsBoot {
                run_program(&mut s, &protected_mode_switch_program());
            }
            let run = run_program(&mut s, &generate_workload(w, 3000, 11));
            assert!(run.crash.is_none(), "{w}: {:?}", run.crash);
            assert_eq!(run.exits, 3000);
        }
    }
}
