//! Guest-state checks performed on VM entry.
//!
//! The modeled subset: PG requires PE, RIP within the mode's address range,
//! no reserved CR0 bits, no NW without CD, CS consistency with the mode, and
//! a 16-bit GDTR limit. Checks run in that order; the first violation is the
//! one written to the crash log.

use super::cr0::{classify_cr0_mode, CpuMode, CR0_CD, CR0_NW, CR0_PE, CR0_PG, CR0_RESERVED};
use super::fields::Field;
use super::vmcs::{LaunchState, Vmcs};
use std::fmt;

pub const REAL_MODE_LIMIT: u64 = 1 << 20;
pub const PROTECTED_MODE_LIMIT: u64 = 1 << 32;
pub const GDTR_LIMIT_MAX: u64 = 0xFFFF;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EntryViolation {
    VmcsNotActive,
    Cr0PgWithoutPe,
    BadRipForMode { mode: CpuMode, rip: u64 },
    Cr0ReservedBits(u64),
    Cr0NwWithoutCd,
    RealModeCsOverflow { selector: u64, rip: u64 },
    CsRplMismatch { cs: u64, ss: u64 },
    GdtrLimitTooLarge(u64),
}

impl EntryViolation {
    /// The hypervisor log line for this violation.
    pub fn log_line(&self) -> String {
        match self {
            EntryViolation::VmcsNotActive => "VM entry with inactive VMCS".into(),
            EntryViolation::Cr0PgWithoutPe => "bad CR0: PG set without PE".into(),
            EntryViolation::BadRipForMode { mode, rip } => {
                format!("bad RIP for mode {} (rip={rip:#x})", mode.index())
            }
            EntryViolation::Cr0ReservedBits(bits) => format!("bad CR0: reserved bits {bits:#x}"),
            EntryViolation::Cr0NwWithoutCd => "bad CR0: NW set without CD".into(),
            EntryViolation::RealModeCsOverflow { selector, rip } => {
                format!("bad CS for real mode (cs={selector:#x}, rip={rip:#x})")
            }
            EntryViolation::CsRplMismatch { cs, ss } => {
                format!("bad CS: RPL differs from SS (cs={cs:#x}, ss={ss:#x})")
            }
            EntryViolation::GdtrLimitTooLarge(limit) => format!("bad GDTR limit {limit:#x}"),
        }
    }
}

impl fmt::Display for EntryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.log_line())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EntryCheck {
    Ok,
    Violations(Vec<EntryViolation>),
}

impl EntryCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, EntryCheck::Ok)
    }

    pub fn first(&self) -> Option<&EntryViolation> {
        match self {
            EntryCheck::Ok => None,
            EntryCheck::Violations(v) => v.first(),
        }
    }
}

pub fn vm_entry_check(vmcs: &Vmcs) -> EntryCheck {
    if vmcs.launch_state() == LaunchState::Inactive {
        return EntryCheck::Violations(vec![EntryViolation::VmcsNotActive]);
    }
    let cr0 = vmcs.read(Field::GuestCr0);
    let rip = vmcs.read(Field::GuestRip);
    let mode = classify_cr0_mode(cr0);
    let mut violations = Vec::new();

    if cr0 & CR0_PG != 0 && cr0 & CR0_PE == 0 {
        violations.push(EntryViolation::Cr0PgWithoutPe);
    }
    let rip_limit = if mode.is_real() { REAL_MODE_LIMIT } else { PROTECTED_MODE_LIMIT };
    if rip >= rip_limit {
        violations.push(EntryViolation::BadRipForMode { mode, rip });
    }
    if cr0 & CR0_RESERVED != 0 {
        violations.push(EntryViolation::Cr0ReservedBits(cr0 & CR0_RESERVED));
    }
    if cr0 & CR0_NW != 0 && cr0 & CR0_CD == 0 {
        violations.push(EntryViolation::Cr0NwWithoutCd);
    }
    let cs = vmcs.read(Field::GuestCsSelector);
    if mode.is_real() {
        let linear = cs.checked_mul(16).and_then(|base| base.checked_add(rip));
        if linear.is_none_or(|l| l >= REAL_MODE_LIMIT) {
            violations.push(EntryViolation::RealModeCsOverflow { selector: cs, rip });
        }
    } else {
        let ss = vmcs.read(Field::GuestSsSelector);
        if cs & 3 != ss & 3 {
            violations.push(EntryViolation::CsRplMismatch { cs, ss });
        }
    }
    let gdtr_limit = vmcs.read(Field::GuestGdtrLimit);
    if gdtr_limit > GDTR_LIMIT_MAX {
        violations.push(EntryViolation::GdtrLimitTooLarge(gdtr_limit));
    }

    if violations.is_empty() {
        EntryCheck::Ok
    } else {
        EntryCheck::Violations(violations)
    }
}
