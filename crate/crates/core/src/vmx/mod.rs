//! VMX model: VMCS fields and lifecycle, guest registers, exit reasons, CR0
//! mode classification and VM-entry checks.

pub mod cr0;
pub mod entry_check;
pub mod exit_reason;
pub mod fields;
pub mod gpr;
pub mod vmcs;

pub use cr0::{classify_cr0_mode, CpuMode};
pub use entry_check::{vm_entry_check, EntryCheck, EntryViolation};
pub use exit_reason::{exit_reason_csv, ExitReason};
pub use fields::{field_table_csv, Access, Area, Field, VmcsFieldSpec, FIELD_COUNT, FIELD_TABLE};
pub use gpr::{GprFile, GprId, GPR_COUNT};
pub use vmcs::{LaunchState, Vmcs, VmxError};
