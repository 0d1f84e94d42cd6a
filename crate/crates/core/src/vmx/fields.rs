//! VMCS field table.
//!
//! Every field is addressed by a one-byte compact encoding. The encoding space
//! holds 147 slots (0..=146); the fields below occupy a contiguous prefix of
//! it and the remaining slots are unassigned.

use std::fmt;

/// Number of slots in the compact encoding space.
pub const ENCODING_SPACE: u16 = 147;

/// The four VMCS areas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Area {
    GuestState,
    HostState,
    Control,
    ExitInfo,
}

impl Area {
    pub fn name(self) -> &'static str {
        match self {
            Area::GuestState => "GuestState",
            Area::HostState => "HostState",
            Area::Control => "Control",
            Area::ExitInfo => "ExitInfo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Access {
    ReadWrite,
    ReadOnly,
}

impl Access {
    pub fn name(self) -> &'static str {
        match self {
            Access::ReadWrite => "ReadWrite",
            Access::ReadOnly => "ReadOnly",
        }
    }
}

/// One row of the field table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VmcsFieldSpec {
    pub compact_encoding: u8,
    pub name: &'static str,
    pub area: Area,
    pub access: Access,
}

macro_rules! vmcs_fields {
    ($($variant:ident = $enc:literal, $name:literal, $area:ident;)*) => {
        /// A VMCS field, identified by its compact encoding.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Field {
            $($variant = $enc,)*
        }

        /// The normative field table, ordered by compact encoding.
        pub const FIELD_TABLE: &[VmcsFieldSpec] = &[
            $(VmcsFieldSpec {
                compact_encoding: $enc,
                name: $name,
                area: Area::$area,
                access: access_for(Area::$area),
            },)*
        ];

        const ALL_FIELDS: &[Field] = &[$(Field::$variant,)*];
    };
}

const fn access_for(area: Area) -> Access {
    match area {
        Area::ExitInfo => Access::ReadOnly,
        _ => Access::ReadWrite,
    }
}

vmcs_fields! {
    GuestCr0 = 0, "GUEST_CR0", GuestState;
    GuestCr3 = 1, "GUEST_CR3", GuestState;
    GuestCr4 = 2, "GUEST_CR4", GuestState;
    GuestRip = 3, "GUEST_RIP", GuestState;
    GuestRsp = 4, "GUEST_RSP", GuestState;
    GuestRflags = 5, "GUEST_RFLAGS", GuestState;
    GuestCsSelector = 6, "GUEST_CS_SELECTOR", GuestState;
    GuestCsBase = 7, "GUEST_CS_BASE", GuestState;
    GuestCsLimit = 8, "GUEST_CS_LIMIT", GuestState;
    GuestDsSelector = 9, "GUEST_DS_SELECTOR", GuestState;
    GuestDsBase = 10, "GUEST_DS_BASE", GuestState;
    GuestSsSelector = 11, "GUEST_SS_SELECTOR", GuestState;
    GuestSsBase = 12, "GUEST_SS_BASE", GuestState;
    GuestGdtrBase = 13, "GUEST_GDTR_BASE", GuestState;
    GuestGdtrLimit = 14, "GUEST_GDTR_LIMIT", GuestState;
    GuestLdtrBase = 15, "GUEST_LDTR_BASE", GuestState;
    GuestLdtrLimit = 16, "GUEST_LDTR_LIMIT", GuestState;
    GuestInterruptibilityInfo = 17, "GUEST_INTERRUPTIBILITY_INFO", GuestState;
    GuestActivityState = 18, "GUEST_ACTIVITY_STATE", GuestState;
    GuestPendingDbgExceptions = 19, "GUEST_PENDING_DBG_EXCEPTIONS", GuestState;
    GuestSysenterCs = 20, "GUEST_SYSENTER_CS", GuestState;
    GuestSysenterEsp = 21, "GUEST_SYSENTER_ESP", GuestState;
    GuestSysenterEip = 22, "GUEST_SYSENTER_EIP", GuestState;
    GuestIa32Pat = 23, "GUEST_IA32_PAT", GuestState;
    HostCr0 = 24, "HOST_CR0", HostState;
    HostCr3 = 25, "HOST_CR3", HostState;
    HostCr4 = 26, "HOST_CR4", HostState;
    HostRip = 27, "HOST_RIP", HostState;
    HostRsp = 28, "HOST_RSP", HostState;
    PinBasedVmExecControl = 29, "PIN_BASED_VM_EXEC_CONTROL", Control;
    CpuBasedVmExecControl = 30, "CPU_BASED_VM_EXEC_CONTROL", Control;
    SecondaryVmExecControl = 31, "SECONDARY_VM_EXEC_CONTROL", Control;
    ExceptionBitmap = 32, "EXCEPTION_BITMAP", Control;
    VmExitControls = 33, "VM_EXIT_CONTROLS", Control;
    VmEntryControls = 34, "VM_ENTRY_CONTROLS", Control;
    VmEntryIntrInfo = 35, "VM_ENTRY_INTR_INFO", Control;
    VmEntryExceptionErrorCode = 36, "VM_ENTRY_EXCEPTION_ERROR_CODE", Control;
    VmEntryInstructionLen = 37, "VM_ENTRY_INSTRUCTION_LEN", Control;
    Cr0GuestHostMask = 38, "CR0_GUEST_HOST_MASK", Control;
    Cr0ReadShadow = 39, "CR0_READ_SHADOW", Control;
    Cr4GuestHostMask = 40, "CR4_GUEST_HOST_MASK", Control;
    Cr4ReadShadow = 41, "CR4_READ_SHADOW", Control;
    TscOffset = 42, "TSC_OFFSET", Control;
    VmxPreemptionTimerValue = 43, "VMX_PREEMPTION_TIMER_VALUE", Control;
    MsrBitmap = 44, "MSR_BITMAP", Control;
    EptPointer = 45, "EPT_POINTER", Control;
    ExitReason = 46, "EXIT_REASON", ExitInfo;
    ExitQualification = 47, "EXIT_QUALIFICATION", ExitInfo;
    GuestLinearAddress = 48, "GUEST_LINEAR_ADDRESS", ExitInfo;
    GuestPhysicalAddress = 49, "GUEST_PHYSICAL_ADDRESS", ExitInfo;
    VmExitIntrInfo = 50, "VM_EXIT_INTR_INFO", ExitInfo;
    VmExitIntrErrorCode = 51, "VM_EXIT_INTR_ERROR_CODE", ExitInfo;
    IdtVectoringInfo = 52, "IDT_VECTORING_INFO", ExitInfo;
    VmExitInstructionLen = 53, "VM_EXIT_INSTRUCTION_LEN", ExitInfo;
    VmxInstructionInfo = 54, "VMX_INSTRUCTION_INFO", ExitInfo;
    VmInstructionError = 55, "VM_INSTRUCTION_ERROR", ExitInfo;
}

/// Number of assigned fields.
pub const FIELD_COUNT: usize = FIELD_TABLE.len();

impl Field {
    /// Resolves a compact encoding. Unassigned and out-of-space encodings
    /// yield `None`.
    pub fn from_encoding(encoding: u16) -> Option<Field> {
        ALL_FIELDS.get(usize::from(encoding)).copied()
    }

    pub fn all() -> &'static [Field] {
        ALL_FIELDS
    }

    #[inline]
    pub fn encoding(self) -> u8 {
        self as u8
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn spec(self) -> &'static VmcsFieldSpec {
        &FIELD_TABLE[self.index()]
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn area(self) -> Area {
        self.spec().area
    }

    pub fn is_read_only(self) -> bool {
        self.spec().access == Access::ReadOnly
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical CSV rendering of the field table. The trace header hash is
/// computed over exactly these bytes.
pub fn field_table_csv() -> String {
    let mut out = String::from("compact_encoding,name,area,access\n");
    for spec in FIELD_TABLE {
        out.push_str(&format!(
            "{},{},{},{}\n",
            spec.compact_encoding,
            spec.name,
            spec.area.name(),
            spec.access.name()
        ));
    }
    out
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(PRIME))
}

/// FNV-1a over the canonical field-table CSV.
pub fn field_table_hash() -> u64 {
    fnv1a64(field_table_csv().as_bytes())
}
