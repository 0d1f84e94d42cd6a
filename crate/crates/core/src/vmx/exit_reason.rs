use std::fmt;

/// Basic VM-exit reason. Named variants carry a handler in the reference
/// hypervisor; every other 16-bit code is representable as `Other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExitReason {
    ExternalInterrupt,
    TripleFault,
    InterruptWindow,
    Cpuid,
    Hlt,
    Rdtsc,
    Vmcall,
    CrAccess,
    IoInstruction,
    Rdmsr,
    Wrmsr,
    EptViolation,
    PreemptionTimer,
    Other(u16),
}

/// Normative code table, in code order.
pub const EXIT_REASON_TABLE: &[(ExitReason, &str, u16)] = &[
    (ExitReason::ExternalInterrupt, "EXTERNAL_INTERRUPT", 1),
    (ExitReason::TripleFault, "TRIPLE_FAULT", 2),
    (ExitReason::InterruptWindow, "INTERRUPT_WINDOW", 7),
    (ExitReason::Cpuid, "CPUID", 10),
    (ExitReason::Hlt, "HLT", 12),
    (ExitReason::Rdtsc, "RDTSC", 16),
    (ExitReason::Vmcall, "VMCALL", 18),
    (ExitReason::CrAccess, "CR_ACCESS", 28),
    (ExitReason::IoInstruction, "IO_INSTRUCTION", 30),
    (ExitReason::Rdmsr, "RDMSR", 31),
    (ExitReason::Wrmsr, "WRMSR", 32),
    (ExitReason::EptViolation, "EPT_VIOLATION", 48),
    (ExitReason::PreemptionTimer, "PREEMPTION_TIMER", 52),
];

impl ExitReason {
    pub fn from_code(code: u16) -> ExitReason {
        EXIT_REASON_TABLE
            .iter()
            .find(|(_, _, c)| *c == code)
            .map(|(r, _, _)| *r)
            .unwrap_or(ExitReason::Other(code))
    }

    pub fn code(self) -> u16 {
        match self {
            ExitReason::Other(code) => code,
            named => {
                EXIT_REASON_TABLE
                    .iter()
                    .find(|(r, _, _)| *r == named)
                    .expect("named reasons are in the table")
                    .2
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            ExitReason::Other(code) => format!("OTHER_{code}"),
            named => EXIT_REASON_TABLE
                .iter()
                .find(|(r, _, _)| *r == named)
                .map(|(_, n, _)| (*n).to_string())
                .expect("named reasons are in the table"),
        }
    }

    /// Inverse of [`ExitReason::name`] for table names and `OTHER_<code>`.
    pub fn from_name(name: &str) -> Option<ExitReason> {
        if let Some(code) = name.strip_prefix("OTHER_") {
            return code.parse().ok().map(ExitReason::from_code);
        }
        EXIT_REASON_TABLE
            .iter()
            .find(|(_, n, _)| n.eq_ignore_ascii_case(name))
            .map(|(r, _, _)| *r)
    }

    pub fn named() -> impl Iterator<Item = ExitReason> {
        EXIT_REASON_TABLE.iter().map(|(r, _, _)| *r)
    }
}

impl fmt::Display for ExitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn exit_reason_csv() -> String {
    let mut out = String::from("name,code\n");
    for (_, name, code) in EXIT_REASON_TABLE {
        out.push_str(&format!("{name},{code}\n"));
    }
    out
}
