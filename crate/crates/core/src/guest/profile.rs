use crate::vmx::ExitReason;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Workload {
    OsBoot,
    CpuBound,
    MemBound,
    IoBound,
    Idle,
}

impl Workload {
    pub const ALL: [Workload; 5] = [
        Workload::OsBoot,
        Workload::CpuBound,
        Workload::MemBound,
        Workload::IoBound,
        Workload::Idle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Workload::OsBoot => "OS_BOOT",
            Workload::CpuBound => "CPU_BOUND",
            Workload::MemBound => "MEM_BOUND",
            Workload::IoBound => "IO_BOUND",
            Workload::Idle => "IDLE",
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown workload {0:?} (expected one of OS_BOOT, CPU_BOUND, MEM_BOUND, IO_BOUND, IDLE)")]
pub struct UnknownWorkload(pub String);

impl FromStr for Workload {
    type Err = UnknownWorkload;

    /// Accepts the canonical names case-insensitively, with `-` for `_`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Workload::ALL
            .into_iter()
            .find(|w| w.name() == norm || w.name().replace('_', "") == norm)
            .ok_or_else(|| UnknownWorkload(s.to_string()))
    }
}

/// Uniform distribution of guest cycles spent between two exits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleRange {
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadProfile {
    pub name: Workload,
    pub reason_mix: Vec<(ExitReason, f64)>,
    pub guest_cycles_between_exits: CycleRange,
}

impl WorkloadProfile {
    pub fn probability(&self, reason: ExitReason) -> f64 {
        self.reason_mix
            .iter()
            .find(|(r, _)| *r == reason)
            .map_or(0.0, |(_, p)| *p)
    }
}

pub fn build_profile(name: Workload) -> WorkloadProfile {
    use ExitReason::*;
    let (reason_mix, guest_cycles_between_exits) = match name {
        Workload::OsBoot => (
            vec![
                (IoInstruction, 0.45),
                (CrAccess, 0.20),
                (Cpuid, 0.10),
                (Rdmsr, 0.05),
                (Wrmsr, 0.05),
                (EptViolation, 0.10),
                (ExternalInterrupt, 0.05),
            ],
            CycleRange { min: 50, max: 200 },
        ),
        Workload::CpuBound => (
            vec![
                (Rdtsc, 0.80),
                (Cpuid, 0.08),
                (ExternalInterrupt, 0.06),
                (InterruptWindow, 0.03),
                (Vmcall, 0.03),
            ],
            CycleRange { min: 500, max: 2000 },
        ),
        Workload::MemBound => (
            vec![
                (Rdtsc, 0.78),
                (EptViolation, 0.10),
                (ExternalInterrupt, 0.06),
                (InterruptWindow, 0.03),
                (Vmcall, 0.03),
            ],
            CycleRange { min: 500, max: 2000 },
        ),
        Workload::IoBound => (
            vec![
                (Rdtsc, 0.78),
                (IoInstruction, 0.10),
                (ExternalInterrupt, 0.06),
                (InterruptWindow, 0.03),
                (Vmcall, 0.03),
            ],
            CycleRange { min: 500, max: 2000 },
        ),
        Workload::Idle => (
            vec![
                (Rdtsc, 0.80),
                (Hlt, 0.10),
                (ExternalInterrupt, 0.07),
                (InterruptWindow, 0.03),
            ],
            CycleRange { min: 50_000, max: 200_000 },
        ),
    };
    WorkloadProfile { name, reason_mix, guest_cycles_between_exits }
}

/// `workload,reason,code,probability,min_cycles,max_cycles` rows.
pub fn profiles_csv() -> String {
    let mut out = String::from("workload,reason,code,probability,min_cycles,max_cycles\n");
    for w in Workload::ALL {
        let p = build_profile(w);
        for (reason, prob) in &p.reason_mix {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                w.name(),
                reason.name(),
                reason.code(),
                prob,
                p.guest_cycles_between_exits.min,
                p.guest_cycles_between_exits.max
            ));
        }
    }
    out
}
