//! Virtual-time cost model.

use crate::vmx::ExitReason;

pub const DISPATCH_CYCLES: u64 = 2000;
pub const RDTSC_CYCLES: u64 = 1500;
pub const CR_ACCESS_CYCLES: u64 = 6000;
pub const IO_INSTRUCTION_CYCLES: u64 = 8000;
pub const DEFAULT_HANDLER_CYCLES: u64 = 3000;

/// Recording hook overhead in basis points of handler cycles (1.10%).
pub const RECORD_OVERHEAD_BP: u64 = 110;

/// Published virtual clock rate.
pub const CYCLES_PER_SECOND: f64 = 3.5e9;

/// Reference replay rate for bare preemption-timer exits.
pub const REFERENCE_EXITS_PER_SECOND: f64 = 50_000.0;

/// Cost of the per-reason handler body, excluding the dispatcher.
pub fn handler_cycles(reason: ExitReason) -> u64 {
    match reason {
        ExitReason::Rdtsc => RDTSC_CYCLES,
        ExitReason::CrAccess => CR_ACCESS_CYCLES,
        ExitReason::IoInstruction => IO_INSTRUCTION_CYCLES,
        _ => DEFAULT_HANDLER_CYCLES,
    }
}

pub fn exit_cycles(reason: ExitReason) -> u64 {
    DISPATCH_CYCLES + handler_cycles(reason)
}

/// Extra cycles the recording hooks add to an exit, rounded up.
pub fn record_overhead(handler_cycles: u64) -> u64 {
    (handler_cycles * RECORD_OVERHEAD_BP).div_ceil(10_000)
}

pub fn cycles_to_seconds(cycles: u64) -> f64 {
    cycles as f64 / CYCLES_PER_SECOND
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overhead_is_about_one_percent() {
        assert_eq!(record_overhead(10_000), 110);
        assert_eq!(record_overhead(3500), 39);
        assert_eq!(record_overhead(0), 0);
    }

    #[test]
    fn per_reason_costs() {
        assert_eq!(exit_cycles(ExitReason::PreemptionTimer), 5000);
        assert_eq!(exit_cycles(ExitReason::Rdtsc), 3500);
        assert_eq!(exit_cycles(ExitReason::CrAccess), 8000);
        assert_eq!(exit_cycles(ExitReason::IoInstruction), 10_000);
        assert_eq!(exit_cycles(ExitReason::Other(63)), 5000);
    }
}
