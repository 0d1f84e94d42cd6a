use serde::{Deserialize, Serialize};

use super::session::{replay_trace, start_dummy_vm, ReadPolicy, ReplayError, ReplaySession};
use crate::hypervisor::cost::{cycles_to_seconds, REFERENCE_EXITS_PER_SECOND};
use crate::recorder::{record_cycles, TraceFile, VmSeed};
use crate::vmx::ExitReason;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub exits_replayed: usize,
    pub virtual_cycles: u64,
    pub exits_per_second_equivalent: f64,
    /// Recording time over replay time; absent when the recording time
    /// cannot be reconstructed.
    pub speedup_vs_record: Option<f64>,
    pub reference_exits_per_second: f64,
}

impl ThroughputReport {
    pub fn new(exits: usize, cycles: u64, record_cycles: Option<u64>) -> Self {
        let secs = cycles_to_seconds(cycles);
        Self {
            exits_replayed: exits,
            virtual_cycles: cycles,
            exits_per_second_equivalent: if cycles == 0 { 0.0 } else { exits as f64 / secs },
            speedup_vs_record: record_cycles
                .filter(|_| cycles > 0)
                .map(|r| r as f64 / cycles as f64),
            reference_exits_per_second: REFERENCE_EXITS_PER_SECOND,
        }
    }

    /// Equivalent exits/s over the reference figure.
    pub fn reference_ratio(&self) -> f64 {
        self.exits_per_second_equivalent / REFERENCE_EXITS_PER_SECOND
    }
}

/// Replays `trace` without metric collection and reports its virtual time.
pub fn measure_throughput(
    session: &mut ReplaySession,
    trace: &TraceFile,
) -> Result<ThroughputReport, ReplayError> {
    let (result, _) = replay_trace(session, trace, false)?;
    Ok(ThroughputReport::new(result.exits, result.virtual_cycles, record_cycles(trace)))
}

/// Replays `n` preemption-timer exits with empty seeds on a fresh dummy VM.
pub fn ideal_throughput(n: usize) -> ThroughputReport {
    let mut session = start_dummy_vm(None);
    session.policy = ReadPolicy::LiveFallback;
    let seed = VmSeed {
        exit_reason: ExitReason::PreemptionTimer.code(),
        gpr_entries: Vec::new(),
        read_entries: Vec::new(),
    };
    for _ in 0..n {
        session
            .replay_seed(&seed, None)
            .expect("empty seeds reference no fields");
    }
    ThroughputReport::new(n, session.virtual_clock, None)
}
