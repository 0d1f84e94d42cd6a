use super::seed::{ExitMetrics, SeedEntry, VmSeed, WORST_CASE_SEED_BYTES};
use super::trace::{TraceFile, TraceHeader, TraceRecord};
use crate::hypervisor::{cost, ExitProbe, ExitReport, InterceptError, Session};
use crate::vmx::{ExitReason, Field};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("session already has recording hooks attached")]
    AlreadyRecording,
}

/// VMREAD/VMWRITE stream of one handler invocation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub reads: Vec<(Field, u64)>,
    pub writes: Vec<(Field, u64)>,
}

impl EventLog {
    pub fn clear(&mut self) {
        self.reads.clear();
        self.writes.clear();
    }

    pub fn write_entries(&self) -> Vec<SeedEntry> {
        self.writes.iter().map(|&(f, v)| SeedEntry::write(f, v)).collect()
    }
}

impl ExitProbe for EventLog {
    fn on_read(&mut self, field: Field, live: u64) -> Result<u64, InterceptError> {
        self.reads.push((field, live));
        Ok(live)
    }

    fn on_write(&mut self, field: Field, value: u64) {
        self.writes.push((field, value));
    }
}

/// Runs one exit on `session` under `probe`, returning the report and the
/// coverage of this exit alone. Cumulative session coverage is preserved.
pub(crate) fn observed_exit(
    session: &mut Session,
    reason: ExitReason,
    probe: &mut dyn ExitProbe,
) -> Result<(ExitReport, crate::hypervisor::CoverageBitmap), InterceptError> {
    let before = session.coverage_snapshot();
    session.coverage_reset();
    let result = session.handle_exit(reason, probe);
    let this_exit = session.coverage_snapshot();
    session.hyp.coverage = before;
    session.hyp.coverage.union_with(&this_exit);
    result.map(|report| (report, this_exit))
}

/// Attached recorder: buffers seeds and metrics exit by exit.
#[derive(Debug)]
pub struct RecordingHandle {
    trace: TraceFile,
    log: EventLog,
    /// Serialized seed payloads, preallocated at the worst-case size.
    seed_arena: Vec<u8>,
    overhead_cycles: u64,
}

/// Attaches recording hooks to `session`, reserving the worst-case seed
/// size for `expected_exits` exits.
pub fn attach_hooks(
    session: &mut Session,
    header: TraceHeader,
    expected_exits: usize,
) -> Result<RecordingHandle, RecordError> {
    if session.recording {
        return Err(RecordError::AlreadyRecording);
    }
    session.recording = true;
    Ok(RecordingHandle {
        trace: TraceFile::new(TraceHeader { exit_count: 0, ..header }),
        log: EventLog::default(),
        seed_arena: Vec::with_capacity(WORST_CASE_SEED_BYTES * expected_exits),
        overhead_cycles: 0,
    })
}

impl RecordingHandle {
    /// Handles one exit with the hooks in place and appends its record.
    /// GPRs are captured as the guest left them, before the handler runs.
    pub fn record_exit(&mut self, session: &mut Session, reason: ExitReason) -> (ExitReport, &TraceRecord) {
        debug_assert!(session.recording, "hooks detached");
        let pre_gprs = session.gprs;
        self.log.clear();
        let (report, coverage) = observed_exit(session, reason, &mut self.log)
            .expect("recording hooks never fail a read");
        let seed = VmSeed::new(reason, &pre_gprs, &self.log.reads);
        self.seed_arena.extend_from_slice(&seed.payload_bytes());
        let metrics = ExitMetrics {
            coverage,
            write_entries: self.log.write_entries(),
            cycles: report.cycles,
        };
        self.overhead_cycles += cost::record_overhead(report.cycles);
        self.trace.push(TraceRecord { seed, metrics });
        (report, self.trace.records.last().expect("just pushed"))
    }

    pub fn trace(&self) -> &TraceFile {
        &self.trace
    }

    pub fn overhead_cycles(&self) -> u64 {
        self.overhead_cycles
    }

    pub fn reserved_bytes(&self) -> usize {
        self.seed_arena.capacity()
    }

    pub fn seed_bytes(&self) -> usize {
        self.seed_arena.len()
    }

    pub fn detach(self, session: &mut Session) -> TraceFile {
        session.recording = false;
        self.trace
    }
}
