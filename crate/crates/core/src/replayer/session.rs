use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::FormatError;
use crate::hypervisor::session::PIN_BASED_PREEMPTION_TIMER;
use crate::hypervisor::{
    cost, CoverageBitmap, ExitProbe, ExitReport, HandlerOutcome, InterceptError, Session,
};
use crate::recorder::hooks::observed_exit;
use crate::recorder::{EventLog, ExitMetrics, TraceFile, VmSeed};
use crate::vmx::fields::field_table_hash;
use crate::vmx::{classify_cr0_mode, CpuMode, Field, GprId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("seed entry references encoding {encoding}, which the field table leaves unassigned")]
    FieldTableMismatch { encoding: u8 },
    #[error("trace was written against field table {found:#018x}, this build has {expected:#018x}")]
    TraceFieldTable { expected: u64, found: u64 },
    #[error("{recorded} recorded metric entries against {replayed} replayed")]
    LengthMismatch { recorded: usize, replayed: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// What the replay probe does when a handler reads a read-only field the
/// seed has no value for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReadPolicy {
    /// Abort the exit with `OverrideUnderflow`.
    #[default]
    Strict,
    /// Return the live VMCS value. Used for mutated seeds, whose handler
    /// path may leave the recorded one.
    LiveFallback,
}

/// A dummy VM plus the seed-injection state.
#[derive(Clone, Debug)]
pub struct ReplaySession {
    pub dummy: Session,
    pub pending_read_overrides: VecDeque<(Field, u64)>,
    /// Index of the next seed in the trace.
    pub position: usize,
    pub virtual_clock: u64,
    pub policy: ReadPolicy,
}

/// Starts the dummy VM, optionally from a saved session.
pub fn start_dummy_vm(snapshot: Option<&Session>) -> ReplaySession {
    let mut dummy = match snapshot {
        Some(s) => {
            let mut s = s.clone();
            s.recording = false;
            s
        }
        None => Session::dummy(),
    };
    let pin = dummy.vmcs.read(Field::PinBasedVmExecControl);
    dummy
        .vmcs
        .write(Field::PinBasedVmExecControl, pin | PIN_BASED_PREEMPTION_TIMER)
        .expect("control field");
    dummy
        .vmcs
        .write(Field::VmxPreemptionTimerValue, 0)
        .expect("control field");
    ReplaySession {
        dummy,
        pending_read_overrides: VecDeque::new(),
        position: 0,
        virtual_clock: 0,
        policy: ReadPolicy::Strict,
    }
}

/// Probe that serves read-only reads from the override queue.
struct ReplayProbe<'a> {
    overrides: &'a mut VecDeque<(Field, u64)>,
    policy: ReadPolicy,
    log: Option<&'a mut EventLog>,
}

impl ExitProbe for ReplayProbe<'_> {
    fn on_read(&mut self, field: Field, live: u64) -> Result<u64, InterceptError> {
        let value = if field.is_read_only() {
            match self.overrides.iter().position(|&(f, _)| f == field) {
                Some(i) => self.overrides.remove(i).expect("index in range").1,
                None if self.policy == ReadPolicy::LiveFallback => live,
                None => return Err(InterceptError::OverrideUnderflow(field)),
            }
        } else {
            live
        };
        if let Some(log) = self.log.as_deref_mut() {
            log.reads.push((field, value));
        }
        Ok(value)
    }

    fn on_write(&mut self, field: Field, value: u64) {
        if let Some(log) = self.log.as_deref_mut() {
            log.writes.push((field, value));
        }
    }
}

/// Result of replaying one seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SeedOutcome {
    Handled(ExitReport),
    /// The handler needed a read-only value the seed did not provide, or
    /// left recorded overrides unconsumed.
    Aborted(String),
}

impl ReplaySession {
    pub fn mode(&self) -> CpuMode {
        classify_cr0_mode(self.dummy.vmcs.read(Field::GuestCr0))
    }

    /// Loads `seed` into the session: GPRs are overwritten, the first read of
    /// each read-write field is written to the VMCS, read-only reads are
    /// queued for the handler's VMREADs.
    pub fn inject_seed(&mut self, seed: &VmSeed) -> Result<(), ReplayError> {
        self.pending_read_overrides.clear();
        for e in &seed.gpr_entries {
            let id = GprId::from_encoding(e.encoding)
                .ok_or(ReplayError::FieldTableMismatch { encoding: e.encoding })?;
            self.dummy.gprs.set(id, e.value);
        }
        let mut written = [false; crate::vmx::FIELD_COUNT];
        for e in &seed.read_entries {
            let field = Field::from_encoding(u16::from(e.encoding))
                .ok_or(ReplayError::FieldTableMismatch { encoding: e.encoding })?;
            if field.is_read_only() {
                self.pending_read_overrides.push_back((field, e.value));
            } else if !written[field.index()] {
                written[field.index()] = true;
                self.dummy
                    .vmcs
                    .write(field, e.value)
                    .expect("field is read-write");
            }
        }
        Ok(())
    }

    /// Injects `seed`, raises its recorded reason and runs the handler.
    /// Returns the outcome and the coverage of this exit.
    pub fn replay_seed(
        &mut self,
        seed: &VmSeed,
        log: Option<&mut EventLog>,
    ) -> Result<(SeedOutcome, CoverageBitmap), ReplayError> {
        self.inject_seed(seed)?;
        let mut probe = ReplayProbe {
            overrides: &mut self.pending_read_overrides,
            policy: self.policy,
            log,
        };
        let result = observed_exit(&mut self.dummy, seed.reason(), &mut probe);
        self.position += 1;
        let (report, coverage) = match result {
            Ok(r) => r,
            Err(e) => {
                self.pending_read_overrides.clear();
                return Ok((SeedOutcome::Aborted(e.to_string()), CoverageBitmap::new()));
            }
        };
        self.virtual_clock += report.cycles;
        let left = self.pending_read_overrides.len();
        self.pending_read_overrides.clear();
        if left > 0 && self.policy == ReadPolicy::Strict && !report.outcome.is_crash() {
            return Ok((
                SeedOutcome::Aborted(format!("{left} recorded read-only values left unread")),
                coverage,
            ));
        }
        Ok((SeedOutcome::Handled(report), coverage))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ReplayOutcome {
    Completed,
    VmCrash { exit: usize, log: String },
    HypCrash { exit: usize, log: String },
    Aborted { exit: usize, diagnostic: String },
}

impl ReplayOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, ReplayOutcome::Completed)
    }

    pub fn log(&self) -> Option<&str> {
        match self {
            ReplayOutcome::Completed => None,
            ReplayOutcome::VmCrash { log, .. } | ReplayOutcome::HypCrash { log, .. } => Some(log),
            ReplayOutcome::Aborted { diagnostic, .. } => Some(diagnostic),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayResult {
    pub exits: usize,
    pub outcome: ReplayOutcome,
    pub virtual_cycles: u64,
    /// Modes of the effective CR0, starting with the mode before the first seed.
    pub mode_trajectory: Vec<CpuMode>,
}

/// Replays `trace` seed by seed. With `record_metrics` the per-exit coverage,
/// VMCS writes and cycles are collected alongside, and the recording overhead
/// is charged to the virtual clock.
pub fn replay_trace(
    session: &mut ReplaySession,
    trace: &TraceFile,
    record_metrics: bool,
) -> Result<(ReplayResult, Option<Vec<ExitMetrics>>), ReplayError> {
    let expected = field_table_hash();
    if trace.header.field_table_hash != expected {
        return Err(ReplayError::TraceFieldTable {
            expected,
            found: trace.header.field_table_hash,
        });
    }
    let start_clock = session.virtual_clock;
    let mut metrics = record_metrics.then(|| Vec::with_capacity(trace.len()));
    let mut log = EventLog::default();
    let mut result = ReplayResult {
        exits: 0,
        outcome: ReplayOutcome::Completed,
        virtual_cycles: 0,
        mode_trajectory: vec![session.mode()],
    };
    for record in &trace.records {
        log.clear();
        let (outcome, coverage) =
            session.replay_seed(&record.seed, record_metrics.then_some(&mut log))?;
        let exit = result.exits;
        result.exits += 1;
        let report = match outcome {
            SeedOutcome::Handled(report) => report,
            SeedOutcome::Aborted(diagnostic) => {
                result.outcome = ReplayOutcome::Aborted { exit, diagnostic };
                break;
            }
        };
        if let Some(m) = metrics.as_mut() {
            session.virtual_clock += cost::record_overhead(report.cycles);
            m.push(ExitMetrics {
                coverage,
                write_entries: log.write_entries(),
                cycles: report.cycles,
            });
        }
        let mode = session.mode();
        if result.mode_trajectory.last() != Some(&mode) {
            result.mode_trajectory.push(mode);
        }
        match report.outcome {
            HandlerOutcome::VmCrash(log) => {
                result.outcome = ReplayOutcome::VmCrash { exit, log };
                break;
            }
            HandlerOutcome::HypCrash(log) => {
                result.outcome = ReplayOutcome::HypCrash { exit, log };
                break;
            }
            HandlerOutcome::Resume | HandlerOutcome::InjectFault(_) => {}
        }
    }
    result.virtual_cycles = session.virtual_clock - start_clock;
    Ok((result, metrics))
}

/// Modes of the values written to GUEST_CR0, prefixed by `initial` and with
/// repeats collapsed.
pub fn cr0_write_trajectory(initial: CpuMode, metrics: &[ExitMetrics]) -> Vec<CpuMode> {
    let mut out = vec![initial];
    for m in metrics {
        for v in m.writes_to(Field::GuestCr0) {
            let mode = classify_cr0_mode(v);
            if out.last() != Some(&mode) {
                out.push(mode);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recorder::{record_workload, SeedEntry, TraceHeader};
    use crate::vmx::ExitReason;

    #[test]
    fn fresh_dummy_has_zero_timer() {
        let s = start_dummy_vm(None);
        assert_eq!(s.mode(), CpuMode::Mode1);
        assert_eq!(s.dummy.vmcs.read(Field::VmxPreemptionTimerValue), 0);
        assert_ne!(s.dummy.vmcs.read(Field::PinBasedVmExecControl) & PIN_BASED_PREEMPTION_TIMER, 0);
    }

    #[test]
    fn gprs_and_read_only_overrides() {
        let mut s = start_dummy_vm(None);
        let mut regs = crate::vmx::GprFile::new();
        regs.set(GprId::Rax, 7);
        let seed = VmSeed::new(
            ExitReason::CrAccess,
            &regs,
            &[(Field::ExitReason, 28), (Field::ExitQualification, 0x10), (Field::GuestRip, 0x7C10)],
        );
        s.inject_seed(&seed).unwrap();
        assert_eq!(s.dummy.gprs.get(GprId::Rax), 7);
        assert_eq!(s.dummy.vmcs.read(Field::GuestRip), 0x7C10);
        assert_eq!(s.pending_read_overrides.len(), 2);
        let mut probe = ReplayProbe {
            overrides: &mut s.pending_read_overrides,
            policy: ReadPolicy::Strict,
            log: None,
        };
        assert_eq!(probe.on_read(Field::ExitQualification, 0).unwrap(), 0x10);
        assert_eq!(probe.on_read(Field::ExitReason, 0).unwrap(), 28);
        assert_eq!(
            probe.on_read(Field::ExitQualification, 0),
            Err(InterceptError::OverrideUnderflow(Field::ExitQualification))
        );
    }

    #[test]
    fn unassigned_encoding_is_rejected() {
        let mut s = start_dummy_vm(None);
        let mut seed = VmSeed::new(ExitReason::Rdtsc, &crate::vmx::GprFile::new(), &[]);
        seed.read_entries.push(SeedEntry { flag: crate::recorder::FLAG_VMCS_READ, encoding: 146, value: 0 });
        assert_eq!(s.inject_seed(&seed), Err(ReplayError::FieldTableMismatch { encoding: 146 }));
    }

    #[test]
    fn empty_trace_replays_nothing() {
        let mut s = start_dummy_vm(None);
        let trace = TraceFile::new(TraceHeader::new("IDLE", "chacha8", 0));
        let (r, m) = replay_trace(&mut s, &trace, true).unwrap();
        assert_eq!(r.exits, 0);
        assert_eq!(r.virtual_cycles, 0);
        assert!(r.outcome.is_completed());
        assert_eq!(m.unwrap().len(), 0);
    }

    #[test]
    fn missing_read_only_value_aborts() {
        let mut s = start_dummy_vm(None);
        let seed = VmSeed::new(ExitReason::Rdtsc, &crate::vmx::GprFile::new(), &[]);
        let (outcome, _) = s.replay_seed(&seed, None).unwrap();
        assert!(matches!(outcome, SeedOutcome::Aborted(d) if d.contains("EXIT_REASON")));
    }

    #[test]
    fn boot_trace_replays_from_fresh_state() {
        let run = record_workload(crate::guest::Workload::OsBoot, 400, 2);
        let mut s = start_dummy_vm(None);
        let (r, m) = replay_trace(&mut s, &run.trace, true).unwrap();
        assert!(r.outcome.is_completed(), "{:?}", r.outcome);
        assert_eq!(r.exits, 400);
        assert_eq!(r.mode_trajectory, run.summary.mode_trajectory);
        assert_eq!(m.unwrap(), run.trace.metrics());
    }
}
