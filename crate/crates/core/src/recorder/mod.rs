//! Exit recording: seeds, per-exit metrics, hooks and the trace container.

pub mod hooks;
pub mod run;
pub mod seed;
pub mod trace;

pub use hooks::{attach_hooks, EventLog, RecordError, RecordingHandle};
pub use run::{record_cycles, record_program, record_workload, starting_session, RecordSummary, RecordedRun};
pub use seed::{
    ExitMetrics, SeedEntry, VmSeed, ENTRY_BYTES, FLAG_GPR, FLAG_VMCS_READ, FLAG_VMCS_WRITE,
    WORST_CASE_SEED_BYTES,
};
pub use trace::{
    deserialize_trace, seed_fragment, serialize_trace, TraceError, TraceFile, TraceHeader,
    TraceRecord, TRACE_MAGIC, TRACE_VERSION,
};
