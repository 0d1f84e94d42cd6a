//! Seed replay on a dummy VM, accuracy and throughput reports.

pub mod accuracy;
pub mod session;
pub mod throughput;

pub use accuracy::{compute_accuracy, AccuracyReport, NoiseInjector, ReasonDiff, DEFAULT_NOISE_THRESHOLD};
pub use session::{
    cr0_write_trajectory, replay_trace, start_dummy_vm, ReadPolicy, ReplayError, ReplayOutcome,
    ReplayResult, ReplaySession, SeedOutcome,
};
pub use throughput::{ideal_throughput, measure_throughput, ThroughputReport};
