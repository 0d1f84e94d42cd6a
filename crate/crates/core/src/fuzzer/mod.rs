//! Single-bit-flip seed mutation, campaigns and failure triage.

pub mod campaign;
pub mod config;
pub mod mutate;
pub mod report;

use thiserror::Error;

use crate::replayer::ReplayError;

pub use campaign::{
    coverage_delta, detect_failure, execute_seed, first_of_reason, run_test_case, CampaignResult,
    CrashArtifact, FailureKind, TestCase, DEFAULT_MUTANTS,
};
pub use config::{CampaignSpec, FuzzConfig};
pub use mutate::{
    apply_mutation, hypcrash_mutation, mutate_single_bitflip, Mutation, SeedArea, HYPCRASH_BIT,
    HYPCRASH_FIELD,
};
pub use report::{delta_table, CampaignSummary, CrashSummary, DeltaCell, DeltaTable};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FuzzError {
    #[error("seed has no {} entries to mutate", .0.name())]
    EmptyArea(SeedArea),
    #[error("baseline coverage is empty")]
    EmptyBaseline,
    #[error("seed index {index} is outside a trace of {len} exits")]
    SeedIndexOutOfRange { index: usize, len: usize },
    #[error("a test case needs at least one mutant")]
    NoMutants,
    #[error("trace has no {0} seed")]
    NoSeedForReason(String),
    #[error("unmutated prefix crashed at exit {exit}: {log}")]
    CorruptPrefix { exit: usize, log: String },
    #[error("mutant replay aborted: {0}")]
    MutantAborted(String),
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}
