mod fuzz;
mod gen;
mod record;
mod replay;
mod report;

use std::path::Path;

use anyhow::{Context, Result};
use iris_core::hypervisor::{HandlerOutcome, Session};

pub use fuzz::fuzz;
pub use gen::gen_workload;
pub use record::record;
pub use replay::replay;
pub use report::report;

/// Seed used when neither --rng-seed nor the config gives one.
pub const DEFAULT_RNG_SEED: u64 = 1;

pub fn load_snapshot(path: &Path) -> Result<Session> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Session::from_snapshot_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn outcome_status(outcome: &HandlerOutcome) -> u8 {
    match outcome {
        HandlerOutcome::VmCrash(_) => crate::EXIT_VM_CRASH,
        HandlerOutcome::HypCrash(_) => crate::EXIT_HYP_CRASH,
        HandlerOutcome::Resume | HandlerOutcome::InjectFault(_) => crate::EXIT_OK,
    }
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned())
}
