//! Reference hypervisor: exit dispatcher, per-reason handlers with basic-block
//! instrumentation, and the vCPU session unit.

pub mod blocks;
pub mod context;
pub mod cost;
pub mod coverage;
pub mod handlers;
pub mod session;
pub mod state;

pub use blocks::{block_table_csv, Block, ASYNC_POOL, BLOCK_COUNT, BLOCK_TABLE};
pub use context::{ExitProbe, InterceptError, NoProbe};
pub use coverage::{CoverageBitmap, BITMAP_BYTES};
pub use session::{ExitReport, Session};
pub use state::{HandlerOutcome, HypState, VECTOR_GP, VECTOR_UD};
