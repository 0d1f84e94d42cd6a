//! Synthetic guests: workload profiles, program generation and the guest
//! execution loop.

pub mod generate;
pub mod profile;
pub mod program;
pub mod state;

pub use generate::{
    generate_program, generate_workload, protected_mode_switch_program, rng_from_seed, PROLOGUE_EXITS,
    RNG_ALGORITHM,
};
pub use profile::{build_profile, profiles_csv, CycleRange, UnknownWorkload, Workload, WorkloadProfile};
pub use program::{ExitPayload, GuestOp, GuestProgram, ProgramFile};
pub use state::{deliver_exit, load_exit_state, run_program, GuestState, RunSummary, StepResult};
