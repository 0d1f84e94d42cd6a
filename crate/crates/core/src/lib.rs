//! Deterministic VT-x simulator with VM-exit record and replay and a
//! single-bit-flip seed fuzzer.

pub mod format;
pub mod fuzzer;
pub mod guest;
pub mod hypervisor;
pub mod recorder;
pub mod replayer;
pub mod vmx;
