use super::coverage::CoverageBitmap;
use crate::vmx::CpuMode;

/// Outcome of one handler invocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum HandlerOutcome {
    Resume,
    /// Re-enter the guest with a hardware exception pending.
    InjectFault(u8),
    /// The guest cannot continue (failed entry check or guest-fatal event).
    VmCrash(String),
    /// A handler assertion fired.
    HypCrash(String),
}

impl HandlerOutcome {
    pub fn is_crash(&self) -> bool {
        matches!(self, HandlerOutcome::VmCrash(_) | HandlerOutcome::HypCrash(_))
    }
}

pub const VECTOR_UD: u8 = 6;
pub const VECTOR_GP: u8 = 13;

/// The hypervisor's per-vCPU bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HypState {
    pub vcpu_mode: CpuMode,
    pub cr0_guest_host_mask: u64,
    pub cr0_read_shadow_cache: u64,
    pub halted: bool,
    /// Virtual timestamp counter of the host.
    pub tsc: u64,
    pub crash_log: Vec<String>,
    pub coverage: CoverageBitmap,
    /// External interrupt waiting for an open interrupt window.
    pub pending_vector: Option<u8>,
    pub tpr: u8,
    pub pci_address: u32,
    pub populated_pages: u64,
    pub timer_ticks: u64,
}

impl Default for HypState {
    fn default() -> Self {
        Self {
            vcpu_mode: CpuMode::Mode1,
            cr0_guest_host_mask: 0,
            cr0_read_shadow_cache: 0,
            halted: false,
            tsc: 0,
            crash_log: Vec::new(),
            coverage: CoverageBitmap::new(),
            pending_vector: None,
            tpr: 0,
            pci_address: 0,
            populated_pages: 0,
            timer_ticks: 0,
        }
    }
}

impl HypState {
    pub fn coverage_snapshot(&self) -> CoverageBitmap {
        self.coverage
    }

    pub fn coverage_reset(&mut self) {
        self.coverage.clear();
    }
}
