use super::fields::{Field, FIELD_COUNT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmxError {
    #[error("unknown VMCS field encoding {0}")]
    UnknownField(u16),
    #[error("VMCS field {0} is read-only")]
    ReadOnlyField(Field),
    #[error("invalid launch-state transition: {0}")]
    InvalidLaunchState(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LaunchState {
    Inactive,
    ActiveCurrentClear,
    ActiveCurrentLaunched,
}

impl LaunchState {
    pub fn to_byte(self) -> u8 {
        match self {
            LaunchState::Inactive => 0,
            LaunchState::ActiveCurrentClear => 1,
            LaunchState::ActiveCurrentLaunched => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<LaunchState> {
        match b {
            0 => Some(LaunchState::Inactive),
            1 => Some(LaunchState::ActiveCurrentClear),
            2 => Some(LaunchState::ActiveCurrentLaunched),
            _ => None,
        }
    }
}

/// Per-vCPU control structure.
///
/// Plain `read`/`write` are the VMREAD/VMWRITE instructions. Handler code
/// reaches them through the exit context, which is where record and replay
/// hooks observe and intercept accesses. `store_exit_state` is the processor
/// saving state on a VM exit and is the only path that fills read-only fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Vmcs {
    values: [u64; FIELD_COUNT],
    launch_state: LaunchState,
}

impl Default for Vmcs {
    fn default() -> Self {
        Self::new()
    }
}

impl Vmcs {
    pub fn new() -> Self {
        Self {
            values: [0; FIELD_COUNT],
            launch_state: LaunchState::Inactive,
        }
    }

    pub fn launch_state(&self) -> LaunchState {
        self.launch_state
    }

    /// VMCLEAR: reset every field and make the structure active and clear.
    pub fn clear(&mut self) {
        self.values = [0; FIELD_COUNT];
        self.launch_state = LaunchState::ActiveCurrentClear;
    }

    /// VMPTRLD: make the (already cleared) structure current.
    pub fn load(&mut self) -> Result<(), VmxError> {
        match self.launch_state {
            LaunchState::Inactive => Err(VmxError::InvalidLaunchState(
                "VMPTRLD on a VMCS that was never cleared",
            )),
            _ => Ok(()),
        }
    }

    /// VMLAUNCH: clear -> launched.
    pub fn launch(&mut self) -> Result<(), VmxError> {
        match self.launch_state {
            LaunchState::ActiveCurrentClear => {
                self.launch_state = LaunchState::ActiveCurrentLaunched;
                Ok(())
            }
            LaunchState::Inactive => Err(VmxError::InvalidLaunchState("VMLAUNCH on inactive VMCS")),
            LaunchState::ActiveCurrentLaunched => {
                Err(VmxError::InvalidLaunchState("VMLAUNCH on launched VMCS; use VMRESUME"))
            }
        }
    }

    #[inline]
    pub fn read(&self, field: Field) -> u64 {
        self.values[field.index()]
    }

    pub fn write(&mut self, field: Field, value: u64) -> Result<(), VmxError> {
        if field.is_read_only() {
            return Err(VmxError::ReadOnlyField(field));
        }
        self.values[field.index()] = value;
        Ok(())
    }

    /// VMREAD by raw compact encoding.
    pub fn vmread(&self, encoding: u16) -> Result<u64, VmxError> {
        let field = Field::from_encoding(encoding).ok_or(VmxError::UnknownField(encoding))?;
        Ok(self.read(field))
    }

    /// VMWRITE by raw compact encoding.
    pub fn vmwrite(&mut self, encoding: u16, value: u64) -> Result<(), VmxError> {
        let field = Field::from_encoding(encoding).ok_or(VmxError::UnknownField(encoding))?;
        self.write(field, value)
    }

    /// Processor-side store performed on VM exit. Accepts any field.
    pub fn store_exit_state(&mut self, field: Field, value: u64) {
        self.values[field.index()] = value;
    }

    pub fn values(&self) -> &[u64; FIELD_COUNT] {
        &self.values
    }

    /// Rebuilds a VMCS from saved state (snapshot restore).
    pub fn from_parts(values: [u64; FIELD_COUNT], launch_state: LaunchState) -> Self {
        Self { values, launch_state }
    }
}
