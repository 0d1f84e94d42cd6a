use super::blocks::Block;
use super::state::HypState;
use crate::vmx::{classify_cr0_mode, Field, GprFile, GprId, Vmcs};
use thiserror::Error;

/// Failure raised by a probe while intercepting a handler VMREAD.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterceptError {
    #[error("handler read read-only field {0} but the seed provides no value for it")]
    OverrideUnderflow(Field),
}

/// Observer of handler VMCS traffic.
///
/// Every VMREAD and VMWRITE issued by handler code passes through the probe.
/// Recording probes log the accesses; the replay probe substitutes seed values
/// for read-only fields.
pub trait ExitProbe {
    fn on_read(&mut self, field: Field, live: u64) -> Result<u64, InterceptError>;
    fn on_write(&mut self, field: Field, value: u64);
}

/// Probe that observes nothing.
pub struct NoProbe;

impl ExitProbe for NoProbe {
    fn on_read(&mut self, _field: Field, live: u64) -> Result<u64, InterceptError> {
        Ok(live)
    }

    fn on_write(&mut self, _field: Field, _value: u64) {}
}

pub(crate) type HResult<T> = Result<T, InterceptError>;

/// Everything a handler touches during one exit.
pub(crate) struct ExitCtx<'a> {
    pub vmcs: &'a mut Vmcs,
    pub gprs: &'a mut GprFile,
    pub hyp: &'a mut HypState,
    probe: &'a mut dyn ExitProbe,
    /// Guest RIP as read by the dispatcher.
    pub rip: u64,
    rflags: Option<u64>,
}

impl<'a> ExitCtx<'a> {
    pub fn new(
        vmcs: &'a mut Vmcs,
        gprs: &'a mut GprFile,
        hyp: &'a mut HypState,
        probe: &'a mut dyn ExitProbe,
    ) -> Self {
        Self { vmcs, gprs, hyp, probe, rip: 0, rflags: None }
    }

    #[inline]
    pub fn hit(&mut self, block: Block) {
        self.hyp.coverage.set(block);
    }

    pub fn read(&mut self, field: Field) -> HResult<u64> {
        let live = self.vmcs.read(field);
        self.probe.on_read(field, live)
    }

    pub fn write(&mut self, field: Field, value: u64) {
        self.vmcs
            .write(field, value)
            .expect("handlers only write read-write fields");
        self.probe.on_write(field, value);
    }

    /// GUEST_RFLAGS, read at most once per exit.
    pub fn rflags(&mut self) -> HResult<u64> {
        if let Some(v) = self.rflags {
            return Ok(v);
        }
        let v = self.read(Field::GuestRflags)?;
        self.rflags = Some(v);
        Ok(v)
    }

    /// GUEST_CR0 read that also refreshes the vCPU mode abstraction.
    pub fn read_cr0(&mut self) -> HResult<u64> {
        let cr0 = self.read(Field::GuestCr0)?;
        self.hyp.vcpu_mode = classify_cr0_mode(cr0);
        Ok(cr0)
    }

    #[inline]
    pub fn gpr(&self, id: GprId) -> u64 {
        self.gprs.get(id)
    }

    #[inline]
    pub fn set_gpr(&mut self, id: GprId, value: u64) {
        self.gprs.set(id, value);
    }
}
