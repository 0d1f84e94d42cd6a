use super::profile::Workload;
use crate::format::{FormatError, Reader, Writer};
use crate::vmx::{ExitReason, Field, GprId};

/// Register values and processor-saved VMCS state attached to one exit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ExitPayload {
    /// Registers the guest sets before trapping.
    pub gprs: Vec<(GprId, u64)>,
    /// Fields the processor stores into the VMCS on this exit.
    pub exit_state: Vec<(Field, u64)>,
}

impl ExitPayload {
    pub fn gpr(mut self, id: GprId, value: u64) -> Self {
        self.gprs.push((id, value));
        self
    }

    pub fn state(mut self, field: Field, value: u64) -> Self {
        self.exit_state.push((field, value));
        self
    }

    pub fn exit_value(&self, field: Field) -> Option<u64> {
        self.exit_state.iter().rev().find(|(f, _)| *f == field).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GuestOp {
    Compute(u64),
    Sensitive(ExitReason, ExitPayload),
    Halt,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct GuestProgram {
    pub ops: Vec<GuestOp>,
}

impl GuestProgram {
    pub fn exit_count(&self) -> usize {
        self.ops
            .iter()
            .filter(|op| matches!(op, GuestOp::Sensitive(..)))
            .count()
    }

    pub fn compute_cycles(&self) -> u64 {
        self.ops
            .iter()
            .map(|op| match op {
                GuestOp::Compute(c) => *c,
                _ => 0,
            })
            .sum()
    }

    pub fn exits(&self) -> impl Iterator<Item = (ExitReason, &ExitPayload)> {
        self.ops.iter().filter_map(|op| match op {
            GuestOp::Sensitive(r, p) => Some((*r, p)),
            _ => None,
        })
    }
}

pub const PROGRAM_MAGIC: [u8; 4] = *b"IRPG";
pub const PROGRAM_VERSION: u16 = 1;

const TAG_COMPUTE: u8 = 0;
const TAG_SENSITIVE: u8 = 1;
const TAG_HALT: u8 = 2;

/// A generated program together with the parameters that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramFile {
    pub workload: Workload,
    pub rng_algorithm: String,
    pub rng_seed: u64,
    pub program: GuestProgram,
}

impl ProgramFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&PROGRAM_MAGIC);
        w.u16(PROGRAM_VERSION);
        w.u64(crate::vmx::fields::field_table_hash());
        w.str16(self.workload.name());
        w.str16(&self.rng_algorithm);
        w.u64(self.rng_seed);
        w.u32(self.program.ops.len() as u32);
        for op in &self.program.ops {
            match op {
                GuestOp::Compute(c) => {
                    w.u8(TAG_COMPUTE);
                    w.u64(*c);
                }
                GuestOp::Sensitive(reason, p) => {
                    w.u8(TAG_SENSITIVE);
                    w.u16(reason.code());
                    w.u8(p.gprs.len() as u8);
                    for (id, v) in &p.gprs {
                        w.u8(id.encoding());
                        w.u64(*v);
                    }
                    w.u8(p.exit_state.len() as u8);
                    for (f, v) in &p.exit_state {
                        w.u8(f.encoding());
                        w.u64(*v);
                    }
                }
                GuestOp::Halt => w.u8(TAG_HALT),
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ProgramFile, FormatError> {
        let mut r = Reader::new(bytes);
        r.preamble(PROGRAM_MAGIC, PROGRAM_VERSION)?;
        r.field_table_hash()?;
        let name = r.str16()?;
        let workload = name
            .parse()
            .map_err(|e: super::profile::UnknownWorkload| FormatError::Malformed(e.to_string()))?;
        let rng_algorithm = r.str16()?;
        let rng_seed = r.u64()?;
        let n = r.u32()?;
        let mut ops = Vec::new();
        for _ in 0..n {
            let op = match r.u8()? {
                TAG_COMPUTE => GuestOp::Compute(r.u64()?),
                TAG_SENSITIVE => {
                    let reason = ExitReason::from_code(r.u16()?);
                    let mut p = ExitPayload::default();
                    for _ in 0..r.u8()? {
                        let enc = r.u8()?;
                        let id = GprId::from_encoding(enc)
                            .ok_or_else(|| FormatError::Malformed(format!("bad GPR id {enc}")))?;
                        p.gprs.push((id, r.u64()?));
                    }
                    for _ in 0..r.u8()? {
                        let enc = r.u8()?;
                        let f = Field::from_encoding(u16::from(enc))
                            .ok_or_else(|| FormatError::Malformed(format!("bad field {enc}")))?;
                        p.exit_state.push((f, r.u64()?));
                    }
                    GuestOp::Sensitive(reason, p)
                }
                TAG_HALT => GuestOp::Halt,
                t => return Err(FormatError::Malformed(format!("bad op tag {t}"))),
            };
            ops.push(op);
        }
        r.finish()?;
        Ok(ProgramFile { workload, rng_algorithm, rng_seed, program: GuestProgram { ops } })
    }
}
