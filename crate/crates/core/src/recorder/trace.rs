//! The `.iris` trace container.
//!
//! Header: magic `IRIS`, version (u16), field-table hash (u64), workload name
//! and RNG algorithm (u16-prefixed UTF-8), RNG seed (u64), exit count (u64).
//! Each record: reason (u16), gpr_count, read_count, write_count (u8 each),
//! cycles (u64), coverage bitmap, then the GPR, read and write entries.

use super::seed::{
    ExitMetrics, SeedEntry, VmSeed, ENTRY_BYTES, FLAG_GPR, FLAG_VMCS_READ, FLAG_VMCS_WRITE,
};
use crate::format::{FormatError, Reader, Writer};
use crate::hypervisor::{CoverageBitmap, BITMAP_BYTES};
use crate::vmx::fields::field_table_hash;
use crate::vmx::{ExitReason, GPR_COUNT};

pub const TRACE_MAGIC: [u8; 4] = *b"IRIS";
pub const TRACE_VERSION: u16 = 1;

pub type TraceError = FormatError;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceHeader {
    pub workload: String,
    pub rng_algorithm: String,
    pub rng_seed: u64,
    pub exit_count: u64,
    pub field_table_hash: u64,
}

impl TraceHeader {
    pub fn new(workload: &str, rng_algorithm: &str, rng_seed: u64) -> Self {
        Self {
            workload: workload.to_string(),
            rng_algorithm: rng_algorithm.to_string(),
            rng_seed,
            exit_count: 0,
            field_table_hash: field_table_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub seed: VmSeed,
    pub metrics: ExitMetrics,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn new(header: TraceHeader) -> Self {
        Self { header, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
        self.header.exit_count = self.records.len() as u64;
    }

    pub fn reasons(&self) -> impl Iterator<Item = ExitReason> + '_ {
        self.records.iter().map(|r| r.seed.reason())
    }

    pub fn metrics(&self) -> Vec<ExitMetrics> {
        self.records.iter().map(|r| r.metrics.clone()).collect()
    }

    pub fn handler_cycles(&self) -> u64 {
        self.records.iter().map(|r| r.metrics.cycles).sum()
    }

    /// Histogram of exit reasons in first-seen order.
    pub fn reason_histogram(&self) -> Vec<(ExitReason, usize)> {
        let mut out: Vec<(ExitReason, usize)> = Vec::new();
        for r in self.reasons() {
            match out.iter_mut().find(|(x, _)| *x == r) {
                Some((_, n)) => *n += 1,
                None => out.push((r, 1)),
            }
        }
        out
    }
}

fn write_entries(w: &mut Writer, entries: &[SeedEntry]) {
    for e in entries {
        w.bytes(&e.to_bytes());
    }
}

pub fn serialize_trace(trace: &TraceFile) -> Vec<u8> {
    let mut w = Writer::with_capacity(64 + trace.records.len() * 512);
    w.bytes(&TRACE_MAGIC);
    w.u16(TRACE_VERSION);
    w.u64(trace.header.field_table_hash);
    w.str16(&trace.header.workload);
    w.str16(&trace.header.rng_algorithm);
    w.u64(trace.header.rng_seed);
    w.u64(trace.header.exit_count);
    for rec in &trace.records {
        serialize_record(&mut w, rec);
    }
    w.buf
}

fn serialize_record(w: &mut Writer, rec: &TraceRecord) {
    let count = |n: usize| u8::try_from(n).expect("entry count fits the frame");
    w.u16(rec.seed.exit_reason);
    w.u8(count(rec.seed.gpr_entries.len()));
    w.u8(count(rec.seed.read_entries.len()));
    w.u8(count(rec.metrics.write_entries.len()));
    w.u64(rec.metrics.cycles);
    w.bytes(&rec.metrics.coverage.to_bytes());
    write_entries(w, &rec.seed.gpr_entries);
    write_entries(w, &rec.seed.read_entries);
    write_entries(w, &rec.metrics.write_entries);
}

fn entries(r: &mut Reader<'_>, n: u8, flag: u8) -> Result<Vec<SeedEntry>, FormatError> {
    (0..n)
        .map(|_| {
            let e = SeedEntry::from_bytes(&r.array::<ENTRY_BYTES>()?);
            if e.flag != flag || !e.is_well_formed() {
                return Err(FormatError::Malformed(format!(
                    "entry {{flag {:#04x}, encoding {}}} where flag {flag:#04x} was expected",
                    e.flag, e.encoding
                )));
            }
            Ok(e)
        })
        .collect()
}

pub fn deserialize_trace(bytes: &[u8]) -> Result<TraceFile, TraceError> {
    let mut r = Reader::new(bytes);
    r.preamble(TRACE_MAGIC, TRACE_VERSION)?;
    let field_table_hash = r.field_table_hash()?;
    let workload = r.str16()?;
    let rng_algorithm = r.str16()?;
    let rng_seed = r.u64()?;
    let exit_count = r.u64()?;
    let mut records = Vec::new();
    for _ in 0..exit_count {
        records.push(deserialize_record(&mut r)?);
    }
    r.finish()?;
    Ok(TraceFile {
        header: TraceHeader { workload, rng_algorithm, rng_seed, exit_count, field_table_hash },
        records,
    })
}

fn deserialize_record(r: &mut Reader<'_>) -> Result<TraceRecord, FormatError> {
    let exit_reason = r.u16()?;
    let gpr_count = r.u8()?;
    if usize::from(gpr_count) != GPR_COUNT {
        return Err(FormatError::Malformed(format!("record has {gpr_count} GPR entries")));
    }
    let read_count = r.u8()?;
    let write_count = r.u8()?;
    let cycles = r.u64()?;
    let coverage = CoverageBitmap::from_bytes(&r.array::<BITMAP_BYTES>()?)
        .ok_or_else(|| FormatError::Malformed("coverage bits beyond block table".into()))?;
    let gpr_entries = entries(r, gpr_count, FLAG_GPR)?;
    let read_entries = entries(r, read_count, FLAG_VMCS_READ)?;
    let write_entries = entries(r, write_count, FLAG_VMCS_WRITE)?;
    Ok(TraceRecord {
        seed: VmSeed { exit_reason, gpr_entries, read_entries },
        metrics: ExitMetrics { coverage, write_entries, cycles },
    })
}

/// A single-record trace holding one seed, used for crash artifacts.
pub fn seed_fragment(header: &TraceHeader, seed: &VmSeed) -> TraceFile {
    let mut t = TraceFile::new(TraceHeader { exit_count: 0, ..header.clone() });
    t.push(TraceRecord {
        seed: seed.clone(),
        metrics: ExitMetrics { coverage: CoverageBitmap::new(), write_entries: Vec::new(), cycles: 0 },
    });
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_header_only() {
        let t = TraceFile::new(TraceHeader::new("IDLE", "chacha8", 1));
        let bytes = serialize_trace(&t);
        assert_eq!(&bytes[..4], b"IRIS");
        assert_eq!(bytes.len(), 4 + 2 + 8 + (2 + 4) + (2 + 7) + 8 + 8);
        assert_eq!(deserialize_trace(&bytes).unwrap(), t);
    }

    #[test]
    fn corrupt_streams() {
        let t = TraceFile::new(TraceHeader::new("IDLE", "chacha8", 1));
        let good = serialize_trace(&t);
        let mut b = good.clone();
        b[1] = 0;
        assert!(matches!(deserialize_trace(&b), Err(FormatError::BadMagic { .. })));
        let mut b = good.clone();
        b[4] = 9;
        assert_eq!(deserialize_trace(&b), Err(FormatError::UnsupportedVersion(9)));
        let mut b = good.clone();
        b[6] ^= 1;
        assert!(matches!(deserialize_trace(&b), Err(FormatError::FieldTableMismatch { .. })));
        assert!(matches!(
            deserialize_trace(&good[..good.len() - 3]),
            Err(FormatError::TruncatedStream(_))
        ));
    }
}
