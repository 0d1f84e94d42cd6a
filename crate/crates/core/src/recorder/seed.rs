use crate::hypervisor::CoverageBitmap;
use crate::vmx::fields::ENCODING_SPACE;
use crate::vmx::{ExitReason, Field, GprFile, GprId, GPR_COUNT};

pub const FLAG_GPR: u8 = 0x01;
pub const FLAG_VMCS_READ: u8 = 0x02;
pub const FLAG_VMCS_WRITE: u8 = 0x03;

pub const ENTRY_BYTES: usize = 10;

/// Reads per exit covered by the worst-case seed size.
pub const WORST_CASE_READS: usize = 32;

/// Worst-case seed payload: 15 GPR entries and 32 read entries.
pub const WORST_CASE_SEED_BYTES: usize = ENTRY_BYTES * (GPR_COUNT + WORST_CASE_READS);

/// `{flag, encoding, value}`, 10 bytes on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedEntry {
    pub flag: u8,
    pub encoding: u8,
    pub value: u64,
}

impl SeedEntry {
    pub fn gpr(id: GprId, value: u64) -> Self {
        Self { flag: FLAG_GPR, encoding: id.encoding(), value }
    }

    pub fn read(field: Field, value: u64) -> Self {
        Self { flag: FLAG_VMCS_READ, encoding: field.encoding(), value }
    }

    pub fn write(field: Field, value: u64) -> Self {
        Self { flag: FLAG_VMCS_WRITE, encoding: field.encoding(), value }
    }

    /// Whether flag and encoding are within their ranges.
    pub fn is_well_formed(&self) -> bool {
        match self.flag {
            FLAG_GPR => usize::from(self.encoding) < GPR_COUNT,
            FLAG_VMCS_READ | FLAG_VMCS_WRITE => u16::from(self.encoding) < ENCODING_SPACE,
            _ => false,
        }
    }

    pub fn field(&self) -> Option<Field> {
        match self.flag {
            FLAG_VMCS_READ | FLAG_VMCS_WRITE => Field::from_encoding(u16::from(self.encoding)),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> [u8; ENTRY_BYTES] {
        let mut b = [0u8; ENTRY_BYTES];
        b[0] = self.flag;
        b[1] = self.encoding;
        b[2..].copy_from_slice(&self.value.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; ENTRY_BYTES]) -> Self {
        Self {
            flag: b[0],
            encoding: b[1],
            value: u64::from_le_bytes(b[2..].try_into().expect("8 bytes")),
        }
    }
}

/// One exit's recorded input.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VmSeed {
    pub exit_reason: u16,
    pub gpr_entries: Vec<SeedEntry>,
    pub read_entries: Vec<SeedEntry>,
}

impl VmSeed {
    pub fn new(reason: ExitReason, gprs: &GprFile, reads: &[(Field, u64)]) -> Self {
        Self {
            exit_reason: reason.code(),
            gpr_entries: gprs.iter().map(|(id, v)| SeedEntry::gpr(id, v)).collect(),
            read_entries: reads.iter().map(|&(f, v)| SeedEntry::read(f, v)).collect(),
        }
    }

    pub fn reason(&self) -> ExitReason {
        ExitReason::from_code(self.exit_reason)
    }

    /// Size of the entry payload (reason excluded).
    pub fn payload_size(&self) -> usize {
        ENTRY_BYTES * (self.gpr_entries.len() + self.read_entries.len())
    }

    /// Payload plus the 2-byte reason.
    pub fn serialized_size(&self) -> usize {
        2 + self.payload_size()
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_size());
        for e in self.gpr_entries.iter().chain(&self.read_entries) {
            out.extend_from_slice(&e.to_bytes());
        }
        out
    }

    /// Reason (LE) followed by the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_size());
        out.extend_from_slice(&self.exit_reason.to_le_bytes());
        out.extend_from_slice(&self.payload_bytes());
        out
    }

    pub fn gprs(&self) -> GprFile {
        let mut file = GprFile::new();
        for e in &self.gpr_entries {
            if let Some(id) = GprId::from_encoding(e.encoding) {
                file.set(id, e.value);
            }
        }
        file
    }
}

/// Per-exit measurements taken alongside the seed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExitMetrics {
    pub coverage: CoverageBitmap,
    pub write_entries: Vec<SeedEntry>,
    pub cycles: u64,
}

impl ExitMetrics {
    pub fn writes_to(&self, field: Field) -> impl Iterator<Item = u64> + '_ {
        self.write_entries
            .iter()
            .filter(move |e| e.encoding == field.encoding())
            .map(|e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worst_case_is_470_bytes() {
        assert_eq!(WORST_CASE_SEED_BYTES, 470);
        let reads: Vec<_> = (0..32).map(|i| (Field::GuestCr0, i)).collect();
        let seed = VmSeed::new(ExitReason::TripleFault, &GprFile::new(), &reads);
        assert_eq!(seed.payload_bytes().len(), 470);
        assert_eq!(seed.serialized_size(), 472);
    }

    #[test]
    fn entry_layout_is_little_endian() {
        let e = SeedEntry::read(Field::ExitQualification, 0x0102_0304_0506_0708);
        assert_eq!(e.to_bytes(), [2, 47, 8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(SeedEntry::from_bytes(&e.to_bytes()), e);
    }

    #[test]
    fn well_formedness() {
        assert!(SeedEntry { flag: FLAG_GPR, encoding: 14, value: 0 }.is_well_formed());
        assert!(!SeedEntry { flag: FLAG_GPR, encoding: 15, value: 0 }.is_well_formed());
        assert!(SeedEntry { flag: FLAG_VMCS_READ, encoding: 146, value: 0 }.is_well_formed());
        assert!(!SeedEntry { flag: FLAG_VMCS_READ, encoding: 147, value: 0 }.is_well_formed());
        assert!(!SeedEntry { flag: 0, encoding: 0, value: 0 }.is_well_formed());
    }

    proptest! {
        #[test]
        fn size_law(k in 1usize..=32, v in any::<u64>()) {
            let reads: Vec<_> = (0..k).map(|_| (Field::ExitReason, v)).collect();
            let seed = VmSeed::new(ExitReason::Cpuid, &GprFile::new(), &reads);
            prop_assert_eq!(seed.payload_bytes().len(), 10 * (15 + k));
            prop_assert_eq!(seed.to_bytes().len(), 2 + 10 * (15 + k));
        }
    }
}
