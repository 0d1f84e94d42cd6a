//! Little-endian framing helpers shared by the trace, snapshot and program
//! containers.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("field-table hash mismatch: file has {found:#018x}, this build has {expected:#018x}")]
    FieldTableMismatch { expected: u64, found: u64 },
    #[error("stream truncated at byte {0}")]
    TruncatedStream(usize),
    #[error("malformed stream: {0}")]
    Malformed(String),
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    /// u16 length prefix followed by UTF-8 bytes.
    pub fn str16(&mut self, s: &str) {
        let len = u16::try_from(s.len()).expect("string longer than 64 KiB");
        self.u16(len);
        self.bytes(s.as_bytes());
    }

    pub fn str32(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or(FormatError::TruncatedStream(self.data.len()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn utf8(bytes: &[u8]) -> Result<String, FormatError> {
        String::from_utf8(bytes.to_vec())
            .map_err(|_| FormatError::Malformed("string is not UTF-8".into()))
    }

    pub fn str16(&mut self) -> Result<String, FormatError> {
        let len = self.u16()? as usize;
        Self::utf8(self.take(len)?)
    }

    pub fn str32(&mut self) -> Result<String, FormatError> {
        let len = self.u32()? as usize;
        Self::utf8(self.take(len)?)
    }

    /// Checks magic, version and (optionally) the field-table hash.
    pub fn preamble(&mut self, magic: [u8; 4], version: u16) -> Result<(), FormatError> {
        let found = self.array::<4>()?;
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found });
        }
        let v = self.u16()?;
        if v != version {
            return Err(FormatError::UnsupportedVersion(v));
        }
        Ok(())
    }

    pub fn field_table_hash(&mut self) -> Result<u64, FormatError> {
        let found = self.u64()?;
        let expected = crate::vmx::fields::field_table_hash();
        if found != expected {
            return Err(FormatError::FieldTableMismatch { expected, found });
        }
        Ok(found)
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )))
        }
    }
}
