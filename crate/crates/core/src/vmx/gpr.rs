use std::fmt;

/// General-purpose registers held in the hypervisor's vCPU structure. RSP is
/// not here: it lives in the VMCS guest-state area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum GprId {
    Rax = 0,
    Rbx = 1,
    Rcx = 2,
    Rdx = 3,
    Rsi = 4,
    Rdi = 5,
    Rbp = 6,
    R8 = 7,
    R9 = 8,
    R10 = 9,
    R11 = 10,
    R12 = 11,
    R13 = 12,
    R14 = 13,
    R15 = 14,
}

pub const GPR_COUNT: usize = 15;

const ALL_GPRS: [GprId; GPR_COUNT] = [
    GprId::Rax,
    GprId::Rbx,
    GprId::Rcx,
    GprId::Rdx,
    GprId::Rsi,
    GprId::Rdi,
    GprId::Rbp,
    GprId::R8,
    GprId::R9,
    GprId::R10,
    GprId::R11,
    GprId::R12,
    GprId::R13,
    GprId::R14,
    GprId::R15,
];

const NAMES: [&str; GPR_COUNT] = [
    "RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "R8", "R9", "R10", "R11", "R12", "R13",
    "R14", "R15",
];

impl GprId {
    pub fn all() -> [GprId; GPR_COUNT] {
        ALL_GPRS
    }

    pub fn from_encoding(encoding: u8) -> Option<GprId> {
        ALL_GPRS.get(usize::from(encoding)).copied()
    }

    pub fn encoding(self) -> u8 {
        self as u8
    }

    /// Maps the register numbering used in exit qualifications
    /// (0=RAX, 1=RCX, 2=RDX, 3=RBX, 4=RSP, 5=RBP, 6=RSI, 7=RDI, 8..15=R8..R15).
    /// Number 4 (RSP) has no slot here and returns `None`.
    pub fn from_qualification(n: u8) -> Option<GprId> {
        match n & 0xF {
            0 => Some(GprId::Rax),
            1 => Some(GprId::Rcx),
            2 => Some(GprId::Rdx),
            3 => Some(GprId::Rbx),
            4 => None,
            5 => Some(GprId::Rbp),
            6 => Some(GprId::Rsi),
            7 => Some(GprId::Rdi),
            n => GprId::from_encoding(n - 1),
        }
    }

    pub fn name(self) -> &'static str {
        NAMES[self as usize]
    }
}

impl fmt::Display for GprId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GprFile {
    regs: [u64; GPR_COUNT],
}

impl GprFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_array(regs: [u64; GPR_COUNT]) -> Self {
        Self { regs }
    }

    #[inline]
    pub fn get(&self, id: GprId) -> u64 {
        self.regs[id as usize]
    }

    #[inline]
    pub fn set(&mut self, id: GprId, value: u64) {
        self.regs[id as usize] = value;
    }

    pub fn as_array(&self) -> &[u64; GPR_COUNT] {
        &self.regs
    }

    pub fn iter(&self) -> impl Iterator<Item = (GprId, u64)> + '_ {
        ALL_GPRS.iter().map(move |&id| (id, self.get(id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualification_numbering() {
        assert_eq!(GprId::from_qualification(0), Some(GprId::Rax));
        assert_eq!(GprId::from_qualification(3), Some(GprId::Rbx));
        assert_eq!(GprId::from_qualification(4), None);
        assert_eq!(GprId::from_qualification(8), Some(GprId::R8));
        assert_eq!(GprId::from_qualification(15), Some(GprId::R15));
    }

    #[test]
    fn encodings_cover_zero_to_fourteen() {
        for (i, id) in GprId::all().into_iter().enumerate() {
            assert_eq!(id.encoding() as usize, i);
            assert_eq!(GprId::from_encoding(i as u8), Some(id));
        }
        assert_eq!(GprId::from_encoding(15), None);
    }
}
