//! CR0 bit layout and the seven-way operating-mode classification.

use std::fmt;

pub const CR0_PE: u64 = 1 << 0;
pub const CR0_MP: u64 = 1 << 1;
pub const CR0_EM: u64 = 1 << 2;
pub const CR0_TS: u64 = 1 << 3;
pub const CR0_ET: u64 = 1 << 4;
pub const CR0_NE: u64 = 1 << 5;
pub const CR0_WP: u64 = 1 << 16;
pub const CR0_AM: u64 = 1 << 18;
pub const CR0_NW: u64 = 1 << 29;
pub const CR0_CD: u64 = 1 << 30;
pub const CR0_PG: u64 = 1 << 31;

/// Bits that may be set in CR0; everything else is reserved.
pub const CR0_DEFINED: u64 = CR0_PE
    | CR0_MP
    | CR0_EM
    | CR0_TS
    | CR0_ET
    | CR0_NE
    | CR0_WP
    | CR0_AM
    | CR0_NW
    | CR0_CD
    | CR0_PG;

pub const CR0_RESERVED: u64 = !CR0_DEFINED;

/// Guest operating mode as derived from CR0.
///
/// `Mode1` is real mode and `Mode2` protected mode without paging. The
/// remaining classes all have PE and PG set and are told apart by AM, TS, CD
/// and NW:
///
/// | mode  | AM | TS | CD | NW |
/// |-------|----|----|----|----|
/// | Mode3 | 0  | *  | *  | *  |
/// | Mode4 | 1  | 0  | CD=1 or NW=1 |
/// | Mode5 | 1  | 1  | 0  | *  |
/// | Mode6 | 1  | 0  | 0  | 0  |
/// | Mode7 | 1  | 1  | 1  | *  |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CpuMode {
    Mode1,
    Mode2,
    Mode3,
    Mode4,
    Mode5,
    Mode6,
    Mode7,
}

impl CpuMode {
    pub const ALL: [CpuMode; 7] = [
        CpuMode::Mode1,
        CpuMode::Mode2,
        CpuMode::Mode3,
        CpuMode::Mode4,
        CpuMode::Mode5,
        CpuMode::Mode6,
        CpuMode::Mode7,
    ];

    /// Zero-based index, as printed in hypervisor log lines ("mode 0" is
    /// `Mode1`).
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<CpuMode> {
        CpuMode::ALL.get(usize::from(index)).copied()
    }

    pub fn is_real(self) -> bool {
        self == CpuMode::Mode1
    }

    pub fn has_paging(self) -> bool {
        self >= CpuMode::Mode3
    }
}

impl fmt::Display for CpuMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mode{}", self.index() + 1)
    }
}

pub fn classify_cr0_mode(cr0: u64) -> CpuMode {
    let set = |bit: u64| cr0 & bit != 0;
    if !set(CR0_PE) {
        return CpuMode::Mode1;
    }
    if !set(CR0_PG) {
        return CpuMode::Mode2;
    }
    if !set(CR0_AM) {
        return CpuMode::Mode3;
    }
    match (set(CR0_TS), set(CR0_CD), set(CR0_NW)) {
        (true, true, _) => CpuMode::Mode7,
        (true, false, _) => CpuMode::Mode5,
        (false, false, false) => CpuMode::Mode6,
        (false, _, _) => CpuMode::Mode4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(classify_cr0_mode(0), CpuMode::Mode1);
        assert_eq!(classify_cr0_mode(0x1), CpuMode::Mode2);
        assert_eq!(classify_cr0_mode(0x8000_0001), CpuMode::Mode3);
        assert_eq!(classify_cr0_mode(CR0_PG), CpuMode::Mode1);
        assert_eq!(classify_cr0_mode(CR0_PE | CR0_PG | CR0_AM), CpuMode::Mode6);
        assert_eq!(classify_cr0_mode(CR0_PE | CR0_PG | CR0_AM | CR0_CD), CpuMode::Mode4);
        assert_eq!(classify_cr0_mode(CR0_PE | CR0_PG | CR0_AM | CR0_TS), CpuMode::Mode5);
        assert_eq!(
            classify_cr0_mode(CR0_PE | CR0_PG | CR0_AM | CR0_TS | CR0_CD),
            CpuMode::Mode7
        );
    }

    /// Oracle: enumerate every combination of the six classifying bits and
    /// check each class is hit and each input lands in exactly one class.
    #[test]
    fn partition_over_classifying_bits() {
        let bits = [CR0_PE, CR0_PG, CR0_AM, CR0_TS, CR0_CD, CR0_NW];
        let mut counts = [0usize; 7];
        for combo in 0u32..64 {
            let cr0 = bits
                .iter()
                .enumerate()
                .filter(|(i, _)| combo & (1 << i) != 0)
                .fold(0u64, |acc, (_, b)| acc | b);
            counts[classify_cr0_mode(cr0).index() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 64);
        // PE=0 covers half the space.
        assert_eq!(counts[0], 32);
        assert_eq!(counts[1], 16);
        assert_eq!(counts[2], 8);
    }
}
