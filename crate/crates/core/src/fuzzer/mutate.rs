use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FuzzError;
use crate::recorder::{SeedEntry, VmSeed};
use crate::vmx::Field;

/// Portion of a seed a mutation may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SeedArea {
    Vmcs,
    Gpr,
}

impl SeedArea {
    pub const ALL: [SeedArea; 2] = [SeedArea::Vmcs, SeedArea::Gpr];

    pub fn name(self) -> &'static str {
        match self {
            SeedArea::Vmcs => "VMCS",
            SeedArea::Gpr => "GPR",
        }
    }
}

impl std::str::FromStr for SeedArea {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "VMCS" => Ok(SeedArea::Vmcs),
            "GPR" => Ok(SeedArea::Gpr),
            _ => Err(format!("unknown seed area {s:?} (expected VMCS or GPR)")),
        }
    }
}

/// One bit flip: entry `entry_index` of the area, bit `bit_index` of its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mutation {
    pub area: SeedArea,
    pub entry_index: usize,
    pub bit_index: u8,
}

fn area_entries(seed: &mut VmSeed, area: SeedArea) -> &mut Vec<SeedEntry> {
    match area {
        SeedArea::Vmcs => &mut seed.read_entries,
        SeedArea::Gpr => &mut seed.gpr_entries,
    }
}

/// `seed` with the bit named by `m` flipped.
pub fn apply_mutation(seed: &VmSeed, m: Mutation) -> Result<VmSeed, FuzzError> {
    let mut out = seed.clone();
    let entries = area_entries(&mut out, m.area);
    let entry = entries
        .get_mut(m.entry_index)
        .ok_or(FuzzError::EmptyArea(m.area))?;
    entry.value ^= 1u64 << (m.bit_index & 63);
    Ok(out)
}

/// Flips one uniformly chosen bit of one uniformly chosen entry in `area`.
pub fn mutate_single_bitflip<R: Rng + ?Sized>(
    seed: &VmSeed,
    area: SeedArea,
    rng: &mut R,
) -> Result<(VmSeed, Mutation), FuzzError> {
    let len = match area {
        SeedArea::Vmcs => seed.read_entries.len(),
        SeedArea::Gpr => seed.gpr_entries.len(),
    };
    if len == 0 {
        return Err(FuzzError::EmptyArea(area));
    }
    let m = Mutation {
        area,
        entry_index: rng.gen_range(0..len),
        bit_index: rng.gen_range(0..64),
    };
    Ok((apply_mutation(seed, m)?, m))
}

/// The bit whose flip turns a MOV-to-CR0 exit qualification into a CR8
/// access, which the handler only expects with CR8 exiting enabled.
pub const HYPCRASH_FIELD: Field = Field::ExitQualification;
pub const HYPCRASH_BIT: u8 = 3;

/// Mutation flipping [`HYPCRASH_BIT`] of the seed's first exit
/// qualification read, if it has one.
pub fn hypcrash_mutation(seed: &VmSeed) -> Option<Mutation> {
    seed.read_entries
        .iter()
        .position(|e| e.field() == Some(HYPCRASH_FIELD))
        .map(|entry_index| Mutation { area: SeedArea::Vmcs, entry_index, bit_index: HYPCRASH_BIT })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::generate::rng_from_seed;
    use crate::vmx::{ExitReason, GprFile, GprId};
    use proptest::prelude::*;

    fn seed() -> VmSeed {
        let mut g = GprFile::new();
        g.set(GprId::Rax, 0xFFFF_FFF0);
        VmSeed::new(
            ExitReason::Rdtsc,
            &g,
            &[(Field::ExitReason, 16), (Field::GuestCr4, 0x2000), (Field::TscOffset, 0)],
        )
    }

    #[test]
    fn flips_low_bit() {
        let s = seed();
        let m = Mutation { area: SeedArea::Gpr, entry_index: 0, bit_index: 0 };
        let out = apply_mutation(&s, m).unwrap();
        assert_eq!(out.gpr_entries[0].value, 0xFFFF_FFF1);
        assert_eq!(out.read_entries, s.read_entries);
        assert_eq!(apply_mutation(&out, m).unwrap(), s);
    }

    #[test]
    fn empty_area() {
        let s = VmSeed::new(ExitReason::Rdtsc, &GprFile::new(), &[]);
        let mut rng = rng_from_seed(0);
        assert_eq!(
            mutate_single_bitflip(&s, SeedArea::Vmcs, &mut rng).unwrap_err(),
            FuzzError::EmptyArea(SeedArea::Vmcs)
        );
    }

    fn hamming(a: &[u8], b: &[u8]) -> u32 {
        a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
    }

    proptest! {
        #[test]
        fn one_bit_law(rng_seed in any::<u64>(), gpr in any::<bool>()) {
            let s = seed();
            let area = if gpr { SeedArea::Gpr } else { SeedArea::Vmcs };
            let (out, m) = mutate_single_bitflip(&s, area, &mut rng_from_seed(rng_seed)).unwrap();
            prop_assert_eq!(m.area, area);
            prop_assert_eq!(hamming(&s.to_bytes(), &out.to_bytes()), 1);
            match area {
                SeedArea::Gpr => prop_assert_eq!(&out.read_entries, &s.read_entries),
                SeedArea::Vmcs => prop_assert_eq!(&out.gpr_entries, &s.gpr_entries),
            }
        }
    }
}
