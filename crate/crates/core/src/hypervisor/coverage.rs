use super::blocks::{Block, BLOCK_COUNT};
use std::fmt;

const WORDS: usize = BLOCK_COUNT.div_ceil(64);

/// Width of the serialized bitmap in bytes.
pub const BITMAP_BYTES: usize = BLOCK_COUNT.div_ceil(8);

/// One bit per instrumented basic block.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CoverageBitmap {
    words: [u64; WORDS],
}

impl CoverageBitmap {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn set(&mut self, block: Block) {
        let id = block.id() as usize;
        self.words[id / 64] |= 1 << (id % 64);
    }

    #[inline]
    pub fn contains(&self, block: Block) -> bool {
        let id = block.id() as usize;
        self.words[id / 64] & (1 << (id % 64)) != 0
    }

    pub fn clear(&mut self) {
        self.words = [0; WORDS];
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &CoverageBitmap) {
        for (a, b) in self.words.iter_mut().zip(other.words.iter()) {
            *a |= *b;
        }
    }

    /// Blocks in `self` that are not in `other`.
    pub fn difference(&self, other: &CoverageBitmap) -> CoverageBitmap {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a &= !*b;
        }
        out
    }

    pub fn symmetric_difference_count(&self, other: &CoverageBitmap) -> usize {
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn is_superset_of(&self, other: &CoverageBitmap) -> bool {
        other.difference(self).is_empty()
    }

    pub fn blocks(&self) -> impl Iterator<Item = Block> + '_ {
        (0..BLOCK_COUNT as u16)
            .filter_map(Block::from_id)
            .filter(|b| self.contains(*b))
    }

    pub fn to_bytes(&self) -> [u8; BITMAP_BYTES] {
        let mut out = [0u8; BITMAP_BYTES];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = (self.words[i / 8] >> ((i % 8) * 8)) as u8;
        }
        out
    }

    /// Returns `None` if a bit beyond the block table is set.
    pub fn from_bytes(bytes: &[u8; BITMAP_BYTES]) -> Option<Self> {
        let mut words = [0u64; WORDS];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= u64::from(byte) << ((i % 8) * 8);
        }
        let map = Self { words };
        let valid = (0..WORDS * 64).all(|bit| bit < BLOCK_COUNT || words[bit / 64] & (1 << (bit % 64)) == 0);
        valid.then_some(map)
    }
}

impl FromIterator<Block> for CoverageBitmap {
    fn from_iter<I: IntoIterator<Item = Block>>(iter: I) -> Self {
        let mut map = CoverageBitmap::new();
        for b in iter {
            map.set(b);
        }
        map
    }
}

impl fmt::Debug for CoverageBitmap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.blocks()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_ops() {
        let a: CoverageBitmap = [Block::DispatchEntry, Block::RdtscEntry].into_iter().collect();
        let b: CoverageBitmap = [Block::DispatchEntry].into_iter().collect();
        assert_eq!(a.count(), 2);
        assert!(a.is_superset_of(&b));
        assert_eq!(a.difference(&b).blocks().collect::<Vec<_>>(), vec![Block::RdtscEntry]);
        assert_eq!(a.symmetric_difference_count(&b), 1);
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(ids in proptest::collection::vec(0..BLOCK_COUNT as u16, 0..40)) {
            let map: CoverageBitmap = ids.iter().filter_map(|&i| Block::from_id(i)).collect();
            prop_assert_eq!(CoverageBitmap::from_bytes(&map.to_bytes()), Some(map));
        }
    }
}
