use serde::{Deserialize, Serialize};

use crate::factor::FactorSet;

/// Packed mixed-radix encoding of a state restriction `s[I]`.
///
/// Digits follow the set's canonical (ascending-index) order with the first
/// factor most significant and radix `S` per digit, so for a fixed `(I, S)`
/// the encoding is a bijection onto `0..S^|I|`.
pub type StateIndex = usize;

/// A joint state: one value in `[0, S)` per factor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactoredState {
    pub coords: Vec<u8>,
}

impl FactoredState {
    pub fn new(coords: Vec<u8>) -> Self {
        FactoredState { coords }
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }

    /// Mixed-radix packing of the coordinates selected by `set`.
    pub fn restrict(&self, set: &FactorSet, s_per_factor: usize) -> StateIndex {
        let mut packed = 0usize;
        for i in set.iter() {
            packed = packed * s_per_factor + self.coords[i] as usize;
        }
        packed
    }

    /// Packs the full coordinate vector (restriction to all factors).
    pub fn joint_index(&self, s_per_factor: usize) -> StateIndex {
        let mut packed = 0usize;
        for &c in &self.coords {
            packed = packed * s_per_factor + c as usize;
        }
        packed
    }
}

/// `S^m`: the number of restriction values on an `m`-factor set.
pub fn restriction_count(m: usize, s_per_factor: usize) -> usize {
    s_per_factor.pow(m as u32)
}

/// Decodes a packed restriction back into per-factor digits, canonical order.
pub fn unpack_restriction(mut packed: StateIndex, m: usize, s_per_factor: usize) -> Vec<u8> {
    let mut digits = vec![0u8; m];
    for pos in (0..m).rev() {
        digits[pos] = (packed % s_per_factor) as u8;
        packed /= s_per_factor;
    }
    debug_assert_eq!(packed, 0, "packed index out of range for m={m}");
    digits
}

/// Decodes a full joint index into a state.
pub fn unpack_joint(packed: StateIndex, d: usize, s_per_factor: usize) -> FactoredState {
    FactoredState::new(unpack_restriction(packed, d, s_per_factor))
}

/// Re-packs a restriction on `from` as a restriction on `to ⊆ from`.
///
/// This is the projection `s[from] ↓ to` used when a policy acting on a
/// smaller set is evaluated against a recorded larger restriction.
pub fn project_restriction(
    packed: StateIndex,
    from: &FactorSet,
    to: &FactorSet,
    s_per_factor: usize,
) -> StateIndex {
    debug_assert!(to.is_subset_of(from));
    let digits = unpack_restriction(packed, from.len(), s_per_factor);
    let mut out = 0usize;
    for i in to.iter() {
        let pos = from
            .position_of(i)
            .expect("projection target not contained in source set");
        out = out * s_per_factor + digits[pos] as usize;
    }
    out
}

/// Merges restrictions on two disjoint sets into a restriction on the union.
///
/// Inverse of splitting: for disjoint `I1, I2`, merging `s[I1]` and `s[I2]`
/// reproduces `s[I1 ∪ I2]`.
pub fn merge_restrictions(
    set1: &FactorSet,
    packed1: StateIndex,
    set2: &FactorSet,
    packed2: StateIndex,
    s_per_factor: usize,
) -> (FactorSet, StateIndex) {
    debug_assert!(set1.intersection(set2).is_empty());
    let union = set1.union(set2);
    let d1 = unpack_restriction(packed1, set1.len(), s_per_factor);
    let d2 = unpack_restriction(packed2, set2.len(), s_per_factor);
    let mut packed = 0usize;
    for i in union.iter() {
        let digit = match set1.position_of(i) {
            Some(p) => d1[p],
            None => d2[set2.position_of(i).expect("index missing from both sets")],
        };
        packed = packed * s_per_factor + digit as usize;
    }
    (union, packed)
}
