use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ExoError;
use crate::Result;

/// An ordered set of factor indices, the unit of all combinatorial search.
///
/// Indices are kept strictly ascending with no duplicates, which fixes a
/// canonical coordinate order for restrictions `s[I]` and makes set algebra
/// (union, intersection, difference) order-preserving.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorSet {
    indices: Vec<usize>,
}

impl FactorSet {
    /// Builds a set from arbitrary indices, sorting and deduplicating.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        FactorSet { indices: v }
    }

    pub fn empty() -> Self {
        FactorSet { indices: Vec::new() }
    }

    pub fn singleton(i: usize) -> Self {
        FactorSet { indices: vec![i] }
    }

    /// The full set `{0, .., d-1}`.
    pub fn full(d: usize) -> Self {
        FactorSet {
            indices: (0..d).collect(),
        }
    }

    /// Checks every index is below `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= d) {
            Some(&i) => Err(ExoError::InvalidArgument(format!(
                "factor index {i} out of range for d={d}"
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_subset_of(&self, other: &FactorSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn union(&self, other: &FactorSet) -> FactorSet {
        let mut v = self.indices.clone();
        v.extend_from_slice(&other.indices);
        FactorSet::from_indices(v)
    }

    pub fn intersection(&self, other: &FactorSet) -> FactorSet {
        FactorSet {
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| other.contains(i))
                .collect(),
        }
    }

    pub fn difference(&self, other: &FactorSet) -> FactorSet {
        FactorSet {
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&i| !other.contains(i))
                .collect(),
        }
    }

    /// Complement within `{0, .., d-1}`.
    pub fn complement(&self, d: usize) -> FactorSet {
        FactorSet {
            indices: (0..d).filter(|&i| !self.contains(i)).collect(),
        }
    }

    /// Position of factor `i` within this set's canonical order, if present.
    pub fn position_of(&self, i: usize) -> Option<usize> {
        self.indices.binary_search(&i).ok()
    }
}

impl fmt::Display for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.indices.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// All factor sets `I` with `base ⊆ I ⊆ {0,..,d-1}` and `|I| ≤ k`, in
/// ascending cardinality and lexicographic order (on the sorted index
/// lists) within each cardinality.
///
/// This is the canonical scan order of every minimal-cardinality search in
/// the crate: the first satisfier under this order is the answer, which
/// makes reruns deterministic and testable.
pub fn subsets_up_to(d: usize, k: usize, base: &FactorSet) -> Vec<FactorSet> {
    let mut out = Vec::new();
    for size in base.len()..=k.min(d) {
        out.extend(subsets_exactly(d, size, base));
    }
    out
}

/// All supersets of `base` within `{0,..,d-1}` of exact cardinality `size`,
/// lexicographically ordered.
pub fn subsets_exactly(d: usize, size: usize, base: &FactorSet) -> Vec<FactorSet> {
    if size < base.len() || size > d {
        return Vec::new();
    }
    let free: Vec<usize> = (0..d).filter(|&i| !base.contains(i)).collect();
    let choose = size - base.len();
    let mut out = Vec::new();
    for combo in combinations(&free, choose) {
        let mut v = base.indices.clone();
        v.extend(combo);
        v.sort_unstable();
        out.push(FactorSet { indices: v });
    }
    // Lexicographic order of the free parts survives the merge with a fixed
    // base, but sorting here keeps the guarantee independent of that fact.
    out.sort();
    out
}

/// Lexicographic `choose`-combinations of `pool` (itself assumed sorted).
fn combinations(pool: &[usize], choose: usize) -> Vec<Vec<usize>> {
    let n = pool.len();
    if choose > n {
        return Vec::new();
    }
    if choose == 0 {
        return vec![Vec::new()];
    }
    let mut idx: Vec<usize> = (0..choose).collect();
    let mut out = Vec::new();
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // advance the rightmost index that can still move
        let mut pos = choose;
        while pos > 0 {
            pos -= 1;
            if idx[pos] != pos + n - choose {
                idx[pos] += 1;
                for later in pos + 1..choose {
                    idx[later] = idx[later - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return out;
            }
        }
    }
}

/// Binomial coefficient, saturating; used for candidate counting.
pub fn binomial(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u64 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}
