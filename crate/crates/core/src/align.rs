//! Shared-surface-form alignment and the token-derived confound covariates.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired row indices into two token matrices.
///
/// `idx_a` is strictly increasing. `idx_b` holds distinct indices but follows
/// the order of `idx_a`, so it need not be increasing when different surface
/// forms appear in a different order in the two sequences.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignedPositions {
    pub idx_a: Vec<usize>,
    pub idx_b: Vec<usize>,
}

impl AlignedPositions {
    /// Identity alignment over `len` positions.
    pub fn identity(len: usize) -> Self {
        Self {
            idx_a: (0..len).collect(),
            idx_b: (0..len).collect(),
        }
    }

    pub fn new(idx_a: Vec<usize>, idx_b: Vec<usize>) -> Result<Self> {
        if idx_a.len() != idx_b.len() {
            return Err(Error::Dimension(format!(
                "alignment sides differ in length: {} vs {}",
                idx_a.len(),
                idx_b.len()
            )));
        }
        if idx_a.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "alignment positions on side a must be strictly increasing".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(idx_b.len());
        if !idx_b.iter().all(|i| seen.insert(*i)) {
            return Err(Error::InvalidInput(
                "alignment positions on side b must be distinct".into(),
            ));
        }
        Ok(Self { idx_a, idx_b })
    }

    pub fn len(&self) -> usize {
        self.idx_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx_a.is_empty()
    }

    /// Same pairs with the roles of the two sequences exchanged, re-sorted by
    /// the new first side.
    pub fn swapped(&self) -> Self {
        let mut pairs: Vec<(usize, usize)> =
            self.idx_b.iter().copied().zip(self.idx_a.iter().copied()).collect();
        pairs.sort_unstable();
        let (idx_a, idx_b) = pairs.into_iter().unzip();
        Self { idx_a, idx_b }
    }
}

/// Pairs the k-th occurrence of each surface form in `a` with its k-th
/// occurrence in `b`, for k up to the smaller occurrence count. The result is
/// ordered by position in `a`.
pub fn shared_token_positions<S: AsRef<str>>(a: &[S], b: &[S]) -> AlignedPositions {
    let mut occurrences: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, tok) in b.iter().enumerate() {
        occurrences.entry(tok.as_ref()).or_default().push(j);
    }
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut out = AlignedPositions::default();
    for (i, tok) in a.iter().enumerate() {
        let tok = tok.as_ref();
        let Some(positions) = occurrences.get(tok) else {
            continue;
        };
        let k = used.entry(tok).or_insert(0);
        if let Some(&j) = positions.get(*k) {
            out.idx_a.push(i);
            out.idx_b.push(j);
            *k += 1;
        }
    }
    out
}

/// Default minimum number of aligned positions for a pair to be kept.
pub const DEFAULT_MIN_SHARED: usize = 3;

pub fn filter_min_shared(p: &AlignedPositions, k: usize) -> bool {
    p.len() >= k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SharedFractionMode {
    /// Jaccard index over the sets of surface forms.
    #[default]
    Types,
    /// Share of token occurrences that take part in the occurrence alignment.
    Occurrences,
}

pub fn shared_token_fraction<S: AsRef<str>>(a: &[S], b: &[S], mode: SharedFractionMode) -> f64 {
    match mode {
        SharedFractionMode::Types => {
            let ta: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
            let tb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
            let union = ta.union(&tb).count();
            if union == 0 {
                return 0.0;
            }
            ta.intersection(&tb).count() as f64 / union as f64
        }
        SharedFractionMode::Occurrences => {
            let total = a.len() + b.len();
            if total == 0 {
                return 0.0;
            }
            2.0 * shared_token_positions(a, b).len() as f64 / total as f64
        }
    }
}

pub fn length_ratio<S>(a: &[S], b: &[S]) -> f64 {
    length_ratio_from_counts(a.len(), b.len())
}

/// `min(m, n) / max(m, n)`; zero when either count is zero.
pub fn length_ratio_from_counts(m: usize, n: usize) -> f64 {
    let hi = m.max(n);
    if hi == 0 {
        return 0.0;
    }
    m.min(n) as f64 / hi as f64
}
