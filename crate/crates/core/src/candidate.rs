//! Candidate label sets as bitmasks, and the enumeration order of all sets.

use std::fmt;

use crate::error::{Error, Result};

/// Largest label space a bitmask can represent.
pub const MAX_CLASSES: usize = 64;

/// A set of labels in `[0, c)`, stored as a bitmask (bit `b` set ⇔ label `b` present).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct CandidateSet(u64);

impl CandidateSet {
    pub const EMPTY: CandidateSet = CandidateSet(0);

    pub fn from_mask(mask: u64) -> Self {
        CandidateSet(mask)
    }

    pub fn singleton(label: usize) -> Self {
        debug_assert!(label < MAX_CLASSES);
        CandidateSet(1u64 << label)
    }

    /// The set `{0, …, c−1}`.
    pub fn full(classes: usize) -> Self {
        if classes >= MAX_CLASSES {
            CandidateSet(u64::MAX)
        } else {
            CandidateSet((1u64 << classes) - 1)
        }
    }

    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I) -> Self {
        labels.into_iter().fold(Self::EMPTY, |s, l| s.with(l))
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, label: usize) -> bool {
        label < MAX_CLASSES && self.0 & (1u64 << label) != 0
    }

    #[must_use]
    pub fn with(self, label: usize) -> Self {
        CandidateSet(self.0 | (1u64 << label))
    }

    pub fn insert(&mut self, label: usize) {
        self.0 |= 1u64 << label;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Labels in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let b = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(b)
            }
        })
    }

    /// True when every label lies below `classes`.
    pub fn fits(self, classes: usize) -> bool {
        self.0 & !Self::full(classes).0 == 0
    }

    /// Lowercase hexadecimal, no prefix.
    pub fn to_hex(self) -> String {
        format!("{:x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        u64::from_str_radix(s, 16)
            .map(CandidateSet)
            .map_err(|e| Error::arg("candidate_mask", format!("`{s}`: {e}")))
    }
}

impl fmt::Display for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, l) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("}")
    }
}

/// Deterministic numbering of candidate sets over `c` labels.
///
/// Informative sets (neither empty nor full) are numbered `0..2^c−2` in
/// ascending mask order, so index `j` is mask `j + 1`. Distribution matrices
/// carry one extra trailing row, index `2^c−2`, for the full set: generation
/// can produce it and column totals are only 1 when it is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateSetIndex {
    classes: usize,
}

impl CandidateSetIndex {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 || classes >= MAX_CLASSES {
            return Err(Error::arg("classes", format!("{classes} is outside 1..{MAX_CLASSES}")));
        }
        Ok(CandidateSetIndex { classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `2^c − 2`: number of sets that are neither empty nor full.
    pub fn informative_len(&self) -> usize {
        (1usize << self.classes) - 2
    }

    /// `2^c − 1`: informative sets plus the full set.
    pub fn rows(&self) -> usize {
        (1usize << self.classes) - 1
    }

    /// Row of the full label set in distribution matrices.
    pub fn full_row(&self) -> usize {
        self.informative_len()
    }

    pub fn set(&self, index: usize) -> Option<CandidateSet> {
        (index < self.rows()).then(|| CandidateSet(index as u64 + 1))
    }

    pub fn index_of(&self, set: CandidateSet) -> Option<usize> {
        (!set.is_empty() && set.fits(self.classes)).then(|| set.0 as usize - 1)
    }

    /// Informative sets, in index order.
    pub fn informative(&self) -> impl Iterator<Item = CandidateSet> {
        (1..=self.informative_len() as u64).map(CandidateSet)
    }
}
