//! Labelled partitions of `[n] = {1, ..., n}`.
//!
//! Blocks are kept sorted by least element and each block's elements are
//! sorted, so two partitions are equal exactly when their block lists are.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Site of a block, or the cemetery ∂ for killed blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Label {
    Site(u32),
    Cemetery,
}

impl Label {
    pub fn site(self) -> Option<usize> {
        match self {
            Label::Site(s) => Some(s as usize),
            Label::Cemetery => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledPartition {
    n: u32,
    blocks: Vec<(Vec<u32>, Label)>,
}

impl LabeledPartition {
    /// Validates that the blocks are nonempty, disjoint and cover `[n]`, then
    /// sorts them into canonical order.
    pub fn new(n: u32, mut blocks: Vec<(Vec<u32>, Label)>) -> Result<Self> {
        let mut seen = vec![false; n as usize + 1];
        for (b, _) in &mut blocks {
            if b.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            b.sort_unstable();
            for &e in b.iter() {
                if e == 0 || e > n {
                    return Err(Error::InvalidPartition(format!("element {e} outside [1, {n}]")));
                }
                if seen[e as usize] {
                    return Err(Error::InvalidPartition(format!("element {e} appears twice")));
                }
                seen[e as usize] = true;
            }
        }
        if let Some(missing) = (1..=n).find(|&e| !seen[e as usize]) {
            return Err(Error::InvalidPartition(format!("element {missing} is in no block")));
        }
        blocks.sort_unstable_by_key(|(b, _)| b[0]);
        Ok(Self { n, blocks })
    }

    /// Singletons `{1}, ..., {n}` with the given labels.
    pub fn singletons(labels: &[Label]) -> Self {
        let blocks = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (vec![i as u32 + 1], l))
            .collect();
        Self {
            n: labels.len() as u32,
            blocks,
        }
    }

    /// `counts[s]` singletons at site `s`, numbered site by site.
    pub fn singletons_per_site(counts: &[u32]) -> Self {
        let labels: Vec<Label> = counts
            .iter()
            .enumerate()
            .flat_map(|(s, &c)| core::iter::repeat_n(Label::Site(s as u32), c as usize))
            .collect();
        Self::singletons(&labels)
    }

    /// Ground-set size `n`.
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn blocks(&self) -> &[(Vec<u32>, Label)] {
        &self.blocks
    }

    /// Number of blocks, killed ones included.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of blocks not in the cemetery.
    pub fn alive_count(&self) -> usize {
        self.blocks.iter().filter(|(_, l)| *l != Label::Cemetery).count()
    }

    /// Restriction to `[m]`: blocks intersected with `[m]`, empties dropped.
    pub fn restrict(&self, m: u32) -> Result<Self> {
        if m == 0 || m > self.n {
            return Err(Error::InvalidArgument(format!("cannot restrict [{}] to [{m}]", self.n)));
        }
        let blocks = self
            .blocks
            .iter()
            .filter_map(|(b, l)| {
                let kept: Vec<u32> = b.iter().copied().take_while(|&e| e <= m).collect();
                (!kept.is_empty()).then_some((kept, *l))
            })
            .collect();
        Ok(Self { n: m, blocks })
    }

    /// Restriction to a subset `S ⊆ [n]`, relabelled order-preservingly onto `[|S|]`.
    pub fn restrict_to(&self, subset: &[u32]) -> Result<Self> {
        let rank = subset_ranks(self.n, subset)?;
        let mut blocks: Vec<(Vec<u32>, Label)> = self
            .blocks
            .iter()
            .filter_map(|(b, l)| {
                let kept: Vec<u32> = b.iter().filter_map(|&e| rank[e as usize]).collect();
                (!kept.is_empty()).then_some((kept, *l))
            })
            .collect();
        blocks.sort_unstable_by_key(|(b, _)| b[0]);
        Ok(Self {
            n: subset.len() as u32,
            blocks,
        })
    }

    /// `d(π, π') = 2^{-m}` for the least `m` with `π|_m ≠ π'|_m`, 0 if equal.
    ///
    /// Given equal restrictions to `[j-1]`, the restrictions to `[j]` agree
    /// iff `j` joins a block with the same least element and label in both.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::GroundSetMismatch(self.n, other.n));
        }
        let a = self.anchor_table();
        let b = other.anchor_table();
        match (1..=self.n as usize).find(|&j| a[j] != b[j]) {
            Some(j) => Ok(libm::ldexp(1.0, -(j as i32))),
            None => Ok(0.0),
        }
    }

    /// Per element: least element of its block and the block label.
    fn anchor_table(&self) -> Vec<(u32, Label)> {
        let mut t = vec![(0, Label::Cemetery); self.n as usize + 1];
        for (b, l) in &self.blocks {
            for &e in b {
                t[e as usize] = (b[0], *l);
            }
        }
        t
    }

    /// True if every block of `self` lies inside a block of `coarse`.
    pub fn is_finer_than(&self, coarse: &Self) -> bool {
        if self.n != coarse.n {
            return false;
        }
        let anchor = coarse.anchor_table();
        self.blocks
            .iter()
            .all(|(b, _)| b.iter().all(|&e| anchor[e as usize].0 == anchor[b[0] as usize].0))
    }
}

/// Rank (1-based) of each element of `subset` within `subset`, indexed by element.
pub(crate) fn subset_ranks(n: u32, subset: &[u32]) -> Result<Vec<Option<u32>>> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty subset".into()));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    let mut rank = vec![None; n as usize + 1];
    for (i, &e) in sorted.iter().enumerate() {
        if e == 0 || e > n {
            return Err(Error::InvalidArgument(format!("subset element {e} outside [1, {n}]")));
        }
        if rank[e as usize].is_some() {
            return Err(Error::InvalidArgument(format!("subset lists {e} twice")));
        }
        rank[e as usize] = Some(i as u32 + 1);
    }
    Ok(rank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(i: u32) -> Label {
        Label::Site(i)
    }

    #[test]
    fn restrict_examples() {
        let p = LabeledPartition::new(3, vec![(vec![1, 3], s(0)), (vec![2], s(1))]).unwrap();
        let r = p.restrict(2).unwrap();
        assert_eq!(r.blocks(), &[(vec![1], s(0)), (vec![2], s(1))]);
        assert_eq!(p.restrict(3).unwrap(), p);
        let q = LabeledPartition::new(5, vec![(vec![1, 2, 5], s(0)), (vec![3], s(1)), (vec![4], s(0))]).unwrap();
        let r = q.restrict(3).unwrap();
        assert_eq!(r.blocks(), &[(vec![1, 2], s(0)), (vec![3], s(1))]);
    }

    #[test]
    fn restrict_to_relabels() {
        let q = LabeledPartition::new(5, vec![(vec![1, 2, 5], s(0)), (vec![3], s(1)), (vec![4], s(0))]).unwrap();
        let r = q.restrict_to(&[5, 3, 4]).unwrap();
        assert_eq!(r.blocks(), &[(vec![1], s(1)), (vec![2], s(0)), (vec![3], s(0))]);
        assert!(q.restrict_to(&[6]).is_err());
        assert!(q.restrict_to(&[2, 2]).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = LabeledPartition::new(4, vec![(vec![1, 2], s(0)), (vec![3, 4], s(1))]).unwrap();
        assert_eq!(a.distance(&a).unwrap(), 0.0);
        let b = LabeledPartition::new(4, vec![(vec![1, 2], s(0)), (vec![3], s(1)), (vec![4], s(1))]).unwrap();
        assert_eq!(a.distance(&b).unwrap(), 1.0 / 16.0);
        let c = LabeledPartition::new(4, vec![(vec![1, 2], s(0)), (vec![3, 4], s(0))]).unwrap();
        assert_eq!(a.distance(&c).unwrap(), 0.125);
        let d = LabeledPartition::new(4, vec![(vec![1, 2], s(1)), (vec![3, 4], s(1))]).unwrap();
        assert_eq!(a.distance(&d).unwrap(), 0.5);
        let e = LabeledPartition::singletons(&[s(0); 3]);
        assert!(matches!(a.distance(&e), Err(Error::GroundSetMismatch(4, 3))));
    }

    #[test]
    fn validation() {
        assert!(LabeledPartition::new(3, vec![(vec![1, 2], s(0))]).is_err());
        assert!(LabeledPartition::new(2, vec![(vec![1, 2], s(0)), (vec![2], s(0))]).is_err());
        assert!(LabeledPartition::new(2, vec![(vec![1, 2], s(0)), (vec![], s(0))]).is_err());
        let p = LabeledPartition::new(3, vec![(vec![3, 1], s(0)), (vec![2], Label::Cemetery)]).unwrap();
        assert_eq!(p.blocks()[0].0, vec![1, 3]);
        assert_eq!(p.alive_count(), 1);
    }

    #[test]
    fn finer_than() {
        let fine = LabeledPartition::singletons_per_site(&[2, 1]);
        let coarse = LabeledPartition::new(3, vec![(vec![1, 2, 3], s(0))]).unwrap();
        assert!(fine.is_finer_than(&coarse));
        assert!(!coarse.is_finer_than(&fine));
        assert_eq!(fine.blocks()[2], (vec![3], s(1)));
    }
}
