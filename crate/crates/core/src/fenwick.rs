//! Fenwick tree over nonnegative `f64` weights with prefix search.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub(crate) struct Fenwick {
    tree: Vec<f64>,
    weights: Vec<f64>,
    updates: usize,
}

/// Full rebuilds bound the drift of incremental float updates.
const REBUILD_EVERY: usize = 1 << 16;

impl Fenwick {
    pub fn new(weights: Vec<f64>) -> Self {
        let mut f = Self {
            tree: vec![0.0; weights.len() + 1],
            weights,
            updates: 0,
        };
        f.rebuild();
        f
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[cfg(test)]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    fn rebuild(&mut self) {
        let n = self.weights.len();
        for (i, t) in self.tree.iter_mut().enumerate().skip(1) {
            *t = self.weights[i - 1];
        }
        for i in 1..=n {
            let j = i + (i & i.wrapping_neg());
            if j <= n {
                let v = self.tree[i];
                self.tree[j] += v;
            }
        }
        self.updates = 0;
    }

    pub fn set(&mut self, i: usize, w: f64) {
        let delta = w - self.weights[i];
        if delta == 0.0 {
            return;
        }
        self.weights[i] = w;
        self.updates += 1;
        if self.updates >= REBUILD_EVERY {
            self.rebuild();
            return;
        }
        let n = self.weights.len();
        let mut j = i + 1;
        while j <= n {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    pub fn total(&self) -> f64 {
        let mut s = 0.0;
        let mut j = self.weights.len();
        while j > 0 {
            s += self.tree[j];
            j &= j - 1;
        }
        s.max(0.0)
    }

    /// Index `i` whose cumulative interval contains `u ∈ [0, total)`.
    /// Never returns a zero-weight index while some weight is positive.
    pub fn find(&self, u: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0usize;
        let mut rem = u;
        let mut step = if n == 0 { 0 } else { 1usize << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        let mut i = pos.min(n.saturating_sub(1));
        // rounding can land on an empty slot; walk to the nearest positive one
        if self.weights[i] <= 0.0 {
            if let Some(j) = (i..n).find(|&j| self.weights[j] > 0.0) {
                i = j;
            } else if let Some(j) = (0..i).rev().find(|&j| self.weights[j] > 0.0) {
                i = j;
            }
        }
        i
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_search() {
        let mut f = Fenwick::new(vec![1.0, 0.0, 2.0, 3.0]);
        assert_eq!(f.total(), 6.0);
        assert_eq!(f.find(0.5), 0);
        assert_eq!(f.find(1.0), 2);
        assert_eq!(f.find(2.999), 2);
        assert_eq!(f.find(3.0), 3);
        assert_eq!(f.find(5.999), 3);
        f.set(3, 0.0);
        assert_eq!(f.total(), 3.0);
        assert_eq!(f.find(2.9999999), 2);
        assert_eq!(f.find(3.0), 2);
        assert_eq!(f.len(), 4);
        assert_eq!(f.weight(2), 2.0);
    }
}
