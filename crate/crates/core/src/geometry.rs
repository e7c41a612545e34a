//! Finite geographies, torus construction and the random-walk Green function.
//!
//! A geography is a finite site set with a row-stochastic migration kernel
//! `p`. Each block jumps at rate 1 to a site drawn from its row; a jump
//! onto the same site changes nothing, so the simulator uses the effective
//! rate `1 - p(i,i)` and draws the destination conditional on leaving.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::quadrature::Estimate;

/// A step distribution on Z^d with finite support.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct WalkSpec {
    pub dim: usize,
    /// `(step, probability)` pairs.
    pub steps: Vec<(Vec<i64>, f64)>,
}

impl WalkSpec {
    /// Nearest-neighbour walk: each of the `2d` unit steps with probability `1/(2d)`.
    pub fn simple(dim: usize) -> Self {
        let mut steps = Vec::with_capacity(2 * dim);
        let p = 1.0 / (2 * dim) as f64;
        for i in 0..dim {
            for s in [1i64, -1] {
                let mut z = vec![0i64; dim];
                z[i] = s;
                steps.push((z, p));
            }
        }
        Self { dim, steps }
    }

    pub fn new(dim: usize, steps: Vec<(Vec<i64>, f64)>) -> Result<Self> {
        let w = Self { dim, steps };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidGeography("walk dimension must be >= 1".into()));
        }
        if self.steps.is_empty() {
            return Err(Error::InvalidGeography("walk has no steps".into()));
        }
        let mut total = 0.0;
        for (z, p) in &self.steps {
            if z.len() != self.dim {
                return Err(Error::InvalidGeography(format!("step {z:?} does not have dimension {}", self.dim)));
            }
            if !(*p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidGeography(format!("step {z:?} has probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGeography(format!("step probabilities sum to {total}, not 1")));
        }
        if self.support_rank() < self.dim {
            return Err(Error::InvalidGeography(format!(
                "walk support spans only {} of {} dimensions",
                self.support_rank(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Rank of the span of the support (Gaussian elimination).
    fn support_rank(&self) -> usize {
        let mut rows: Vec<Vec<f64>> = self
            .steps
            .iter()
            .map(|(z, _)| z.iter().map(|&c| c as f64).collect())
            .collect();
        let mut rank = 0;
        for col in 0..self.dim {
            let Some(piv) = (rank..rows.len()).find(|&r| rows[r][col].abs() > 1e-9) else {
                continue;
            };
            rows.swap(rank, piv);
            for r in 0..rows.len() {
                if r != rank {
                    let f = rows[r][col] / rows[rank][col];
                    if f != 0.0 {
                        for c in 0..self.dim {
                            let v = rows[rank][c];
                            rows[r][c] -= f * v;
                        }
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// Largest coordinate magnitude over the support.
    pub fn max_step(&self) -> i64 {
        self.steps.iter().flat_map(|(z, _)| z.iter().map(|c| c.abs())).max().unwrap_or(0)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (z, p) in &self.steps {
            for (mi, &zi) in m.iter_mut().zip(z) {
                *mi += p * zi as f64;
            }
        }
        m
    }

    /// Determinant of the step covariance matrix.
    pub fn covariance_det(&self) -> f64 {
        let d = self.dim;
        let mean = self.mean();
        let mut c = vec![vec![0.0; d]; d];
        for (z, p) in &self.steps {
            for i in 0..d {
                for j in 0..d {
                    c[i][j] += p * (z[i] as f64 - mean[i]) * (z[j] as f64 - mean[j]);
                }
            }
        }
        determinant(c)
    }

    /// Cumulative step probabilities for inverse-transform sampling.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cum: Vec<f64> = self
            .steps
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = f64::INFINITY;
        }
        cum
    }
}

fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
        }
    }
    det
}

#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    GenericGraph,
    /// `[-n, n]^d ∩ Z^d` with coordinates wrapped modulo `2n+1`.
    Torus { n: u32, dim: usize, walk: WalkSpec },
}

/// A finite site set with a migration kernel stored row-wise (sparse).
#[derive(Debug, Clone)]
pub struct GeographySpec {
    topology: Topology,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
    /// `1 - p(i,i)`.
    leave: Vec<f64>,
    /// Per row: cumulative off-diagonal probabilities normalised by `leave`.
    leave_cum: Vec<f64>,
}

impl GeographySpec {
    /// Builds from sparse rows of `(column, probability)` entries.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        Self::from_rows_with(rows, Topology::GenericGraph)
    }

    fn from_rows_with(rows: Vec<Vec<(usize, f64)>>, topology: Topology) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidGeography("a geography needs at least one site".into()));
        }
        if n > u32::MAX as usize {
            return Err(Error::SizeOverflow {
                sites: n as u128,
                budget: u32::MAX as u64,
            });
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        let mut leave = Vec::with_capacity(n);
        let mut leave_cum = Vec::new();
        row_ptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut sum = 0.0;
            let mut diag = 0.0;
            let mut prev: Option<usize> = None;
            for &(j, p) in &row {
                if j >= n {
                    return Err(Error::InvalidGeography(format!("row {i} refers to site {j}, but there are {n} sites")));
                }
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::InvalidGeography(format!("row {i} has entry p({i},{j}) = {p}")));
                }
                if prev == Some(j) {
                    return Err(Error::InvalidGeography(format!("row {i} lists column {j} twice")));
                }
                prev = Some(j);
                sum += p;
                if j == i {
                    diag = p;
                }
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidGeography(format!("row {i} sums to {sum}, not 1")));
            }
            let off = 1.0 - diag;
            let start = cols.len();
            let mut acc = 0.0;
            for &(j, p) in &row {
                if p == 0.0 {
                    continue;
                }
                cols.push(j as u32);
                probs.push(p);
                if j != i {
                    acc += p;
                }
                leave_cum.push(if off > 0.0 { acc / off } else { 0.0 });
            }
            // guard the last off-diagonal slot against rounding
            if let Some(k) = (start..cols.len()).rev().find(|&k| cols[k] as usize != i) {
                leave_cum[k] = f64::INFINITY;
            }
            leave.push(off.max(0.0));
            row_ptr.push(cols.len());
        }
        Ok(Self {
            topology,
            row_ptr,
            cols,
            probs,
            leave,
            leave_cum,
        })
    }

    /// Builds from a dense row-stochastic matrix.
    pub fn from_dense(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        let mut rows = Vec::with_capacity(n);
        for (i, r) in matrix.iter().enumerate() {
            if r.len() != n {
                return Err(Error::InvalidGeography(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            rows.push(r.iter().copied().enumerate().filter(|&(_, p)| p != 0.0 || p.is_nan()).collect());
        }
        Self::from_rows(rows)
    }

    pub fn single_site() -> Self {
        Self::from_rows(vec![vec![(0, 1.0)]]).expect("trivial kernel is valid")
    }

    /// υ sites, each jump uniform over the other sites.
    pub fn complete_graph(sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidGeography("a geography needs at least one site".into()));
        }
        if sites == 1 {
            return Ok(Self::single_site());
        }
        let p = 1.0 / (sites - 1) as f64;
        let rows = (0..sites)
            .map(|i| (0..sites).filter(|&j| j != i).map(|j| (j, p)).collect())
            .collect();
        Self::from_rows(rows)
    }

    /// Torus `[-n, n]^d` with the wrapped kernel of `walk`; sites are in
    /// lexicographic coordinate order. Fails if `(2n+1)^d > site_budget`.
    pub fn build_torus(n: u32, walk: &WalkSpec, site_budget: u64) -> Result<Self> {
        walk.validate()?;
        if n == 0 {
            return Err(Error::InvalidGeography("torus radius must be >= 1".into()));
        }
        let side = 2 * n as u128 + 1;
        let sites = side.checked_pow(walk.dim as u32).unwrap_or(u128::MAX);
        if sites > site_budget as u128 {
            return Err(Error::SizeOverflow {
                sites,
                budget: site_budget,
            });
        }
        let sites = sites as usize;
        let shape = TorusShape { n: n as i64, dim: walk.dim };
        let mut rows = Vec::with_capacity(sites);
        let mut x = vec![0i64; walk.dim];
        let mut y = vec![0i64; walk.dim];
        for i in 0..sites {
            shape.coords_into(i, &mut x);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(walk.steps.len());
            for (z, p) in &walk.steps {
                for k in 0..walk.dim {
                    y[k] = x[k] + z[k];
                }
                let j = shape.index(&y);
                match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += p,
                    None => row.push((j, *p)),
                }
            }
            // wrapped rows sum to the walk's total exactly up to rounding
            let s: f64 = row.iter().map(|e| e.1).sum();
            for e in &mut row {
                e.1 /= s;
            }
            rows.push(row);
        }
        Self::from_rows_with(
            rows,
            Topology::Torus {
                n,
                dim: walk.dim,
                walk: walk.clone(),
            },
        )
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// υ, the number of sites.
    pub fn sites(&self) -> usize {
        self.leave.len()
    }

    /// Nonzero entries `(column, probability)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.probs[r].iter().copied())
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    /// Effective migration rate `1 - p(i,i)` of one block at site `i`.
    pub fn leave_rate(&self, i: usize) -> f64 {
        self.leave[i]
    }

    /// Destination of a jump from `i` conditional on leaving, `u ∈ [0,1)`.
    pub fn sample_destination(&self, i: usize, u: f64) -> usize {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        let cum = &self.leave_cum[r.clone()];
        let cols = &self.cols[r];
        let mut k = cum.partition_point(|&c| c <= u);
        while k < cols.len() && cols[k] as usize == i {
            k += 1;
        }
        if k >= cols.len() {
            k = (0..cols.len()).rev().find(|&k| cols[k] as usize != i).unwrap_or(0);
        }
        cols[k] as usize
    }

    /// Largest deviation of a column sum from 1.
    pub fn column_sum_deviation(&self) -> f64 {
        let mut col = vec![0.0; self.sites()];
        for (c, p) in self.cols.iter().zip(&self.probs) {
            col[*c as usize] += p;
        }
        col.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_deviation(&self) -> f64 {
        (0..self.sites())
            .map(|i| (self.row(i).map(|e| e.1).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn torus_shape(&self) -> Option<TorusShape> {
        match self.topology {
            Topology::Torus { n, dim, .. } => Some(TorusShape { n: n as i64, dim }),
            Topology::GenericGraph => None,
        }
    }

    /// Coordinates of torus site `i` in `[-n, n]^d`.
    pub fn torus_coords(&self, i: usize) -> Option<Vec<i64>> {
        let s = self.torus_shape()?;
        let mut x = vec![0; s.dim];
        s.coords_into(i, &mut x);
        Some(x)
    }

    /// Torus site of arbitrary integer coordinates (wrapped).
    pub fn torus_site(&self, coords: &[i64]) -> Option<usize> {
        let s = self.torus_shape()?;
        (coords.len() == s.dim).then(|| s.index(coords))
    }

    /// Euclidean distance between torus sites along the shortest wrapped displacement.
    pub fn torus_distance(&self, i: usize, j: usize) -> Option<f64> {
        let s = self.torus_shape()?;
        let (a, b) = (self.torus_coords(i)?, self.torus_coords(j)?);
        let d2: i64 = a.iter().zip(&b).map(|(x, y)| s.wrap(x - y).pow(2)).sum();
        Some(math::sqrt(d2 as f64))
    }
}

#[derive(Debug, Clone, Copy)]
struct TorusShape {
    n: i64,
    dim: usize,
}

impl TorusShape {
    fn side(&self) -> i64 {
        2 * self.n + 1
    }

    fn wrap(&self, c: i64) -> i64 {
        (c + self.n).rem_euclid(self.side()) - self.n
    }

    fn index(&self, x: &[i64]) -> usize {
        let side = self.side();
        x.iter().fold(0i64, |acc, &c| acc * side + (self.wrap(c) + self.n)) as usize
    }

    fn coords_into(&self, mut i: usize, out: &mut [i64]) {
        let side = self.side() as usize;
        for k in (0..self.dim).rev() {
            out[k] = (i % side) as i64 - self.n;
            i /= side;
        }
    }
}

/// κ = 2 / (G + 2/λ_{2,2}).
pub fn kappa(green: f64, lambda22: f64) -> f64 {
    2.0 / (green + 2.0 / lambda22)
}

/// How to compute the Green function `G = Σ_k p̃_k(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", deny_unknown_fields))]
pub enum GreenMethod {
    /// Exact `p̃_k(0)` for `k ≤ steps` plus a fitted power-law tail.
    LatticeSum { steps: u32 },
    /// Mean visit count over `replicas` walks of `horizon` steps plus the
    /// local-CLT tail beyond the horizon.
    MonteCarlo { replicas: u64, horizon: u64, seed: u64 },
}

pub fn green_function(walk: &WalkSpec, method: GreenMethod) -> Result<Estimate> {
    walk.validate()?;
    if walk.dim < 3 {
        return Err(Error::DimensionTooLow(walk.dim));
    }
    match method {
        GreenMethod::LatticeSum { steps } => green_lattice_sum(walk, steps),
        GreenMethod::MonteCarlo { replicas, horizon, seed } => {
            let mut rng = crate::seeding::replica_rng(seed, 0);
            let mut acc = GreenAccumulator::default();
            acc.run(walk, horizon, replicas, &mut rng);
            acc.finish(walk, horizon)
        }
    }
}

/// Return probabilities `p̃_k(0)` for `k = 0..=2J` with `J = steps/2`.
///
/// Only `p̃_j` for `j ≤ J+1` is built by convolution on a growing box; the
/// rest follows from `p̃_{2j}(0) = Σ_x p̃_j(x) p̃_j(-x)` and
/// `p̃_{2j+1}(0) = Σ_x p̃_j(x) p̃_{j+1}(-x)`.
pub fn return_probabilities(walk: &WalkSpec, steps: u32) -> Result<Vec<f64>> {
    walk.validate()?;
    let d = walk.dim;
    let half = (steps / 2).max(1) as i64;
    let s = walk.max_step();
    let radius = (half + 1) * s;
    let side = (2 * radius + 1) as usize;
    let cells = side
        .checked_pow(d as u32)
        .filter(|&c| c <= MAX_BOX_CELLS)
        .ok_or(Error::SizeOverflow {
            sites: (side as u128).pow(d as u32),
            budget: MAX_BOX_CELLS as u64,
        })?;
    let mut stride = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        stride[k] = stride[k + 1] * side;
    }
    let center: usize = stride.iter().map(|&st| st * radius as usize).sum();
    let offsets: Vec<(isize, f64)> = walk
        .steps
        .iter()
        .map(|(z, p)| (z.iter().zip(&stride).map(|(&zi, &st)| zi as isize * st as isize).sum(), *p))
        .collect();

    let mut cur = vec![0.0f64; cells];
    let mut next = vec![0.0f64; cells];
    cur[center] = 1.0;
    let mut out = vec![0.0; 2 * half as usize + 2];
    out[0] = 1.0;
    let mut idx = vec![0i64; d];
    for j in 0..=half {
        // p̃_{j+1} from p̃_j on the box of radius (j+1)s
        let r = j * s;
        let rn = (j + 1) * s;
        for_each_in_box(d, rn, &mut idx, |x| {
            next[flat(x, &stride, radius)] = 0.0;
        });
        for_each_in_box(d, r, &mut idx, |x| {
            let i = flat(x, &stride, radius);
            let v = cur[i];
            if v != 0.0 {
                for &(off, p) in &offsets {
                    next[(i as isize + off) as usize] += p * v;
                }
            }
        });
        // p̃_{2j}(0) and p̃_{2j+1}(0)
        let mut even = 0.0;
        let mut odd = 0.0;
        for_each_in_box(d, rn, &mut idx, |x| {
            let i = flat(x, &stride, radius);
            let mirror = 2 * center - i;
            even += cur[i] * cur[mirror];
            odd += cur[i] * next[mirror];
        });
        out[2 * j as usize] = even;
        out[2 * j as usize + 1] = odd;
        core::mem::swap(&mut cur, &mut next);
    }
    out.truncate(2 * half as usize + 1);
    Ok(out)
}

/// Memory cap for the lattice-sum box (two `f64` buffers of this many cells).
const MAX_BOX_CELLS: usize = 1 << 25;

fn flat(x: &[i64], stride: &[usize], radius: i64) -> usize {
    x.iter().zip(stride).map(|(&c, &st)| (c + radius) as usize * st).sum()
}

/// Visits every point of `[-r, r]^d` in lexicographic order.
fn for_each_in_box(d: usize, r: i64, idx: &mut [i64], mut f: impl FnMut(&[i64])) {
    for v in idx.iter_mut() {
        *v = -r;
    }
    loop {
        f(idx);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if idx[k] < r {
                idx[k] += 1;
                break;
            }
            idx[k] = -r;
        }
    }
}

fn green_lattice_sum(walk: &WalkSpec, steps: u32) -> Result<Estimate> {
    if steps < 20 {
        return Err(Error::InvalidArgument("lattice sum needs at least 20 steps".into()));
    }
    let p = return_probabilities(walk, steps)?;
    let head: f64 = p.iter().sum();
    // pair sums q_j = p̃_{2j} + p̃_{2j+1} smooth out period-2 oscillation
    let pairs: Vec<f64> = p.chunks_exact(2).map(|c| c[0] + c[1]).collect();
    let jn = pairs.len();
    let from = jn - (jn / 10).max(4);
    let h = walk.dim as f64 / 2.0;
    // Σ_{j>J} (2j)^{-e} ≈ ∫_{J+1/2}^∞ (2x)^{-e} dx; the last pair index is jn-1
    // and the final even term p̃_{2J} was not paired.
    let tail_of = |e: f64| -> f64 {
        let start = jn as f64 - 0.5;
        math::pow(2.0, -e) * math::pow(start, 1.0 - e) / (e - 1.0)
    };
    let fit = |terms: usize| -> Option<f64> {
        let exps: Vec<f64> = (0..terms).map(|t| h + t as f64).collect();
        let rows: Vec<(Vec<f64>, f64)> = (from.max(1)..jn)
            .map(|j| (exps.iter().map(|&e| math::pow(2.0 * j as f64, -e)).collect(), pairs[j]))
            .collect();
        let coef = least_squares(&rows, terms)?;
        Some(coef.iter().zip(&exps).map(|(c, &e)| c * tail_of(e)).sum())
    };
    let t3 = fit(3).ok_or(Error::InvalidArgument("degenerate tail fit".into()))?;
    let t2 = fit(2).ok_or(Error::InvalidArgument("degenerate tail fit".into()))?;
    // the unpaired last term belongs to the tail's first pair
    let last = *p.last().unwrap_or(&0.0);
    let value = head - last + t3;
    let error = (t3 - t2).abs() + 1e-12 * value;
    Ok(Estimate { value, error })
}

/// Solves the normal equations of a small linear least-squares problem.
fn least_squares(rows: &[(Vec<f64>, f64)], n: usize) -> Option<Vec<f64>> {
    // scale columns to unit norm for conditioning
    let mut scale = vec![0.0; n];
    for (x, _) in rows {
        for k in 0..n {
            scale[k] += x[k] * x[k];
        }
    }
    for s in &mut scale {
        *s = math::sqrt(*s);
        if *s == 0.0 {
            return None;
        }
    }
    let mut a = vec![vec![0.0; n + 1]; n];
    for (x, y) in rows {
        for i in 0..n {
            for j in 0..n {
                a[i][j] += x[i] / scale[i] * x[j] / scale[j];
            }
            a[i][n] += x[i] / scale[i] * y;
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(piv, col);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    let v = a[col][c];
                    a[r][c] -= f * v;
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i] / scale[i]).collect())
}

/// Mergeable sums for the Monte Carlo Green function estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GreenAccumulator {
    pub replicas: u64,
    pub visits: f64,
    pub visits_sq: f64,
}

impl GreenAccumulator {
    /// Runs `replicas` walks from the origin, counting visits to it
    /// (time 0 included) during the first `horizon` steps.
    pub fn run<R: Rng + ?Sized>(&mut self, walk: &WalkSpec, horizon: u64, replicas: u64, rng: &mut R) {
        let cum = walk.cumulative();
        let d = walk.dim;
        let mut pos = vec![0i64; d];
        for _ in 0..replicas {
            for v in &mut pos {
                *v = 0;
            }
            let mut visits = 1u64;
            for _ in 0..horizon {
                let u: f64 = rng.random();
                let k = cum.partition_point(|&c| c <= u);
                let z = &walk.steps[k].0;
                let mut home = true;
                for i in 0..d {
                    pos[i] += z[i];
                    home &= pos[i] == 0;
                }
                if home {
                    visits += 1;
                }
            }
            self.replicas += 1;
            self.visits += visits as f64;
            self.visits_sq += (visits * visits) as f64;
        }
    }

    pub fn merge(&mut self, other: &GreenAccumulator) {
        self.replicas += other.replicas;
        self.visits += other.visits;
        self.visits_sq += other.visits_sq;
    }

    /// Mean visit count plus the local-CLT tail `Σ_{k>H} p̃_k(0)`; the error
    /// is one standard error plus a tail allowance.
    pub fn finish(&self, walk: &WalkSpec, horizon: u64) -> Result<Estimate> {
        if self.replicas < 2 {
            return Err(Error::InvalidArgument("Monte Carlo Green function needs >= 2 replicas".into()));
        }
        let n = self.replicas as f64;
        let mean = self.visits / n;
        let var = ((self.visits_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        let se = math::sqrt(var / n);
        let tail = clt_tail(walk, horizon);
        Ok(Estimate {
            value: mean + tail,
            error: se + tail * 10.0 / (horizon as f64 + 1.0),
        })
    }
}

/// `∫_{H+1/2}^∞ (2πk)^{-d/2} det(Σ)^{-1/2} dk` for mean-zero walks, 0 otherwise.
fn clt_tail(walk: &WalkSpec, horizon: u64) -> f64 {
    if walk.mean().iter().any(|m| m.abs() > 1e-12) {
        return 0.0;
    }
    let h = walk.dim as f64 / 2.0;
    let det = walk.covariance_det();
    math::pow(2.0 * core::f64::consts::PI, -h) / math::sqrt(det) * math::pow(horizon as f64 + 0.5, 1.0 - h) / (h - 1.0)
}
