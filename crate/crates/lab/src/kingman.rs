//! Reference laws of the unit-rate Kingman block count.
//!
//! The block count of Kingman's coalescent is a pure death chain with rate
//! `C(b,2)` from `b` blocks. Its law at time `t` has the classical alternating
//! series (Tavaré, 1984)
//!
//! ```text
//! P_n(K(t) = k) = Σ_{i=k}^{n} e^{-i(i-1)t/2} (2i-1) (-1)^{i-k} k^{(i-1)} n_{[i]}
//!                 / (k! (i-k)! n^{(i)})
//! ```
//!
//! with rising (`^{(i)}`) and falling (`_{[i]}`) factorials; `n = ∞` drops the
//! last ratio. The series cancels badly for small `t`, so every evaluation
//! tracks the largest term and refuses results that lost too many digits.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spatial_coalescent::math::{ln_gamma, pairs};
use spatial_coalescent::seeding::replica_rng;

use crate::error::{LabError, LabResult};
use crate::stats::{histogram, total_variation};

/// How to produce the entrance law of `#K(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EntranceMethod {
    /// Death chain from `n0` singletons.
    SimulateFrom { n0: u32, replicas: u32, seed: u64 },
    /// Alternating series truncated at `truncation` terms.
    Series { truncation: u32 },
}

/// Digits the series may lose to cancellation before it is rejected.
const MAX_LOSS: f64 = 1e6;

/// `P_n(K(t) = k)` for `k = 0..=n`, with `n = None` for the entrance law
/// from infinitely many blocks (then truncated at `truncation` series terms).
pub fn series_law(n: Option<u32>, t: f64, truncation: u32) -> LabResult<Vec<f64>> {
    if !(t > 0.0) {
        return Err(LabError::Invalid(format!("t must be > 0, got {t}")));
    }
    let top = n.unwrap_or(truncation);
    let mut law = vec![0.0; top as usize + 1];
    let mut worst = 0.0f64;
    for k in 1..=top {
        let mut s = 0.0;
        let mut biggest = 0.0f64;
        for i in k..=top {
            let (kf, fi) = (k as f64, i as f64);
            let mut ln = -fi * (fi - 1.0) * t / 2.0 + (2.0 * fi - 1.0).ln() + ln_gamma(kf + fi - 1.0)
                - ln_gamma(kf)
                - ln_gamma(kf + 1.0)
                - ln_gamma(fi - kf + 1.0);
            if let Some(n) = n {
                let nf = n as f64;
                ln += ln_gamma(nf + 1.0) - ln_gamma(nf - fi + 1.0) + ln_gamma(nf) - ln_gamma(nf + fi);
            }
            let term = ln.exp();
            biggest = biggest.max(term);
            s += if (i - k) % 2 == 0 { term } else { -term };
            if i > k + 2 && term < 1e-18 * s.abs().max(1e-300) {
                break;
            }
        }
        law[k as usize] = s.max(0.0);
        worst = worst.max(biggest);
        if k > 2 && s.abs() < 1e-17 {
            law.truncate(k as usize + 1);
            break;
        }
    }
    let total: f64 = law.iter().sum();
    if worst > MAX_LOSS || (total - 1.0).abs() > 1e-8 {
        return Err(LabError::TruncationUnstable(format!(
            "series at t = {t} has terms up to {worst:.3e} and sums to {total}"
        )));
    }
    Ok(law)
}

/// Block count at time `t` of the unit death chain started from `n0`.
pub fn death_chain_count<R: Rng + ?Sized>(n0: u32, t: f64, rng: &mut R) -> u32 {
    let mut b = n0;
    let mut clock = 0.0;
    while b > 1 {
        let u: f64 = rng.random();
        clock += -(-u).ln_1p() / pairs(b as u64);
        if clock > t {
            break;
        }
        b -= 1;
    }
    b
}

/// Time for the unit death chain to go from `n0` blocks down to one.
pub fn death_chain_absorption<R: Rng + ?Sized>(n0: u32, rng: &mut R) -> f64 {
    (2..=n0)
        .map(|b| {
            let u: f64 = rng.random();
            -(-u).ln_1p() / pairs(b as u64)
        })
        .sum()
}

/// Law of `#K(t)` started from infinitely many blocks, indexed by block count.
pub fn entrance_law(t: f64, method: EntranceMethod) -> LabResult<Vec<f64>> {
    match method {
        EntranceMethod::Series { truncation } => series_law(None, t, truncation),
        EntranceMethod::SimulateFrom { n0, replicas, seed } => {
            if !(t > 0.0) || n0 < 1 || replicas == 0 {
                return Err(LabError::Invalid("simulated entrance law needs t > 0, n0 >= 1, replicas >= 1".into()));
            }
            let counts: Vec<u32> = (0..replicas)
                .into_par_iter()
                .map(|r| death_chain_count(n0, t, &mut replica_rng(seed, r as u64)))
                .collect();
            Ok(histogram(&counts))
        }
    }
}

/// Starting size from which the finite-`n` law is within `tv` of the entrance
/// law at `t` (doubling it changes the law by less than `tv`).
pub fn stable_start(t: f64, tv: f64) -> LabResult<u32> {
    let limit = series_law(None, t, 400)?;
    let mut n = (10.0 * (2.0 / t).ceil()).max(10.0) as u32;
    while n < 1 << 16 {
        let law = series_law(Some(n), t, n)?;
        if total_variation(&law, &limit) < tv / 2.0 {
            return Ok(n);
        }
        n *= 2;
    }
    Err(LabError::TruncationUnstable(format!("no stable start found at t = {t}")))
}

/// Entrance law by the series, cross-checked against a death-chain
/// simulation from `n0` with the given replica budget.
pub fn checked_entrance_law(t: f64, n0: u32, replicas: u32, seed: u64, truncation: u32) -> LabResult<Vec<f64>> {
    let series = entrance_law(t, EntranceMethod::Series { truncation })?;
    let sim = entrance_law(t, EntranceMethod::SimulateFrom { n0, replicas, seed })?;
    let tv = total_variation(&series, &sim);
    // sampling noise of a histogram is about sqrt(cells / replicas)
    let allowed = 2.0 * (series.len() as f64 / replicas as f64).sqrt() + 1e-3;
    if tv > allowed {
        return Err(LabError::TruncationUnstable(format!(
            "series and simulation differ by TV {tv:.4} (allowed {allowed:.4}) at t = {t}"
        )));
    }
    Ok(series)
}

/// Joint law of `(#K(t1), #K(t2))` from the entrance law, `t1 < t2`:
/// `joint[a][b] = P(#K(t1) = a) P_a(#K(t2 - t1) = b)`.
pub fn two_time_law(t1: f64, t2: f64, truncation: u32) -> LabResult<Vec<Vec<f64>>> {
    if !(t2 > t1) {
        return Err(LabError::Invalid(format!("need t1 < t2, got {t1}, {t2}")));
    }
    let first = series_law(None, t1, truncation)?;
    let mut joint = Vec::with_capacity(first.len());
    for (a, &pa) in first.iter().enumerate() {
        let row = if a == 0 {
            vec![0.0]
        } else {
            series_law(Some(a as u32), t2 - t1, a as u32)?.into_iter().map(|p| p * pa).collect()
        };
        joint.push(row);
    }
    Ok(joint)
}

pub fn mean(law: &[f64]) -> f64 {
    law.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
}
