//! Summary statistics and goodness-of-fit tests used by the experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self { mean, se, n }
    }

    pub fn upper95(&self) -> f64 {
        self.mean + Z95 * self.se
    }

    pub fn lower95(&self) -> f64 {
        self.mean - Z95 * self.se
    }
}

/// One-sample Kolmogorov–Smirnov statistic of `sample` against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic p-value of a KS statistic `d` at sample size `n`, using
/// Stephens' small-sample correction of the argument.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    kolmogorov_sf(lambda)
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * x * x).exp();
        s += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Pearson chi-square goodness of fit of counts against expected
/// probabilities. Cells with expected count below 5 are pooled with their
/// neighbours. Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    assert_eq!(observed.len(), probs.len(), "observed and expected cells differ");
    let n: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        o_acc += o as f64;
        e_acc += p * n as f64;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if o_acc > 0.0 || e_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let stat: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let df = cells.len() - 1;
    let p = if stat.is_finite() {
        ChiSquared::new(df as f64).map(|c| c.sf(stat)).unwrap_or(0.0)
    } else {
        0.0
    };
    (stat, df, p)
}

/// Total-variation distance between two probability vectors on a common
/// support (the shorter one is padded with zeros).
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(p, i) - at(q, i)).abs()).sum::<f64>()
}

/// Largest CDF difference between two probability vectors on a common support.
pub fn discrete_ks(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0f64);
    for i in 0..n {
        a += p.get(i).copied().unwrap_or(0.0);
        b += q.get(i).copied().unwrap_or(0.0);
        d = d.max((a - b).abs());
    }
    d
}

/// Normalised histogram of nonnegative integer outcomes, indexed by value.
pub fn histogram(values: &[u32]) -> Vec<f64> {
    let top = values.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0.0; top + 1];
    for &v in values {
        h[v as usize] += 1.0;
    }
    let n = values.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        let d = ks_statistic(&xs, |x| 1.0 - (-x).exp());
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_p_value(d, n) > 0.99);
        // a critical value: D = 1.358/sqrt(n) gives p close to 0.05
        let p = ks_p_value(1.358 / (n as f64).sqrt(), n);
        assert!((p - 0.05).abs() < 0.005, "{p}");
    }

    #[test]
    fn chi_square_matches_table() {
        // statistic 3.84 at one degree of freedom is the 5% point
        let (stat, df, p) = chi_square(&[148, 52], &[0.5, 0.5]);
        assert_eq!(df, 1);
        assert!(stat > 0.0 && p < 1e-6);
        let (_, _, p) = chi_square(&[60, 40], &[0.5, 0.5]);
        assert!((p - 0.0455).abs() < 1e-3, "{p}");
    }

    #[test]
    fn distances() {
        assert_eq!(total_variation(&[0.5, 0.5], &[1.0]), 0.5);
        assert_eq!(discrete_ks(&[0.5, 0.5], &[0.0, 1.0]), 0.5);
        assert_eq!(histogram(&[1, 1, 3, 0]), vec![0.25, 0.5, 0.0, 0.25]);
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
