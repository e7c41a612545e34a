//! Monte Carlo experiments.
//!
//! Every experiment takes a master seed; replica `r` draws from the stream
//! `(seed, r)`, and sub-experiments (grid points) use seeds derived from the
//! master seed and the grid index. Replicas run in parallel and are reduced
//! in replica order, so reports do not depend on the schedule.

mod hitting;
mod torus;

pub use hitting::{absorption_time, estimate_tnk, stay_infinite_trend, TnkReport, TrendPoint, TrendReport};
pub use torus::{
    block_count_limit_experiment, class_coupling_check, collapse_profile, green_consensus, green_monte_carlo,
    pairwise_torus_experiment, partition_structure_experiment, separated_sites, BlockCountReport, CollapsePoint,
    CollapseReport, CouplingReport, GreenConsensus, JointTest, PairTest, PairwiseReport, ProbeMode, StructureReport,
    TimeComparison, WaitingTimeTest,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LabResult;
use crate::stats::{chi_square, discrete_ks, histogram, total_variation, MeanSe, Z95};

/// Point estimate with its standard error and a 95% normal interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub confidence_level: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when the report is written by the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Name of the CSV table with the per-replica values, when written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_table: Option<String>,
}

impl EstimateReport {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = MeanSe::of(xs);
        Self {
            estimate: m.mean,
            std_error: m.se,
            replicas: m.n,
            confidence_level: 0.95,
            ci_low: m.mean - Z95 * m.se,
            ci_high: m.mean + Z95 * m.se,
            config_hash: None,
            raw_table: None,
        }
    }
}

/// Empirical law of a block count against a reference law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    /// `empirical[k]` and `reference[k]` are probabilities of `k` blocks.
    pub empirical: Vec<f64>,
    pub reference: Vec<f64>,
    pub ks: f64,
    pub tv: f64,
    pub chi_square_p: f64,
    pub samples: usize,
}

impl DistributionComparison {
    pub fn new(samples: &[u32], reference: &[f64]) -> Self {
        let mut empirical = histogram(samples);
        let mut reference = reference.to_vec();
        let len = empirical.len().max(reference.len());
        empirical.resize(len, 0.0);
        reference.resize(len, 0.0);
        let mut observed = vec![0u64; len];
        for &s in samples {
            observed[s as usize] += 1;
        }
        let (_, _, p) = chi_square(&observed, &reference);
        Self {
            ks: discrete_ks(&empirical, &reference),
            tv: total_variation(&empirical, &reference),
            chi_square_p: p,
            samples: samples.len(),
            empirical,
            reference,
        }
    }
}

/// Runs `f(r)` for replicas `r = 0..replicas` in parallel, in replica order.
pub(crate) fn par_replicas<T: Send>(replicas: u32, f: impl Fn(u64) -> LabResult<T> + Sync + Send) -> LabResult<Vec<T>> {
    (0..replicas as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_of_identical_laws() {
        let c = DistributionComparison::new(&[1, 2, 2, 3], &[0.0, 0.25, 0.5, 0.25]);
        assert_eq!(c.tv, 0.0);
        assert_eq!(c.ks, 0.0);
        assert_eq!(c.samples, 4);
        let e = EstimateReport::from_samples(&[1.0, 3.0]);
        assert_eq!(e.estimate, 2.0);
        assert!(e.ci_low < 2.0 && e.ci_high > 2.0);
    }
}
