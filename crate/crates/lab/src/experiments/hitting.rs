use serde::{Deserialize, Serialize};
use spatial_coalescent::engine::{
    coupled_simulate, simulate, MergeLaw, RecordOptions, SimulationConfig, StopRule, VariantSpec,
};
use spatial_coalescent::{ClassifierConfig, GeographySpec, LabeledPartition, RateKernel, Verdict};

use super::{par_replicas, EstimateReport};
use crate::error::{LabError, LabResult};
use crate::stats::{slope, MeanSe};

/// Mean time for `n` singletons per site to drop to at most `kυ` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnkReport {
    pub n: u32,
    pub k: u32,
    pub sites: usize,
    pub hitting_time: EstimateReport,
    /// `Σ_{b≥k} 1/γ_b + k/γ_k`.
    pub uniform_bound: f64,
    /// `3 υ^{1+ρ̂} Σ_{b≥2} 1/γ_b` with the empirical exponent ρ̂.
    pub coarse_bound: f64,
    pub rho_hat: f64,
    pub verdict: Verdict,
    /// Upper end of the 95% interval is below the uniform bound.
    pub below_bound: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Estimates `E[T_n^{(k)}]` from `n` singletons at every site.
pub fn estimate_tnk(
    n: u32,
    k: u32,
    geography: &GeographySpec,
    kernel: &RateKernel,
    replicas: u32,
    seed: u64,
    event_budget: Option<u64>,
) -> LabResult<TnkReport> {
    if n < 2 || k < 2 || replicas < 2 {
        return Err(LabError::Invalid(format!("need n >= 2, k >= 2, replicas >= 2 (got {n}, {k}, {replicas})")));
    }
    let sites = geography.sites();
    let b_max = kernel.b_max().max(1000);
    let verdict = kernel.cdi_classify(b_max, &ClassifierConfig::default())?;
    let uniform_bound = kernel.tn_uniform_bound(k as u64, b_max)?;
    let rho_grid: Vec<(u64, u64)> = [2u64, 3, 4, 8]
        .iter()
        .flat_map(|&m| (4..=12).map(move |e| (1u64 << e, m)))
        .collect();
    let rho_hat = kernel.estimate_rho(&rho_grid)?;
    let coarse_bound = if verdict.verdict == Verdict::ComesDown {
        3.0 * (sites as f64).powf(1.0 + rho_hat) * (verdict.partial_sum + verdict.tail)
    } else {
        f64::INFINITY
    };
    let start = LabeledPartition::singletons_per_site(&vec![n; sites]);
    let law = MergeLaw::new(kernel, (2 * n as u64).max(16))?;
    let mut cfg = SimulationConfig::new(kernel, geography);
    cfg.merge_law = Some(&law);
    cfg.stop = StopRule::BlocksAtMost(k * sites as u32);
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions::minimal();
    let samples = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        Ok(simulate(&start, &c)?.final_time)
    })?;
    let hitting_time = EstimateReport::from_samples(&samples);
    Ok(TnkReport {
        n,
        k,
        sites,
        below_bound: hitting_time.ci_high < uniform_bound,
        hitting_time,
        uniform_bound,
        coarse_bound,
        rho_hat,
        warning: (verdict.verdict != Verdict::ComesDown)
            .then(|| format!("STAYS_INFINITE_WARNING: kernel verdict is {:?}; T_n may diverge in n", verdict.verdict)),
        verdict: verdict.verdict,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub n: u32,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// Block counts at fixed times as the initial size grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub verdict: Verdict,
    pub killing: bool,
    pub points: Vec<TrendPoint>,
    /// Per probe time: least-squares slope of `ln E[#Π(t)]` against `ln n`.
    pub growth_exponents: Vec<(f64, f64)>,
    /// Per probe time: difference of the two largest grid points over
    /// their joint standard error.
    pub last_step_z: Vec<(f64, f64)>,
    /// Means never decrease along the grid (pathwise under the coupling).
    pub monotone: bool,
}

/// `E[#Π(t)]` from `n` singletons per site over `n_grid`. All grid points
/// are restrictions of one run from the largest `n`, so the counts are
/// coupled and monotone in `n` pathwise.
#[allow(clippy::too_many_arguments)]
pub fn stay_infinite_trend(
    kernel: &RateKernel,
    geography: &GeographySpec,
    n_grid: &[u32],
    t_probes: &[f64],
    replicas: u32,
    seed: u64,
    killing: bool,
    event_budget: Option<u64>,
) -> LabResult<TrendReport> {
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let top = *grid.last().ok_or_else(|| LabError::Invalid("empty n grid".into()))?;
    if grid[0] < 1 || replicas < 2 || t_probes.iter().any(|t| !(*t > 0.0)) || t_probes.is_empty() {
        return Err(LabError::Invalid("need n >= 1, replicas >= 2 and positive probe times".into()));
    }
    let verdict = kernel.cdi_classify(kernel.b_max().max(1000), &ClassifierConfig::default())?.verdict;
    let sites = geography.sites() as u32;
    let start = LabeledPartition::singletons_per_site(&vec![top; sites as usize]);
    let variants: Vec<VariantSpec> = grid
        .iter()
        .map(|&n| VariantSpec::Subset((0..sites).flat_map(|s| (s * top + 1)..=(s * top + n)).collect()))
        .collect();
    let law = MergeLaw::new(kernel, (top as u64).max(16))?;
    let mut cfg = SimulationConfig::new(kernel, geography);
    cfg.merge_law = Some(&law);
    cfg.killing = killing;
    cfg.stop = StopRule::Horizon;
    cfg.horizon = t_probes.iter().copied().fold(0.0, f64::max);
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions {
        counts: true,
        ..RecordOptions::minimal()
    };
    // counts[r][variant][probe]
    let counts = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        let runs = coupled_simulate(&start, &variants, &c)?;
        Ok(runs
            .iter()
            .map(|run| t_probes.iter().map(|&t| run.count_at(t).unwrap_or(0) as f64).collect::<Vec<_>>())
            .collect::<Vec<_>>())
    })?;
    let mut points = Vec::new();
    let mut growth_exponents = Vec::new();
    let mut last_step_z = Vec::new();
    let mut monotone = true;
    for (j, &t) in t_probes.iter().enumerate() {
        let stats: Vec<MeanSe> = (0..grid.len())
            .map(|v| MeanSe::of(&counts.iter().map(|c| c[v][j]).collect::<Vec<_>>()))
            .collect();
        for (v, s) in stats.iter().enumerate() {
            points.push(TrendPoint {
                n: grid[v],
                t,
                mean: s.mean,
                se: s.se,
            });
        }
        monotone &= stats.windows(2).all(|w| w[1].mean >= w[0].mean);
        if grid.len() >= 2 {
            let xs: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
            let ys: Vec<f64> = stats.iter().map(|s| s.mean.max(1e-300).ln()).collect();
            growth_exponents.push((t, slope(&xs, &ys)));
            let (a, b) = (&stats[grid.len() - 2], &stats[grid.len() - 1]);
            let joint = (a.se * a.se + b.se * b.se).sqrt();
            let z = if joint > 0.0 {
                (b.mean - a.mean) / joint
            } else if b.mean == a.mean {
                0.0
            } else {
                f64::INFINITY
            };
            last_step_z.push((t, z));
        }
    }
    Ok(TrendReport {
        verdict,
        killing,
        points,
        growth_exponents,
        last_step_z,
        monotone,
    })
}

/// Time from `n` singletons per site to a single block (or none, with killing).
pub fn absorption_time(
    n: u32,
    geography: &GeographySpec,
    kernel: &RateKernel,
    replicas: u32,
    seed: u64,
    event_budget: Option<u64>,
) -> LabResult<(EstimateReport, Vec<f64>)> {
    if n < 1 || replicas < 2 {
        return Err(LabError::Invalid(format!("need n >= 1 and replicas >= 2 (got {n}, {replicas})")));
    }
    let start = LabeledPartition::singletons_per_site(&vec![n; geography.sites()]);
    let law = MergeLaw::new(kernel, (2 * n as u64).max(16))?;
    let mut cfg = SimulationConfig::new(kernel, geography);
    cfg.merge_law = Some(&law);
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions::minimal();
    let samples = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        Ok(simulate(&start, &c)?.final_time)
    })?;
    Ok((EstimateReport::from_samples(&samples), samples))
}
