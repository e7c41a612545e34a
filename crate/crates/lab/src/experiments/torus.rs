//! Experiments on the torus `[-N,N]^d` at the time scale `(2N+1)^d`.

use serde::{Deserialize, Serialize};
use spatial_coalescent::engine::{
    coupled_simulate, simulate, EventKind, EventRecording, MergeLaw, RecordOptions, SimulationConfig, Simulator,
    StopRule, VariantSpec,
};
use spatial_coalescent::geometry::{green_function, GreenAccumulator, GreenMethod};
use spatial_coalescent::seeding::{derive_seed, replica_rng};
use spatial_coalescent::{kappa, Estimate, GeographySpec, Label, LabeledPartition, RateKernel, WalkSpec};

use super::{par_replicas, DistributionComparison};
use crate::error::{LabError, LabResult};
use crate::kingman::{entrance_law, stable_start, two_time_law, EntranceMethod};
use crate::stats::{chi_square, ks_p_value, ks_statistic, MeanSe};

const SITE_BUDGET: u64 = 1 << 24;

/// Series truncation for the Kingman reference laws.
const TRUNCATION: u32 = 400;

fn torus(n: u32, walk: &WalkSpec) -> LabResult<GeographySpec> {
    if walk.dim < 3 {
        return Err(spatial_coalescent::Error::DimensionTooLow(walk.dim).into());
    }
    Ok(GeographySpec::build_torus(n, walk, SITE_BUDGET)?)
}

fn volume(n: u32, dim: usize) -> f64 {
    ((2 * n + 1) as f64).powi(dim as i32)
}

/// Sites for `count ≤ 8` blocks with pairwise distances in `[N^{3/4}, √d N]`.
///
/// The first four are the vertices `0, (N,N,0), (N,0,N), (0,N,N)` of a regular
/// tetrahedron, so for up to four blocks every pair is equally far apart; the
/// remaining cube vertices follow.
pub fn separated_sites(geo: &GeographySpec, count: usize) -> LabResult<Vec<u32>> {
    let (n, dim) = match geo.topology() {
        spatial_coalescent::Topology::Torus { n, dim, .. } => (*n as i64, *dim),
        _ => return Err(LabError::Invalid("separated placement needs a torus".into())),
    };
    if dim < 3 || count > 8 {
        return Err(LabError::Invalid(format!("separated placement supports d >= 3 and <= 8 blocks, got d = {dim}, {count}")));
    }
    const CORNERS: [[i64; 3]; 8] = [
        [0, 0, 0],
        [1, 1, 0],
        [1, 0, 1],
        [0, 1, 1],
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 1],
    ];
    let sites: Vec<u32> = CORNERS[..count]
        .iter()
        .map(|c| {
            let mut x = vec![0i64; dim];
            for (i, v) in c.iter().enumerate() {
                x[i] = v * n;
            }
            geo.torus_site(&x).expect("torus coordinates") as u32
        })
        .collect();
    let lo = (n as f64).powf(0.75);
    let hi = (dim as f64).sqrt() * n as f64;
    for i in 0..count {
        for j in 0..i {
            let d = geo.torus_distance(sites[i] as usize, sites[j] as usize).unwrap_or(0.0);
            if d < lo - 1e-9 || d > hi + 1e-9 {
                return Err(LabError::Invalid(format!("blocks {j} and {i} are {d:.2} apart, outside [{lo:.2}, {hi:.2}]")));
            }
        }
    }
    Ok(sites)
}

/// Rescaled first coalescence time of two blocks against `Exp(κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub n: u32,
    pub sites: usize,
    pub separation: i64,
    pub green: f64,
    pub kappa: f64,
    pub replicas: usize,
    pub mean_rescaled: f64,
    pub se_rescaled: f64,
    /// `1 / mean`, the maximum-likelihood exponential rate.
    pub fitted_rate: f64,
    pub ks: f64,
    pub ks_p: f64,
    /// Same replicas started with both blocks at one site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_site_mean: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Two blocks at distance `separation` (default `N`) along the first axis.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_torus_experiment(
    n: u32,
    walk: &WalkSpec,
    kernel: &RateKernel,
    green: f64,
    replicas: u32,
    seed: u64,
    separation: Option<i64>,
    compare_same_site: bool,
) -> LabResult<PairwiseReport> {
    let geo = torus(n, walk)?;
    let sep = separation.unwrap_or(n as i64);
    let lo = (n as f64).powf(0.75);
    if (sep as f64) < lo || sep > n as i64 {
        return Err(LabError::Invalid(format!("separation {sep} outside [N^(3/4), N] = [{lo:.2}, {n}]")));
    }
    let origin = vec![0i64; walk.dim];
    let mut other = origin.clone();
    other[0] = sep;
    let a = geo.torus_site(&origin).expect("origin") as u32;
    let b = geo.torus_site(&other).expect("torus coordinates") as u32;
    let k = kappa(green, kernel.lambda22());
    let v = volume(n, walk.dim);
    let law = MergeLaw::new(kernel, 16)?;
    let mut cfg = SimulationConfig::new(kernel, &geo);
    cfg.merge_law = Some(&law);
    cfg.stop = StopRule::Absorbed;
    cfg.seed = seed;
    cfg.record = RecordOptions::minimal();
    let run = |start: &LabeledPartition| {
        par_replicas(replicas, |r| {
            let mut c = cfg;
            c.replica = r;
            Ok(simulate(start, &c)?.final_time / v)
        })
    };
    let samples = run(&LabeledPartition::singletons(&[Label::Site(a), Label::Site(b)]))?;
    let same_site_mean = if compare_same_site {
        Some(MeanSe::of(&run(&LabeledPartition::singletons(&[Label::Site(a), Label::Site(a)]))?).mean)
    } else {
        None
    };
    let m = MeanSe::of(&samples);
    let ks = ks_statistic(&samples, |x| 1.0 - (-k * x).exp());
    Ok(PairwiseReport {
        n,
        sites: geo.sites(),
        separation: sep,
        green,
        kappa: k,
        replicas: samples.len(),
        mean_rescaled: m.mean,
        se_rescaled: m.se,
        fitted_rate: 1.0 / m.mean,
        ks,
        ks_p: ks_p_value(ks, samples.len()),
        same_site_mean,
        samples,
    })
}

/// When the block count is read off, in units of `(2N+1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// At `t (2N+1)^d`.
    Direct,
    /// At `N^{3/2} + t (2N+1)^d`: the local collapse first, then the Kingman phase.
    TwoStage,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeComparison {
    pub t: f64,
    pub mode: ProbeMode,
    /// Absolute probe time.
    pub probe_time: f64,
    pub comparison: DistributionComparison,
}

/// Joint law of the counts at two times against the Kingman two-time law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTest {
    pub t1: f64,
    pub t2: f64,
    pub chi_square: f64,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountReport {
    pub n: u32,
    pub sites: usize,
    pub n_per_site: u32,
    pub green: f64,
    pub kappa: f64,
    pub volume: f64,
    pub replicas: usize,
    pub comparisons: Vec<TimeComparison>,
    /// Block count at `N^{3/2}`, inside the collapse window.
    pub collapse_time: f64,
    pub collapse_mean: f64,
    pub collapse_se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointTest>,
    /// `counts[r][j]`: replica `r` at probe `j` (collapse probe first).
    #[serde(skip)]
    pub counts: Vec<Vec<u32>>,
}

/// Law of `#K(τ)` from infinitely many blocks: the series where it is
/// numerically sound, otherwise a death chain from a stable start.
pub fn reference_law(tau: f64, seed: u64) -> LabResult<Vec<f64>> {
    match entrance_law(tau, EntranceMethod::Series { truncation: TRUNCATION }) {
        Ok(law) => Ok(law),
        Err(LabError::TruncationUnstable(_)) => {
            let n0 = stable_start(tau, 1e-3).unwrap_or((10.0 * (2.0 / tau).ceil()) as u32);
            entrance_law(
                tau,
                EntranceMethod::SimulateFrom {
                    n0,
                    replicas: 200_000,
                    seed,
                },
            )
        }
        Err(e) => Err(e),
    }
}

/// Block count on the torus from `n_per_site` singletons everywhere, read at
/// rescaled times and compared with `#K(κt)`.
#[allow(clippy::too_many_arguments)]
pub fn block_count_limit_experiment(
    n: u32,
    walk: &WalkSpec,
    kernel: &RateKernel,
    green: f64,
    n_per_site: u32,
    times: &[f64],
    replicas: u32,
    seed: u64,
    mode: ProbeMode,
    event_budget: Option<u64>,
) -> LabResult<BlockCountReport> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || n_per_site == 0 || replicas < 2 {
        return Err(LabError::Invalid("need positive times, n_per_site >= 1 and replicas >= 2".into()));
    }
    let geo = torus(n, walk)?;
    let k = kappa(green, kernel.lambda22());
    let v = volume(n, walk.dim);
    let collapse_time = (n as f64).powf(1.5);
    let mut probes: Vec<(f64, Option<(f64, ProbeMode)>)> = vec![(collapse_time, None)];
    for &t in times {
        if mode != ProbeMode::TwoStage {
            probes.push((t * v, Some((t, ProbeMode::Direct))));
        }
        if mode != ProbeMode::Direct {
            probes.push((collapse_time + t * v, Some((t, ProbeMode::TwoStage))));
        }
    }
    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.sort_by(|&i, &j| probes[i].0.total_cmp(&probes[j].0));
    let start = LabeledPartition::singletons_per_site(&vec![n_per_site; geo.sites()]);
    let law = MergeLaw::new(kernel, (4 * n_per_site as u64).max(64))?;
    let mut cfg = SimulationConfig::new(kernel, &geo);
    cfg.merge_law = Some(&law);
    cfg.stop = StopRule::Horizon;
    cfg.horizon = probes.iter().map(|p| p.0).fold(0.0, f64::max);
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions::minimal();
    let counts = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        let mut sim = Simulator::new(&start, c)?;
        let mut out = vec![0u32; probes.len()];
        for &i in &order {
            sim.advance_to(probes[i].0)?;
            out[i] = sim.block_count();
        }
        Ok(out)
    })?;
    let mut comparisons = Vec::new();
    for (j, (time, tag)) in probes.iter().enumerate() {
        let Some((t, m)) = *tag else { continue };
        let reference = reference_law(k * t, derive_seed(seed, j as u64))?;
        let sample: Vec<u32> = counts.iter().map(|c| c[j]).collect();
        comparisons.push(TimeComparison {
            t,
            mode: m,
            probe_time: *time,
            comparison: DistributionComparison::new(&sample, &reference),
        });
    }
    let collapse = MeanSe::of(&counts.iter().map(|c| c[0] as f64).collect::<Vec<_>>());
    let joint = if times.len() >= 2 && times[1] > times[0] {
        let direct = |t: f64| {
            probes
                .iter()
                .position(|p| p.1 == Some((t, ProbeMode::Direct)) || p.1 == Some((t, ProbeMode::TwoStage)))
                .expect("probe present")
        };
        let (i1, i2) = (direct(times[0]), direct(times[1]));
        let law = two_time_law(k * times[0], k * times[1], TRUNCATION)?;
        let rows = law.len().max(counts.iter().map(|c| c[i1] as usize + 1).max().unwrap_or(0));
        let cols = law
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
            .max(counts.iter().map(|c| c[i2] as usize + 1).max().unwrap_or(0));
        let mut observed = vec![0u64; rows * cols];
        let mut probs = vec![0.0; rows * cols];
        for c in &counts {
            observed[c[i1] as usize * cols + c[i2] as usize] += 1;
        }
        for (a, row) in law.iter().enumerate() {
            for (b, p) in row.iter().enumerate() {
                probs[a * cols + b] = *p;
            }
        }
        let (stat, df, p) = chi_square(&observed, &probs);
        Some(JointTest {
            t1: times[0],
            t2: times[1],
            chi_square: stat,
            df,
            p,
        })
    } else {
        None
    };
    Ok(BlockCountReport {
        n,
        sites: geo.sites(),
        n_per_site,
        green,
        kappa: k,
        volume: v,
        replicas: counts.len(),
        comparisons,
        collapse_time,
        collapse_mean: collapse.mean,
        collapse_se: collapse.se,
        joint,
        counts,
    })
}

/// Chi-square test that the merging pair is uniform among the pairs present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    /// Blocks alive just before the merge.
    pub blocks: usize,
    pub counts: Vec<u64>,
    pub p: f64,
}

/// Rescaled waiting time from `blocks` to `blocks - 1` against `Exp(κ C(blocks,2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingTimeTest {
    pub blocks: usize,
    pub rate: f64,
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
    pub ks: f64,
    pub ks_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub n: u32,
    pub blocks: usize,
    pub kappa: f64,
    pub replicas: usize,
    pub pair_tests: Vec<PairTest>,
    pub waiting_times: Vec<WaitingTimeTest>,
    pub merges: u64,
    pub multiple_merges: u64,
    /// Share of mergers with more than two participants.
    pub multiple_merge_fraction: f64,
}

/// Separated blocks on the torus, run to a single block; checks the pair
/// structure and the waiting times of the limiting Kingman coalescent.
#[allow(clippy::too_many_arguments)]
pub fn partition_structure_experiment(
    n: u32,
    walk: &WalkSpec,
    kernel: &RateKernel,
    green: f64,
    blocks: usize,
    replicas: u32,
    seed: u64,
    event_budget: Option<u64>,
) -> LabResult<StructureReport> {
    if !(2..=8).contains(&blocks) || replicas < 2 {
        return Err(LabError::Invalid(format!("need 2..=8 blocks and replicas >= 2, got {blocks}, {replicas}")));
    }
    let geo = torus(n, walk)?;
    let sites = separated_sites(&geo, blocks)?;
    let start = LabeledPartition::singletons(&sites.iter().map(|&s| Label::Site(s)).collect::<Vec<_>>());
    let k = kappa(green, kernel.lambda22());
    let v = volume(n, walk.dim);
    let law = MergeLaw::new(kernel, 16)?;
    let mut cfg = SimulationConfig::new(kernel, &geo);
    cfg.merge_law = Some(&law);
    cfg.stop = StopRule::Absorbed;
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions {
        events: EventRecording::Structural,
        counts: false,
        elements: false,
    };
    // per replica: (alive before, participants, pair index, waiting time)
    let merges = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        let rec = simulate(&start, &c)?;
        let mut alive: Vec<u32> = (0..blocks as u32).collect();
        let mut last = 0.0;
        let mut out = Vec::new();
        for e in &rec.events {
            if let EventKind::Merge { blocks: ids, .. } = &e.kind {
                let before = alive.len();
                let pair = (ids.len() == 2).then(|| {
                    let i = alive.binary_search(&ids[0]).expect("alive block");
                    let j = alive.binary_search(&ids[1]).expect("alive block");
                    // lexicographic index of (i, j), i < j
                    i * before - i * (i + 1) / 2 + (j - i - 1)
                });
                alive.retain(|b| !ids[1..].contains(b));
                out.push((before, ids.len(), pair, (e.time - last) / v));
                last = e.time;
            }
        }
        Ok(out)
    })?;
    let mut pair_tests = Vec::new();
    let mut waiting_times = Vec::new();
    for r in (2..=blocks).rev() {
        let pairs = r * (r - 1) / 2;
        let mut counts = vec![0u64; pairs];
        let mut waits = Vec::new();
        for run in &merges {
            for &(before, size, pair, wait) in run {
                if before != r {
                    continue;
                }
                if let Some(p) = pair {
                    counts[p] += 1;
                }
                if size == 2 {
                    waits.push(wait);
                }
            }
        }
        if pairs >= 2 {
            let (_, _, p) = chi_square(&counts, &vec![1.0 / pairs as f64; pairs]);
            pair_tests.push(PairTest { blocks: r, counts, p });
        }
        let rate = k * pairs as f64;
        let m = MeanSe::of(&waits);
        let ks = ks_statistic(&waits, |x| 1.0 - (-rate * x).exp());
        waiting_times.push(WaitingTimeTest {
            blocks: r,
            rate,
            mean: m.mean,
            se: m.se,
            samples: waits.len(),
            ks,
            ks_p: ks_p_value(ks, waits.len()),
        });
    }
    let total: u64 = merges.iter().map(|m| m.len() as u64).sum();
    let multiple: u64 = merges.iter().flatten().filter(|m| m.1 > 2).count() as u64;
    Ok(StructureReport {
        n,
        blocks,
        kappa: k,
        replicas: merges.len(),
        pair_tests,
        waiting_times,
        merges: total,
        multiple_merges: multiple,
        multiple_merge_fraction: multiple as f64 / total.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub classes: usize,
    pub replicas: usize,
    /// Replicas where `#Π ≤ Σ_j #Π^j` held at every event time.
    pub dominated: usize,
    /// Replicas where `#Π = Σ_j #Π^j` held at every event time.
    pub equal: usize,
    pub mean_full: f64,
    pub mean_class_sum: f64,
}

/// Runs `initial` and its class restrictions on one event stream up to `t`
/// and checks `#Π(s) ≤ Σ_j #Π^j(s)` at every event time `s ≤ t`.
#[allow(clippy::too_many_arguments)]
pub fn class_coupling_check(
    geography: &GeographySpec,
    kernel: &RateKernel,
    initial: &LabeledPartition,
    classes: &[Vec<u32>],
    t: f64,
    replicas: u32,
    seed: u64,
    event_budget: Option<u64>,
) -> LabResult<CouplingReport> {
    let n = initial.n();
    let mut seen = vec![false; n as usize + 1];
    for &e in classes.iter().flatten() {
        if e == 0 || e > n || std::mem::replace(&mut seen[e as usize], true) {
            return Err(spatial_coalescent::Error::IncompatibleVariants(format!("element {e} is not a fresh element of [{n}]")).into());
        }
    }
    if seen[1..].iter().any(|s| !s) {
        return Err(spatial_coalescent::Error::IncompatibleVariants("classes do not cover the ground set".into()).into());
    }
    let mut variants = vec![VariantSpec::Full];
    variants.extend(classes.iter().map(|c| VariantSpec::Subset(c.clone())));
    let law = MergeLaw::new(kernel, 16)?;
    let mut cfg = SimulationConfig::new(kernel, geography);
    cfg.merge_law = Some(&law);
    cfg.stop = StopRule::Horizon;
    cfg.horizon = t;
    cfg.seed = seed;
    cfg.event_budget = event_budget;
    cfg.record = RecordOptions {
        counts: true,
        ..RecordOptions::minimal()
    };
    let outcomes = par_replicas(replicas, |r| {
        let mut c = cfg;
        c.replica = r;
        let runs = coupled_simulate(initial, &variants, &c)?;
        let (full, parts) = runs.split_first().expect("full run");
        let mut dominated = true;
        let mut equal = true;
        let times = runs.iter().flat_map(|run| run.counts.iter().map(|&(s, _)| s));
        for s in times {
            let a = full.count_at(s).unwrap_or(0);
            let b: u32 = parts.iter().map(|p| p.count_at(s).unwrap_or(0)).sum();
            dominated &= a <= b;
            equal &= a == b;
        }
        let b: u32 = parts.iter().map(|p| p.final_block_count).sum();
        Ok((dominated, equal, full.final_block_count as f64, b as f64))
    })?;
    let count = outcomes.len();
    Ok(CouplingReport {
        classes: classes.len(),
        replicas: count,
        dominated: outcomes.iter().filter(|o| o.0).count(),
        equal: outcomes.iter().filter(|o| o.1).count(),
        mean_full: outcomes.iter().map(|o| o.2).sum::<f64>() / count as f64,
        mean_class_sum: outcomes.iter().map(|o| o.3).sum::<f64>() / count as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub n: u32,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    /// `E[#Π(t)] / max(1, #Π(0)/t)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub points: Vec<CollapsePoint>,
    /// Largest ratio per torus size.
    pub sup_by_n: Vec<(u32, f64)>,
}

/// `E[#Π(t)]` from one singleton per torus site over a `(N, t)` grid,
/// normalised by `max(1, #Π(0)/t)`.
pub fn collapse_profile(
    walk: &WalkSpec,
    kernel: &RateKernel,
    n_grid: &[u32],
    t_grid: &[f64],
    replicas: u32,
    seed: u64,
) -> LabResult<CollapseReport> {
    let mut times = t_grid.to_vec();
    times.sort_by(f64::total_cmp);
    if times.is_empty() || times[0] <= 0.0 || replicas < 2 {
        return Err(LabError::Invalid("need positive times and replicas >= 2".into()));
    }
    let law = MergeLaw::new(kernel, 16)?;
    let mut points = Vec::new();
    let mut sup_by_n = Vec::new();
    for (gi, &n) in n_grid.iter().enumerate() {
        let geo = torus(n, walk)?;
        let start = LabeledPartition::singletons_per_site(&vec![1; geo.sites()]);
        let mut cfg = SimulationConfig::new(kernel, &geo);
        cfg.merge_law = Some(&law);
        cfg.stop = StopRule::Horizon;
        cfg.horizon = *times.last().expect("nonempty");
        cfg.seed = derive_seed(seed, gi as u64);
        cfg.record = RecordOptions::minimal();
        let counts = par_replicas(replicas, |r| {
            let mut c = cfg;
            c.replica = r;
            let mut sim = Simulator::new(&start, c)?;
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                sim.advance_to(t)?;
                out.push(sim.block_count() as f64);
            }
            Ok(out)
        })?;
        let n0 = geo.sites() as f64;
        let mut sup = 0.0f64;
        for (j, &t) in times.iter().enumerate() {
            let m = MeanSe::of(&counts.iter().map(|c| c[j]).collect::<Vec<_>>());
            let ratio = m.mean / (n0 / t).max(1.0);
            sup = sup.max(ratio);
            points.push(CollapsePoint {
                n,
                t,
                mean: m.mean,
                se: m.se,
                ratio,
            });
        }
        sup_by_n.push((n, sup));
    }
    Ok(CollapseReport { points, sup_by_n })
}

/// Monte Carlo Green function with replicas split over `shards` independent
/// streams of the master seed.
pub fn green_monte_carlo(walk: &WalkSpec, replicas: u64, horizon: u64, seed: u64, shards: u32) -> LabResult<Estimate> {
    let shards = shards.max(1) as u64;
    let parts = par_replicas(shards as u32, |s| {
        let mut acc = GreenAccumulator::default();
        let share = replicas / shards + u64::from(s < replicas % shards);
        acc.run(walk, horizon, share, &mut replica_rng(seed, s));
        Ok(acc)
    })?;
    let mut total = GreenAccumulator::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total.finish(walk, horizon)?)
}

/// Both Green function estimates and whether they agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenConsensus {
    pub lattice: Estimate,
    pub monte_carlo: Estimate,
    pub difference: f64,
    /// `sqrt(e_lattice² + e_mc²)`.
    pub combined_error: f64,
    /// Difference within three combined error bars.
    pub agree: bool,
}

pub fn green_consensus(
    walk: &WalkSpec,
    lattice_steps: u32,
    mc_replicas: u64,
    mc_horizon: u64,
    seed: u64,
) -> LabResult<GreenConsensus> {
    let lattice = green_function(walk, GreenMethod::LatticeSum { steps: lattice_steps })?;
    let monte_carlo = green_monte_carlo(walk, mc_replicas, mc_horizon, seed, 16)?;
    let difference = (lattice.value - monte_carlo.value).abs();
    let combined_error = lattice.error.hypot(monte_carlo.error);
    Ok(GreenConsensus {
        lattice,
        monte_carlo,
        difference,
        combined_error,
        agree: difference <= 3.0 * combined_error,
    })
}
