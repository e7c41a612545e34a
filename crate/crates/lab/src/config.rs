//! Run configuration files.
//!
//! A configuration is a strict JSON document: unknown fields are rejected and
//! `version` must match [`CONFIG_VERSION`]. Parsing reports the line and
//! column of the first syntax or schema error; validation then collects every
//! violated invariant before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spatial_coalescent::engine::StopRule;
use spatial_coalescent::geometry::GreenMethod;
use spatial_coalescent::{
    Atom, ClassifierConfig, DensityPiece, GeographySpec, LabeledPartition, LambdaMeasure, QuadratureConfig, RateKernel,
    WalkSpec,
};

use crate::error::{LabError, LabResult};
use crate::experiments::ProbeMode;
use crate::kingman::EntranceMethod;

pub const CONFIG_VERSION: u32 = 1;

/// Lattice-sum length used when a torus experiment does not supply `G`.
pub const DEFAULT_LATTICE_STEPS: u32 = 120;

/// Largest torus accepted from a configuration, in sites.
pub const SITE_BUDGET: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed. Required, either here or on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one_replica")]
    pub replicas: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default)]
    pub geography: GeographyConfig,
    #[serde(default)]
    pub kernel: KernelOptions,
    pub command: Command,
}

fn one_replica() -> u32 {
    1
}

/// Atoms and density pieces of Λ, in the same layout as the serialised
/// [`LambdaMeasure`] but validated only when the run is checked.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub densities: Vec<DensityPiece>,
}

impl MeasureSpec {
    pub fn build(&self) -> LabResult<LambdaMeasure> {
        let mut violations = Vec::new();
        for a in &self.atoms {
            if let Err(e) = LambdaMeasure::new(vec![*a], Vec::new()) {
                violations.push(format!("measure.atoms: {e}"));
            }
        }
        for p in &self.densities {
            if let Err(e) = LambdaMeasure::new(Vec::new(), vec![p.clone()]) {
                violations.push(format!("measure.densities: {e}"));
            }
        }
        if !violations.is_empty() {
            return Err(LabError::Validation(violations));
        }
        LambdaMeasure::new(self.atoms.clone(), self.densities.clone())
            .map_err(|e| LabError::Validation(vec![format!("measure: {e}")]))
    }
}

impl From<&LambdaMeasure> for MeasureSpec {
    fn from(m: &LambdaMeasure) -> Self {
        Self {
            atoms: m.atoms().to_vec(),
            densities: m.pieces().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum GeographyConfig {
    #[default]
    SingleSite,
    CompleteGraph { sites: usize },
    /// `[-n, n]^d` with wrap-around; the walk defaults to nearest neighbour.
    Torus {
        n: u32,
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        walk: Option<WalkSpec>,
    },
    /// Dense row-stochastic matrix.
    Matrix { rows: Vec<Vec<f64>> },
}

impl GeographyConfig {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            GeographyConfig::SingleSite => {}
            GeographyConfig::CompleteGraph { sites } => {
                if *sites == 0 {
                    out.push("geography: complete graph needs at least one site".into());
                }
            }
            GeographyConfig::Torus { n, dim, walk } => {
                if *dim == 0 {
                    out.push("geography: torus dimension must be >= 1".into());
                }
                if let Some(w) = walk {
                    if let Err(e) = w.validate() {
                        out.push(format!("geography.walk: {e}"));
                    }
                    if w.dim != *dim {
                        out.push(format!("geography.walk: dimension {} differs from torus dimension {dim}", w.dim));
                    }
                }
                let sites = (2 * *n as u128 + 1).checked_pow(*dim as u32).unwrap_or(u128::MAX);
                if sites > SITE_BUDGET as u128 {
                    out.push(format!("geography: torus has {sites} sites, above the budget of {SITE_BUDGET}"));
                }
            }
            GeographyConfig::Matrix { rows } => {
                if rows.is_empty() {
                    out.push("geography: matrix has no rows".into());
                }
                for (i, r) in rows.iter().enumerate() {
                    if r.len() != rows.len() {
                        out.push(format!("geography: row {i} has {} entries, expected {}", r.len(), rows.len()));
                    }
                    if r.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                        out.push(format!("geography: row {i} has a negative or non-finite entry"));
                    }
                    let sum: f64 = r.iter().sum();
                    if (sum - 1.0).abs() > 1e-12 {
                        out.push(format!("geography: row {i} sums to {sum}, not 1"));
                    }
                }
            }
        }
        out
    }

    pub fn build(&self) -> LabResult<GeographySpec> {
        Ok(match self {
            GeographyConfig::SingleSite => GeographySpec::single_site(),
            GeographyConfig::CompleteGraph { sites } => GeographySpec::complete_graph(*sites)?,
            GeographyConfig::Torus { n, dim, walk } => {
                let w = walk.clone().unwrap_or_else(|| WalkSpec::simple(*dim));
                GeographySpec::build_torus(*n, &w, SITE_BUDGET)?
            }
            GeographyConfig::Matrix { rows } => GeographySpec::from_dense(rows)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOptions {
    /// Largest block count with a precomputed rate table.
    #[serde(default = "default_b_max")]
    pub b_max: u64,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

fn default_b_max() -> u64 {
    200
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            b_max: default_b_max(),
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Rates(RatesParams),
    Classify(ClassifyParams),
    Green(GreenParams),
    Simulate(SimulateParams),
    Experiment(Experiment),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rates(_) => "rates",
            Command::Classify(_) => "classify",
            Command::Green(_) => "green",
            Command::Simulate(_) => "simulate",
            Command::Experiment(_) => "experiment",
        }
    }

    fn needs_measure(&self) -> bool {
        !matches!(
            self,
            Command::Green(_)
                | Command::Experiment(Experiment::KingmanEntrance { .. })
                | Command::Experiment(Experiment::GreenConsensus { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesParams {
    /// Rows `b = 2..=b_max` of the tables.
    pub b_max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyParams {
    #[serde(default = "default_classify_b_max")]
    pub b_max: u64,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

fn default_classify_b_max() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenParams {
    pub dim: usize,
    /// Step law; nearest neighbour when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkSpec>,
    pub method: GreenMethod,
}

impl GreenParams {
    pub fn walk(&self) -> WalkSpec {
        self.walk.clone().unwrap_or_else(|| WalkSpec::simple(self.dim))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// The same number of singletons at every site.
    PerSite(u32),
    /// `counts[s]` singletons at site `s`.
    Counts(Vec<u32>),
    /// Explicit blocks `(elements, site)` over `[n]`.
    Blocks { n: u32, blocks: Vec<(Vec<u32>, u32)> },
}

impl InitialSpec {
    pub fn build(&self, sites: usize) -> LabResult<LabeledPartition> {
        match self {
            InitialSpec::PerSite(c) => Ok(LabeledPartition::singletons_per_site(&vec![*c; sites])),
            InitialSpec::Counts(c) => {
                if c.len() != sites {
                    return Err(LabError::Validation(vec![format!(
                        "initial: {} site counts for {sites} sites",
                        c.len()
                    )]));
                }
                Ok(LabeledPartition::singletons_per_site(c))
            }
            InitialSpec::Blocks { n, blocks } => {
                if let Some((_, s)) = blocks.iter().find(|(_, s)| *s as usize >= sites) {
                    return Err(LabError::Validation(vec![format!("initial: site {s} outside [0, {sites})")]));
                }
                let blocks = blocks
                    .iter()
                    .map(|(els, s)| (els.clone(), spatial_coalescent::Label::Site(*s)))
                    .collect();
                LabeledPartition::new(*n, blocks).map_err(|e| LabError::Validation(vec![format!("initial: {e}")]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_stop")]
    pub stop: StopRule,
    #[serde(default)]
    pub killing: bool,
}

fn default_stop() -> StopRule {
    StopRule::Absorbed
}

/// Where a torus experiment gets `G` from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GreenSource {
    Value(f64),
    LatticeSum { steps: u32 },
}

impl Default for GreenSource {
    fn default() -> Self {
        GreenSource::LatticeSum {
            steps: DEFAULT_LATTICE_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Experiment {
    /// Mean time from `n` singletons per site down to `k` blocks per site.
    HittingTime { n: u32, k: u32 },
    /// Nonspatial absorption time from `n` singletons to one block.
    Absorption { n: u32 },
    StayInfiniteTrend {
        n_grid: Vec<u32>,
        t_probes: Vec<f64>,
        #[serde(default)]
        killing: bool,
    },
    KingmanEntrance { t: f64, method: EntranceMethod },
    Pairwise {
        n: u32,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        green: GreenSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        separation: Option<i64>,
        #[serde(default)]
        compare_same_site: bool,
    },
    BlockCount {
        n: u32,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        green: GreenSource,
        n_per_site: u32,
        times: Vec<f64>,
        #[serde(default = "default_probe")]
        mode: ProbeMode,
    },
    PartitionStructure {
        n: u32,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        green: GreenSource,
        blocks: usize,
    },
    ClassCoupling {
        initial: InitialSpec,
        classes: Vec<Vec<u32>>,
        t: f64,
    },
    CollapseProfile {
        #[serde(default = "default_dim")]
        dim: usize,
        n_grid: Vec<u32>,
        t_grid: Vec<f64>,
    },
    GreenConsensus {
        #[serde(default = "default_dim")]
        dim: usize,
        lattice_steps: u32,
        mc_replicas: u64,
        mc_horizon: u64,
    },
}

fn default_dim() -> usize {
    3
}

fn default_probe() -> ProbeMode {
    ProbeMode::Direct
}

/// A validated configuration with its measure and geography built.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: RunConfig,
    pub seed: u64,
    pub kernel: Option<RateKernel>,
    pub geography: GeographySpec,
}

impl RunConfig {
    /// Checks every invariant and builds the rate kernel and geography.
    pub fn validate(self) -> LabResult<ValidatedConfig> {
        let mut v = Vec::new();
        if self.version != CONFIG_VERSION {
            v.push(format!("version: expected {CONFIG_VERSION}, got {}", self.version));
        }
        if self.seed.is_none() {
            v.push("seed: a master seed is required".into());
        }
        if self.replicas == 0 {
            v.push("replicas: must be positive".into());
        }
        if self.event_budget == Some(0) {
            v.push("event_budget: must be positive".into());
        }
        if self.kernel.b_max < 2 {
            v.push("kernel.b_max: must be >= 2".into());
        }
        if let Err(e) = self.kernel.quadrature.validate() {
            v.push(format!("kernel.quadrature: {e}"));
        }
        v.extend(self.geography.violations());
        v.extend(self.command_violations());
        let measure = match &self.measure {
            Some(m) => match m.build() {
                Ok(m) => Some(m),
                Err(LabError::Validation(mv)) => {
                    v.extend(mv);
                    None
                }
                Err(e) => return Err(e),
            },
            None => {
                if self.command.needs_measure() {
                    v.push("measure: required by this command".into());
                }
                None
            }
        };
        if !v.is_empty() {
            return Err(LabError::Validation(v));
        }
        let geography = self.geography.build()?;
        let kernel = match measure {
            Some(m) => Some(RateKernel::with_config(m, self.kernel.quadrature, self.kernel.b_max)?),
            None => None,
        };
        Ok(ValidatedConfig {
            seed: self.seed.expect("checked above"),
            config: self,
            kernel,
            geography,
        })
    }

    fn command_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                v.push(format!("command.{}: {msg}", self.command.name()));
            }
        };
        let positive = |xs: &[f64]| !xs.is_empty() && xs.iter().all(|t| *t > 0.0 && t.is_finite());
        match &self.command {
            Command::Rates(p) => need(p.b_max >= 2, "b_max must be >= 2"),
            Command::Classify(p) => {
                need(p.b_max >= 2, "b_max must be >= 2");
                need(p.classifier.validate().is_ok(), "classifier window or margins are invalid");
            }
            Command::Green(p) => {
                need(p.dim >= 3, "the Green function needs d >= 3");
                if let Some(w) = &p.walk {
                    need(w.validate().is_ok() && w.dim == p.dim, "walk is invalid or has the wrong dimension");
                }
            }
            Command::Simulate(p) => {
                need(p.horizon.is_none_or(|h| h > 0.0), "horizon must be > 0");
                need(p.stop != StopRule::BlocksAtMost(0), "blocks_at_most needs m >= 1");
                need(
                    p.horizon.is_some() || p.stop != StopRule::Horizon,
                    "stop rule 'horizon' needs a horizon",
                );
            }
            Command::Experiment(e) => match e {
                Experiment::HittingTime { n, k } => {
                    need(*n >= 2 && *k >= 2, "n and k must be >= 2");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::Absorption { n } => {
                    need(*n >= 1, "n must be >= 1");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::StayInfiniteTrend { n_grid, t_probes, .. } => {
                    need(!n_grid.is_empty() && n_grid.iter().all(|n| *n >= 1), "n_grid must be nonempty and positive");
                    need(positive(t_probes), "t_probes must be positive");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::KingmanEntrance { t, .. } => need(*t > 0.0, "t must be > 0"),
                Experiment::Pairwise { dim, .. } | Experiment::PartitionStructure { dim, .. } => {
                    need(*dim >= 3, "torus experiments need d >= 3");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::BlockCount {
                    dim, n_per_site, times, ..
                } => {
                    need(*dim >= 3, "torus experiments need d >= 3");
                    need(*n_per_site >= 1, "n_per_site must be >= 1");
                    need(positive(times), "times must be positive");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::ClassCoupling { classes, t, .. } => {
                    need(!classes.is_empty(), "classes must be nonempty");
                    need(*t > 0.0, "t must be > 0");
                }
                Experiment::CollapseProfile { dim, n_grid, t_grid } => {
                    need(*dim >= 3, "torus experiments need d >= 3");
                    need(!n_grid.is_empty(), "n_grid must be nonempty");
                    need(positive(t_grid), "t_grid must be positive");
                    need(self.replicas >= 2, "replicas must be >= 2");
                }
                Experiment::GreenConsensus {
                    dim,
                    mc_replicas,
                    mc_horizon,
                    ..
                } => {
                    need(*dim >= 3, "the Green function needs d >= 3");
                    need(*mc_replicas >= 2 && *mc_horizon >= 1, "Monte Carlo budget must be positive");
                }
            },
        }
        if let Some(g) = experiment_green(&self.command) {
            match g {
                GreenSource::Value(x) => need(x > 0.0 && x.is_finite(), "green value must be positive"),
                GreenSource::LatticeSum { steps } => need(steps >= 2, "lattice sum needs >= 2 steps"),
            }
        }
        v
    }

    /// Hex SHA-256 of the canonical JSON form, leaving out the output
    /// directory (it does not affect any result).
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out: None, ..self.clone() };
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn experiment_green(cmd: &Command) -> Option<GreenSource> {
    match cmd {
        Command::Experiment(
            Experiment::Pairwise { green, .. }
            | Experiment::BlockCount { green, .. }
            | Experiment::PartitionStructure { green, .. },
        ) => Some(*green),
        _ => None,
    }
}

/// Parses a configuration from JSON text without validating it.
pub fn parse_config_str(text: &str) -> LabResult<RunConfig> {
    serde_json::from_str(text).map_err(|e| LabError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads and parses a configuration file.
pub fn parse_config(path: impl AsRef<Path>) -> LabResult<RunConfig> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| LabError::io(path.as_ref(), e))?;
    parse_config_str(&text)
}
