//! The `spcoal` command line: argument parsing and subcommand dispatch.
//!
//! Every run reads a configuration file; `--seed`, `--replicas`, `--out` and
//! `--budget` override the matching fields. The report goes to stdout and,
//! with an output directory, to `report.json` next to the raw tables and a
//! `manifest.json` listing every file. Reports carry no timing information,
//! so equal configurations give byte-identical reports.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spatial_coalescent::engine::{simulate, EventRecording, RecordOptions, SimulationConfig, StopReason, TrajectoryRecord};
use spatial_coalescent::geometry::{green_function, GreenMethod};
use spatial_coalescent::{Error as CoreError, RateKernel, WalkSpec};

use crate::config::{parse_config, Command, Experiment, GreenSource, RunConfig, ValidatedConfig};
use crate::error::{LabError, LabResult};
use crate::experiments::{self, EstimateReport};
use crate::io::{self, Manifest, OutputDir, RateTables, Versions};
use crate::kingman;

#[derive(Debug, Parser)]
#[command(name = "spcoal", version, about = "Spatial Λ-coalescent rates, simulation and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: SubcommandName,
}

#[derive(Debug, Subcommand)]
pub enum SubcommandName {
    /// λ_{b,k}, λ_b and γ_b tables
    Rates(RunArgs),
    /// Coming-down-from-infinity verdict
    Classify(RunArgs),
    /// Random-walk Green function
    Green(RunArgs),
    /// Trajectories of the coalescent
    Simulate(RunArgs),
    /// Monte Carlo experiments
    Experiment(RunArgs),
}

impl SubcommandName {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            SubcommandName::Rates(a) => ("rates", a),
            SubcommandName::Classify(a) => ("classify", a),
            SubcommandName::Green(a) => ("green", a),
            SubcommandName::Simulate(a) => ("simulate", a),
            SubcommandName::Experiment(a) => ("experiment", a),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u32>,
    /// Output directory for the report, raw tables and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Event budget per simulated replica.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Defaults to csv for rates, jsonl for simulate and json otherwise.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Jsonl,
}

/// What a successful run printed and wrote.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stdout: String,
    /// Output files, relative to the output directory.
    pub files: Vec<String>,
}

/// Parses, validates and runs one command line invocation.
pub fn run(cli: &Cli) -> LabResult<RunOutput> {
    let (name, args) = cli.command.parts();
    let mut config = parse_config(&args.config)?;
    apply_overrides(&mut config, args);
    if config.command.name() != name {
        return Err(LabError::Validation(vec![format!(
            "command: the configuration describes '{}' but '{name}' was requested",
            config.command.name()
        )]));
    }
    let format = args.format.unwrap_or(match config.command {
        Command::Rates(_) => Format::Csv,
        Command::Simulate(_) => Format::Jsonl,
        _ => Format::Json,
    });
    dispatch(config.validate()?, format)
}

pub fn apply_overrides(config: &mut RunConfig, args: &RunArgs) {
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if let Some(r) = args.replicas {
        config.replicas = r;
    }
    if args.out.is_some() {
        config.out.clone_from(&args.out);
    }
    if args.budget.is_some() {
        config.event_budget = args.budget;
    }
}

/// Report envelope: the command result plus what identifies the run.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    result: &'a T,
}

/// Runs a validated configuration and writes its artifacts.
pub fn dispatch(cfg: ValidatedConfig, format: Format) -> LabResult<RunOutput> {
    let started = Instant::now();
    let hash = cfg.config.hash();
    let mut out = match &cfg.config.out {
        Some(dir) => Some(OutputDir::create(dir)?),
        None => None,
    };
    let mut ctx = Context {
        cfg: &cfg,
        hash: &hash,
        out: out.as_mut(),
        format,
    };
    let result = ctx.execute();
    if let Some(dir) = out.as_mut() {
        let status = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => e.kind().to_lowercase(),
        };
        if let Ok(text) = &result {
            if !text.report.is_empty() {
                dir.write_text("report.json", &text.report)?;
            }
        }
        dir.write_manifest(&Manifest {
            command: cfg.config.command.name().to_string(),
            status,
            config_hash: hash.clone(),
            seed: cfg.seed,
            versions: Versions::default(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            files: dir.files().to_vec(),
            config: cfg.config.clone(),
        })?;
    }
    let text = result?;
    Ok(RunOutput {
        stdout: text.stdout,
        files: out.map(|d| d.files().to_vec()).unwrap_or_default(),
    })
}

struct Texts {
    report: String,
    stdout: String,
}

struct Context<'a> {
    cfg: &'a ValidatedConfig,
    hash: &'a str,
    out: Option<&'a mut OutputDir>,
    format: Format,
}

impl<'a> Context<'a> {
    fn kernel(&self) -> &'a RateKernel {
        self.cfg.kernel.as_ref().expect("validated configuration has a kernel")
    }

    fn report<T: Serialize>(&self, result: &T) -> LabResult<String> {
        io::to_json(&Report {
            command: self.cfg.config.command.name(),
            config_hash: self.hash,
            seed: self.cfg.seed,
            result,
        })
    }

    fn json_only(&self) -> LabResult<()> {
        if self.format != Format::Json {
            return Err(LabError::Validation(vec![format!(
                "format: '{}' supports only json",
                self.cfg.config.command.name()
            )]));
        }
        Ok(())
    }

    /// Report text printed as is.
    fn plain<T: Serialize>(&self, result: &T) -> LabResult<Texts> {
        let report = self.report(result)?;
        Ok(Texts {
            stdout: report.clone(),
            report,
        })
    }

    fn execute(&mut self) -> LabResult<Texts> {
        let c = &self.cfg.config;
        match &c.command {
            Command::Rates(p) => self.rates(p.b_max),
            Command::Classify(p) => {
                self.json_only()?;
                let verdict = self.kernel().cdi_classify(p.b_max, &p.classifier)?;
                self.plain(&verdict)
            }
            Command::Green(p) => {
                self.json_only()?;
                let walk = p.walk();
                let est = green_function(&walk, p.method)?;
                let (method, budget) = match p.method {
                    GreenMethod::LatticeSum { steps } => ("lattice_sum", steps as u64),
                    GreenMethod::MonteCarlo { replicas, horizon, .. } => ("monte_carlo", replicas.saturating_mul(horizon)),
                };
                #[derive(Serialize)]
                struct GreenOut {
                    estimate: f64,
                    error: f64,
                    method: &'static str,
                    budget: u64,
                }
                self.plain(&GreenOut {
                    estimate: est.value,
                    error: est.error,
                    method,
                    budget,
                })
            }
            Command::Simulate(_) => self.simulate(),
            Command::Experiment(e) => {
                self.json_only()?;
                self.experiment(e)
            }
        }
    }

    fn rates(&mut self, b_max: u64) -> LabResult<Texts> {
        let tables = RateTables::compute(self.kernel(), b_max)?;
        match self.format {
            Format::Csv => {
                let mut stdout = String::new();
                let mut names = Vec::new();
                for (name, rows) in tables.tables() {
                    let csv = io::rate_rows_csv(rows)?;
                    if !stdout.is_empty() {
                        stdout.push('\n');
                    }
                    stdout.push_str(&csv);
                    let file = format!("{name}.csv");
                    if let Some(dir) = self.out.as_deref_mut() {
                        dir.write_text(&file, &csv)?;
                    }
                    names.push(file);
                }
                #[derive(Serialize)]
                struct RatesOut {
                    b_max: u64,
                    tables: Vec<String>,
                }
                let report = self.report(&RatesOut { b_max, tables: names })?;
                Ok(Texts { report, stdout })
            }
            Format::Json => self.plain(&tables),
            Format::Jsonl => Err(LabError::Validation(vec!["format: 'rates' supports csv or json".into()])),
        }
    }

    fn simulate(&mut self) -> LabResult<Texts> {
        let Command::Simulate(p) = &self.cfg.config.command else {
            unreachable!("called for simulate only")
        };
        let ext = match self.format {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
            Format::Json => return Err(LabError::Validation(vec!["format: 'simulate' supports jsonl or csv".into()])),
        };
        let geo = &self.cfg.geography;
        let initial = p.initial.build(geo.sites())?;
        let kernel = self.kernel();
        let mut sim = SimulationConfig::new(kernel, geo);
        sim.killing = p.killing;
        sim.horizon = p.horizon.unwrap_or(f64::INFINITY);
        sim.stop = p.stop;
        sim.seed = self.cfg.seed;
        sim.event_budget = self.cfg.config.event_budget;
        sim.record = RecordOptions {
            events: if self.format == Format::Jsonl {
                EventRecording::All
            } else {
                EventRecording::None
            },
            counts: true,
            elements: false,
        };
        #[derive(Serialize)]
        struct ReplicaOut {
            replica: u64,
            event_count: u64,
            final_time: f64,
            final_block_count: u32,
            stop_reason: Option<StopReason>,
            trajectory: String,
        }
        let mut replicas = Vec::new();
        let mut stdout = String::new();
        for r in 0..self.cfg.config.replicas as u64 {
            sim.replica = r;
            let (rec, failure) = match simulate(&initial, &sim) {
                Ok(rec) => (rec, None),
                Err(CoreError::BudgetExceeded { budget, partial }) => {
                    let e = CoreError::BudgetExceeded {
                        budget,
                        partial: partial.clone(),
                    };
                    (*partial, Some(e))
                }
                Err(e) => return Err(e.into()),
            };
            let file = format!("trajectory-{r:04}.{ext}");
            let text = self.write_trajectory(&file, &rec, failure.is_none())?;
            if self.out.is_none() {
                stdout.push_str(&text);
            }
            if let Some(e) = failure {
                return Err(e.into());
            }
            replicas.push(ReplicaOut {
                replica: r,
                event_count: rec.event_count,
                final_time: rec.final_time,
                final_block_count: rec.final_block_count,
                stop_reason: Some(rec.stop_reason),
                trajectory: file,
            });
        }
        let report = self.report(&serde_json::json!({ "replicas": replicas }))?;
        if self.out.is_some() {
            stdout = report.clone();
        }
        Ok(Texts { report, stdout })
    }

    /// Writes a trajectory file when there is an output directory and
    /// returns its text otherwise.
    fn write_trajectory(&mut self, file: &str, rec: &TrajectoryRecord, complete: bool) -> LabResult<String> {
        let (hash, format) = (self.hash, self.format);
        let emit = |w: &mut dyn std::io::Write| match format {
            Format::Csv => io::trajectory_csv(w, rec),
            _ => io::trajectory_jsonl(w, hash, rec, complete),
        };
        match self.out.as_deref_mut() {
            Some(dir) => {
                let path = dir.file(file);
                let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| LabError::io(&path, e))?);
                emit(&mut w)?;
                std::io::Write::flush(&mut w).map_err(|e| LabError::io(&path, e))?;
                Ok(String::new())
            }
            None => {
                let mut buf = Vec::new();
                emit(&mut buf)?;
                Ok(String::from_utf8(buf).expect("trajectory text is utf-8"))
            }
        }
    }

    fn table(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<String>>) -> LabResult<Option<String>> {
        match self.out.as_deref_mut() {
            Some(dir) => {
                let path = dir.file(name);
                io::write_table(&path, columns, rows)?;
                Ok(Some(name.to_string()))
            }
            None => Ok(None),
        }
    }

    fn samples_table(&mut self, name: &str, column: &str, xs: &[f64]) -> LabResult<Option<String>> {
        let rows = xs.iter().enumerate().map(|(r, x)| vec![r.to_string(), x.to_string()]).collect();
        self.table(name, &["replica", column], rows)
    }

    fn experiment(&mut self, e: &Experiment) -> LabResult<Texts> {
        let seed = self.cfg.seed;
        let replicas = self.cfg.config.replicas;
        let budget = self.cfg.config.event_budget;
        let geo = &self.cfg.geography;
        match e {
            Experiment::HittingTime { n, k } => {
                let mut rep = experiments::estimate_tnk(*n, *k, geo, self.kernel(), replicas, seed, budget)?;
                rep.hitting_time.config_hash = Some(self.hash.to_string());
                rep.hitting_time.raw_table = self.samples_table("hitting_times.csv", "hitting_time", &rep.samples)?;
                self.plain(&rep)
            }
            Experiment::Absorption { n } => {
                let (mut rep, samples): (EstimateReport, _) =
                    experiments::absorption_time(*n, geo, self.kernel(), replicas, seed, budget)?;
                rep.config_hash = Some(self.hash.to_string());
                rep.raw_table = self.samples_table("absorption_times.csv", "absorption_time", &samples)?;
                self.plain(&rep)
            }
            Experiment::StayInfiniteTrend {
                n_grid,
                t_probes,
                killing,
            } => {
                let rep = experiments::stay_infinite_trend(
                    self.kernel(),
                    geo,
                    n_grid,
                    t_probes,
                    replicas,
                    seed,
                    *killing,
                    budget,
                )?;
                self.plain(&rep)
            }
            Experiment::KingmanEntrance { t, method } => {
                let law = kingman::entrance_law(*t, *method)?;
                #[derive(Serialize)]
                struct EntranceOut<'a> {
                    t: f64,
                    method: &'a kingman::EntranceMethod,
                    mean: f64,
                    law: &'a [f64],
                }
                self.plain(&EntranceOut {
                    t: *t,
                    method,
                    mean: kingman::mean(&law),
                    law: &law,
                })
            }
            Experiment::Pairwise {
                n,
                dim,
                green,
                separation,
                compare_same_site,
            } => {
                let walk = WalkSpec::simple(*dim);
                let g = resolve_green(&walk, *green)?;
                let rep = experiments::pairwise_torus_experiment(
                    *n,
                    &walk,
                    self.kernel(),
                    g,
                    replicas,
                    seed,
                    *separation,
                    *compare_same_site,
                )?;
                self.samples_table("rescaled_times.csv", "rescaled_time", &rep.samples)?;
                self.plain(&rep)
            }
            Experiment::BlockCount {
                n,
                dim,
                green,
                n_per_site,
                times,
                mode,
            } => {
                let walk = WalkSpec::simple(*dim);
                let g = resolve_green(&walk, *green)?;
                let rep = experiments::block_count_limit_experiment(
                    *n,
                    &walk,
                    self.kernel(),
                    g,
                    *n_per_site,
                    times,
                    replicas,
                    seed,
                    *mode,
                    budget,
                )?;
                let mut columns = vec!["replica".to_string(), "collapse".to_string()];
                columns.extend(
                    rep.comparisons
                        .iter()
                        .map(|c| format!("{}_{}", serde_json::to_value(c.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(), c.t)),
                );
                let rows = rep
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(r, c)| std::iter::once(r.to_string()).chain(c.iter().map(u32::to_string)).collect())
                    .collect();
                let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
                self.table("block_counts.csv", &cols, rows)?;
                self.plain(&rep)
            }
            Experiment::PartitionStructure { n, dim, green, blocks } => {
                let walk = WalkSpec::simple(*dim);
                let g = resolve_green(&walk, *green)?;
                let rep = experiments::partition_structure_experiment(
                    *n,
                    &walk,
                    self.kernel(),
                    g,
                    *blocks,
                    replicas,
                    seed,
                    budget,
                )?;
                self.plain(&rep)
            }
            Experiment::ClassCoupling { initial, classes, t } => {
                let start = initial.build(geo.sites())?;
                let rep =
                    experiments::class_coupling_check(geo, self.kernel(), &start, classes, *t, replicas, seed, budget)?;
                self.plain(&rep)
            }
            Experiment::CollapseProfile { dim, n_grid, t_grid } => {
                let walk = WalkSpec::simple(*dim);
                let rep = experiments::collapse_profile(&walk, self.kernel(), n_grid, t_grid, replicas, seed)?;
                self.plain(&rep)
            }
            Experiment::GreenConsensus {
                dim,
                lattice_steps,
                mc_replicas,
                mc_horizon,
            } => {
                let walk = WalkSpec::simple(*dim);
                let rep = experiments::green_consensus(&walk, *lattice_steps, *mc_replicas, *mc_horizon, seed)?;
                self.plain(&rep)
            }
        }
    }
}

fn resolve_green(walk: &WalkSpec, source: GreenSource) -> LabResult<f64> {
    Ok(match source {
        GreenSource::Value(g) => g,
        GreenSource::LatticeSum { steps } => green_function(walk, GreenMethod::LatticeSum { steps })?.value,
    })
}
