//! Output files: reports, trajectories, raw tables and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spatial_coalescent::engine::{Event, StopReason, TrajectoryRecord};
use spatial_coalescent::{LabeledPartition, RateKernel};

use crate::config::RunConfig;
use crate::error::{LabError, LabResult};

/// Version of the output file layout.
pub const FORMAT_VERSION: u32 = 1;

fn create(path: &Path) -> LabResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| LabError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> LabResult<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> LabResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> LabResult<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| LabError::io(path, e))
}

/// First line of a JSONL trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub config_hash: String,
    pub seed: u64,
    pub replica: u64,
    pub initial: LabeledPartition,
}

/// Last line of a JSONL trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFooter {
    pub event_count: u64,
    pub final_time: f64,
    pub final_block_count: u32,
    /// `None` when the run was cut short by the event budget.
    pub stop_reason: Option<StopReason>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "record")]
enum Line {
    Header(TrajectoryHeader),
    Event(Event),
    End(TrajectoryFooter),
}

/// Writes a trajectory as JSON lines: header, one line per event, footer.
/// `complete` is false for a run cut short by its event budget.
pub fn trajectory_jsonl<W: Write>(mut w: W, config_hash: &str, rec: &TrajectoryRecord, complete: bool) -> LabResult<()> {
    let mut line = |l: &Line| -> LabResult<()> {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| LabError::io("<trajectory>", e))
    };
    line(&Line::Header(TrajectoryHeader {
        config_hash: config_hash.to_string(),
        seed: rec.seed,
        replica: rec.replica,
        initial: rec.initial.clone(),
    }))?;
    for e in &rec.events {
        line(&Line::Event(e.clone()))?;
    }
    line(&Line::End(TrajectoryFooter {
        event_count: rec.event_count,
        final_time: rec.final_time,
        final_block_count: rec.final_block_count,
        stop_reason: complete.then_some(rec.stop_reason),
    }))
}

pub fn write_trajectory_jsonl(path: &Path, config_hash: &str, rec: &TrajectoryRecord, complete: bool) -> LabResult<()> {
    let mut w = create(path)?;
    trajectory_jsonl(&mut w, config_hash, rec, complete)?;
    finish(path, w)
}

/// A trajectory read back from JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub header: TrajectoryHeader,
    pub events: Vec<Event>,
    pub footer: TrajectoryFooter,
}

pub fn read_trajectory_jsonl(path: &Path) -> LabResult<TrajectoryFile> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut header = None;
    let mut footer = None;
    let mut events = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let parsed: Line = serde_json::from_str(l).map_err(|e| LabError::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        match parsed {
            Line::Header(h) => header = Some(h),
            Line::Event(e) => events.push(e),
            Line::End(f) => footer = Some(f),
        }
    }
    match (header, footer) {
        (Some(header), Some(footer)) => Ok(TrajectoryFile { header, events, footer }),
        _ => Err(LabError::Invalid(format!("{} lacks a header or end record", path.display()))),
    }
}

/// Compact trajectory: `(time, blocks)` after every count change.
pub fn trajectory_csv<W: Write>(w: W, rec: &TrajectoryRecord) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["time", "blocks"])?;
    for &(t, b) in &rec.counts {
        w.write_record([t.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| LabError::io("<trajectory>", e))
}

pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> LabResult<()> {
    let mut w = create(path)?;
    trajectory_csv(&mut w, rec)?;
    finish(path, w)
}

/// One row of a rates table; `k` is empty for the totals λ_b and γ_b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub b: u64,
    pub k: Option<u64>,
    pub value: f64,
    pub quadrature_error: f64,
}

/// The three rate tables for `b = 2..=b_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTables {
    pub lambda_bk: Vec<RateRow>,
    pub lambda_b: Vec<RateRow>,
    pub gamma_b: Vec<RateRow>,
}

impl RateTables {
    pub fn compute(kernel: &RateKernel, b_max: u64) -> LabResult<Self> {
        let mut t = RateTables {
            lambda_bk: Vec::new(),
            lambda_b: Vec::new(),
            gamma_b: Vec::new(),
        };
        let row = |b, k, e: spatial_coalescent::Estimate| RateRow {
            b,
            k,
            value: e.value,
            quadrature_error: e.error,
        };
        for b in 2..=b_max {
            for k in 2..=b {
                t.lambda_bk.push(row(b, Some(k), kernel.lambda_bk(b, k)?));
            }
            t.lambda_b.push(row(b, None, kernel.lambda_total_estimate(b)?));
            t.gamma_b.push(row(b, None, kernel.gamma_total_estimate(b)?));
        }
        Ok(t)
    }

    pub fn tables(&self) -> [(&'static str, &[RateRow]); 3] {
        [
            ("lambda_bk", &self.lambda_bk),
            ("lambda_b", &self.lambda_b),
            ("gamma_b", &self.gamma_b),
        ]
    }
}

/// CSV with columns `b, k, value, quadrature_error`.
pub fn rate_rows_csv(rows: &[RateRow]) -> LabResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Single-column or multi-column table of per-replica outcomes.
pub fn write_table(path: &Path, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    /// Output files relative to the output directory, including the report.
    pub files: Vec<String>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub spcoal: String,
    pub config: u32,
    pub format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            spcoal: env!("CARGO_PKG_VERSION").to_string(),
            config: crate::config::CONFIG_VERSION,
            format: FORMAT_VERSION,
        }
    }
}

/// Collects the files of one run and writes the manifest last.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> LabResult<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| LabError::io(&root, e))?;
        Ok(Self { root, files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `name` and returns its full path.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> LabResult<()> {
        let path = self.file(name);
        std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> LabResult<()> {
        write_json(&self.root.join("manifest.json"), manifest)
    }
}

pub fn read_manifest(path: &Path) -> LabResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use spatial_coalescent::engine::{simulate, SimulationConfig};
    use spatial_coalescent::{GeographySpec, LambdaMeasure};

    #[test]
    fn jsonl_round_trip() {
        let kernel = RateKernel::new(LambdaMeasure::lebesgue(), 20).unwrap();
        let geo = GeographySpec::complete_graph(3).unwrap();
        let mut cfg = SimulationConfig::new(&kernel, &geo);
        cfg.seed = 3;
        let rec = simulate(&LabeledPartition::singletons_per_site(&[2, 2, 2]), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trajectory_jsonl(&path, "abc", &rec, true).unwrap();
        let back = read_trajectory_jsonl(&path).unwrap();
        assert_eq!(back.events, rec.events);
        assert_eq!(back.header.initial, rec.initial);
        assert_eq!(back.footer.final_block_count, 1);
        assert_eq!(back.footer.stop_reason, Some(StopReason::StopRule));
    }

    #[test]
    fn rates_csv_layout() {
        let kernel = RateKernel::new(LambdaMeasure::kingman(1.0).unwrap(), 10).unwrap();
        let t = RateTables::compute(&kernel, 3).unwrap();
        let csv = rate_rows_csv(&t.lambda_bk).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("b,k,value,quadrature_error"));
        assert!(lines.next().unwrap().starts_with("2,2,1"));
        assert_eq!(csv.lines().count(), 1 + 3);
        // Kingman: γ_b = C(b,2)
        let gamma = rate_rows_csv(&t.gamma_b).unwrap();
        let last: Vec<&str> = gamma.lines().last().unwrap().split(',').collect();
        assert_eq!(&last[..2], &["3", ""]);
        assert!((last[2].parse::<f64>().unwrap() - 3.0).abs() < 1e-12);
    }
}
