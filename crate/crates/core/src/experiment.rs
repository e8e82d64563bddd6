//! Seeded disorder ensembles: spec, parallel execution and CSV/JSON output.
//!
//! Task `(size i, sweep value j, realization r)` uses stream index
//! `(i * n_sweep + j) * realizations + r`, so every number in the CSV is a
//! function of the spec alone. Tasks run on a rayon pool and are collected
//! in task order before anything is written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{DataPoint, DataSeries};
use crate::circuit::{self, Coupling, Dynamics, MeasurementMode, RqcConfig, TiConfig};
use crate::error::{ensure, ConfigError, ConfigResult};
use crate::linalg::RngStream;
use crate::probes::Probe;
use crate::rtn::{RtnConfig, RtnMode, TensorEnsemble};
use crate::state;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "POSTSEL_WORKERS";

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Random circuit; control value is `p`.
    Rqc,
    /// Random tensor network; control value is `chi`.
    Rtn,
    /// Translationally-invariant weak-measurement circuit; control `p_w`.
    TiRqc,
    /// Translationally-invariant tensor network; control `chi`.
    TiRtn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rqc => "rqc",
            ModelKind::Rtn => "rtn",
            ModelKind::TiRqc => "ti_rqc",
            ModelKind::TiRtn => "ti_rtn",
        }
    }
}

/// `t = per_site * L + offset`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepsRule {
    pub per_site: usize,
    #[serde(default)]
    pub offset: usize,
}

impl StepsRule {
    pub fn at(&self, sites: usize) -> usize { self.per_site * sites + self.offset }
}

fn default_steps() -> StepsRule { StepsRule { per_site: 4, offset: 0 } }
fn default_horizon() -> StepsRule { StepsRule { per_site: 2, offset: 0 } }
fn default_local_dim() -> usize { 2 }

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelKind,
    /// Control values: `p`, `chi` or `p_w` depending on the model.
    pub sweep: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Length of the main trajectory; also the ancilla coupling time.
    #[serde(default = "default_steps")]
    pub steps: StepsRule,
    pub realizations: usize,
    pub probes: Vec<Probe>,
    pub base_seed: u64,
    /// Directory receiving `records.csv` and `aggregate.json`.
    pub output: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub mode: MeasurementMode,
    /// Qudit dimension for circuits, bond dimension for tensor networks.
    #[serde(default = "default_local_dim")]
    pub local_dim: usize,
    #[serde(default)]
    pub ensemble: TensorEnsemble,
    /// Steps recorded for snapshot probes; the final step when absent.
    #[serde(default)]
    pub snapshots: Option<Vec<usize>>,
    /// How long ancilla runs continue after the last coupling.
    #[serde(default = "default_horizon")]
    pub horizon: StepsRule,
}

/// One CSV row.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub model: String,
    pub L: usize,
    pub control_value: f64,
    pub realization: usize,
    pub probe_name: String,
    pub snapshot_step: usize,
    pub value: f64,
    /// `ln Z` of the realization's main trajectory (NaN when none ran).
    pub log_Z: f64,
    pub annihilated: bool,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub L: usize,
    pub control_value: f64,
    pub probe_name: String,
    pub snapshot_step: usize,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub excluded_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub base_seed: u64,
    pub version: String,
    pub timestamp_unix: u64,
    pub spec: ExperimentSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metadata: Metadata,
    pub entries: Vec<AggregateEntry>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    pub records: Vec<Record>,
    pub aggregate: Aggregate,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Worker count from the environment, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

impl ExperimentSpec {
    pub fn stream_index(&self, size_idx: usize, sweep_idx: usize, r: usize) -> u64 {
        (((size_idx * self.sweep.len()) + sweep_idx) * self.realizations + r) as u64
    }

    pub fn task_count(&self) -> usize { self.sizes.len() * self.sweep.len() * self.realizations }

    fn snapshot_times(&self, sites: usize) -> Vec<usize> {
        self.snapshots.clone().unwrap_or_else(|| vec![self.steps.at(sites)])
    }

    /// Simulator configuration of one task.
    pub fn dynamics(&self, sites: usize, control: f64, stream: RngStream) -> Box<dyn Dynamics + Send + Sync> {
        let steps = self.steps.at(sites);
        let snapshot_times = self.snapshot_times(sites);
        let probes: Vec<Probe> = self.probes.clone();
        match self.model {
            ModelKind::Rqc => Box::new(RqcConfig {
                sites,
                local_dim: self.local_dim,
                p: control,
                steps,
                mode: self.mode,
                stream,
                snapshot_times,
                probes,
            }),
            ModelKind::TiRqc => Box::new(TiConfig {
                sites,
                local_dim: self.local_dim,
                p_w: control,
                steps,
                gate_stream: stream,
                snapshot_times,
                probes,
            }),
            ModelKind::Rtn | ModelKind::TiRtn => Box::new(RtnConfig {
                sites,
                steps,
                bond_dim: self.local_dim,
                chi: control,
                stream,
                mode: if self.model == ModelKind::Rtn { RtnMode::Random } else { RtnMode::TranslationallyInvariant },
                ensemble: self.ensemble,
                snapshot_times,
                probes,
            }),
        }
    }

    pub fn validate(&self) -> ConfigResult<()> {
        ensure(self.realizations >= 1, || "realizations must be at least 1".into())?;
        ensure(!self.sizes.is_empty(), || "sizes must be nonempty".into())?;
        ensure(!self.sweep.is_empty(), || "sweep must be nonempty".into())?;
        ensure(!self.probes.is_empty(), || "at least one probe is required".into())?;
        ensure(self.workers != Some(0), || "workers must be at least 1".into())?;
        ensure(self.sweep.iter().all(|v| v.is_finite()), || "sweep values must be finite".into())?;
        let mut sizes = self.sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        ensure(sizes.len() == self.sizes.len(), || "sizes must be distinct".into())?;
        if self.mode == MeasurementMode::Born {
            ensure(self.model == ModelKind::Rqc, || "born mode applies to the rqc model only".into())?;
        }
        ensure(self.sizes.len().checked_mul(self.sweep.len()).and_then(|n| n.checked_mul(self.realizations)).is_some(), || {
            "too many tasks".into()
        })?;

        for &l in &self.sizes {
            let steps = self.steps.at(l);
            if let Some(times) = &self.snapshots {
                ensure(times.iter().all(|&t| t <= steps), || format!("snapshot beyond the final step {steps} at L={l}"))?;
            }
            for &c in &self.sweep {
                self.dynamics(l, c, RngStream::new(self.base_seed, 0)).validate()?;
            }
            let d = self.local_dim;
            for p in &self.probes {
                match p {
                    Probe::Purification => {
                        ensure(matches!(self.model, ModelKind::Rqc | ModelKind::TiRqc), || {
                            "s_a is defined for circuit models".into()
                        })?;
                        state::check_density_budget(d, l)?;
                    }
                    Probe::OrderParameter => state::check_pure_budget(d, l + 2)?,
                    Probe::SpatialI2 | Probe::TemporalI2 { .. } => state::check_pure_budget(d, l + 4)?,
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

struct TaskKey {
    sites: usize,
    control: f64,
    realization: usize,
    stream: RngStream,
}

fn nan_series(steps: impl Iterator<Item = usize>, points: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let have: BTreeMap<usize, f64> = points.iter().cloned().collect();
    steps.map(|t| (t, have.get(&t).cloned().unwrap_or(f64::NAN))).collect()
}

fn run_task(spec: &ExperimentSpec, key: &TaskKey) -> ConfigResult<Vec<Record>> {
    let l = key.sites;
    let cfg = spec.dynamics(l, key.control, key.stream);
    let t_main = spec.steps.at(l);
    let horizon = spec.horizon.at(l);
    let row = |probe: String, step: usize, value: f64, log_z: f64, annihilated: bool| Record {
        model: spec.model.name().to_string(),
        L: l,
        control_value: key.control,
        realization: key.realization,
        probe_name: probe,
        snapshot_step: step,
        value,
        log_Z: log_z,
        annihilated,
    };
    let mut rows = Vec::new();

    let needs_main = spec.probes.iter().any(|p| p.is_snapshot_probe() || *p == Probe::LogZ);
    let mut log_z = f64::NAN;
    if needs_main {
        let rec = circuit::run_trajectory(cfg.as_ref())?;
        log_z = rec.log_z;
        for p in &spec.probes {
            let name = p.to_string();
            if *p == Probe::LogZ {
                rows.push(row(name, t_main, rec.log_z, rec.log_z, rec.annihilated));
            } else if p.is_snapshot_probe() {
                for &t in cfg.snapshot_times() {
                    let v = rec.snapshots.get(&t).and_then(|b| b.get(&name)).cloned().unwrap_or(f64::NAN);
                    rows.push(row(name.clone(), t, v, rec.log_z, rec.annihilated));
                }
            }
        }
    }

    for p in &spec.probes {
        let name = p.to_string();
        let (series, steps): (circuit::Series, Vec<usize>) = match *p {
            Probe::Purification => {
                let mut every = spec.clone();
                every.snapshots = Some(Vec::new());
                let cfg = every.dynamics(l, key.control, key.stream);
                (circuit::purification_run(cfg.as_ref())?, (0..=t_main).collect())
            }
            Probe::OrderParameter => {
                let mut longer = spec.clone();
                longer.steps = StepsRule { per_site: spec.steps.per_site + spec.horizon.per_site, offset: spec.steps.offset + spec.horizon.offset };
                let cfg = longer.dynamics(l, key.control, key.stream);
                (circuit::order_parameter_run(cfg.as_ref(), t_main, 0)?, (t_main..=t_main + horizon).collect())
            }
            Probe::SpatialI2 => {
                let r = circuit::two_ancilla_run(cfg.as_ref(), t_main, Coupling::Spatial { r: 0, r2: l / 2 }, Some(horizon))?;
                (r.series, (t_main..=t_main + horizon).collect())
            }
            Probe::TemporalI2 { dt } => {
                let r = circuit::two_ancilla_run(cfg.as_ref(), t_main, Coupling::Temporal { r: 0, dt }, Some(horizon))?;
                (r.series, (t_main + dt..=t_main + dt + horizon).collect())
            }
            _ => continue,
        };
        for (t, v) in nan_series(steps.into_iter(), &series.points) {
            rows.push(row(name.clone(), t, v, log_z, series.annihilated));
        }
    }
    Ok(rows)
}

/// Per-(L, control, probe, step) means over non-annihilated finite values,
/// in order of first appearance.
pub fn aggregate(records: &[Record]) -> Vec<AggregateEntry> {
    type Key = (usize, u64, String, usize);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let key = (r.L, r.control_value.to_bits(), r.probe_name.clone(), r.snapshot_step);
        let g = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0)
        });
        if r.annihilated || !r.value.is_finite() {
            g.1 += 1;
        } else {
            g.0.push(r.value);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (vals, excluded) = &groups[&key];
            let (mean, stderr) = crate::analysis::stats::mean_and_standard_error(vals);
            AggregateEntry {
                L: key.0,
                control_value: f64::from_bits(key.1),
                probe_name: key.2,
                snapshot_step: key.3,
                mean,
                stderr,
                count: vals.len(),
                excluded_count: *excluded,
            }
        })
        .collect()
}

/// Runs every task without writing anything.
pub fn simulate(spec: &ExperimentSpec) -> Result<Vec<Record>, ExperimentError> {
    spec.validate()?;
    let mut keys = Vec::with_capacity(spec.task_count());
    for (i, &l) in spec.sizes.iter().enumerate() {
        for (j, &c) in spec.sweep.iter().enumerate() {
            for r in 0..spec.realizations {
                keys.push(TaskKey {
                    sites: l,
                    control: c,
                    realization: r,
                    stream: RngStream::new(spec.base_seed, spec.stream_index(i, j, r)),
                });
            }
        }
    }
    let workers = spec.workers.unwrap_or_else(default_workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let per_task: Vec<ConfigResult<Vec<Record>>> = pool.install(|| keys.par_iter().map(|k| run_task(spec, k)).collect());
    let mut records = Vec::new();
    for rows in per_task {
        records.extend(rows?);
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, ExperimentError> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<Result<Vec<Record>, _>>()?)
}

/// Runs the experiment and writes `records.csv` and `aggregate.json` into
/// `spec.output`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let records = simulate(spec)?;
    fs::create_dir_all(&spec.output)?;
    let csv_path = spec.output.join("records.csv");
    let json_path = spec.output.join("aggregate.json");
    write_records(&csv_path, &records)?;
    let timestamp_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let aggregate = Aggregate {
        metadata: Metadata { base_seed: spec.base_seed, version: VERSION.to_string(), timestamp_unix, spec: spec.clone() },
        entries: aggregate(&records),
    };
    fs::write(&json_path, serde_json::to_string_pretty(&aggregate)?)?;
    Ok(ExperimentOutput { csv_path, json_path, records, aggregate })
}

/// Row of a pre-averaged points file (`L,x,y,sigma`).
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub L: usize,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

pub fn read_points(path: &Path) -> Result<DataSeries, ExperimentError> {
    let mut rd = csv::Reader::from_path(path)?;
    let points = rd
        .deserialize::<PointRow>()
        .map(|r| r.map(|r| DataPoint::new(r.L, r.x, r.y, r.sigma)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DataSeries::new(path.display().to_string(), points))
}

/// Whether `path` holds per-realization records (rather than points).
pub fn is_records_file(path: &Path) -> Result<bool, ExperimentError> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.headers()?.iter().any(|h| h == "probe_name"))
}

fn usable(r: &Record) -> bool { !r.annihilated && r.value.is_finite() }

fn grouped_points(
    records: &[Record],
    keep: impl Fn(&Record) -> bool,
    key: impl Fn(&Record) -> (usize, f64),
) -> Vec<DataPoint> {
    let mut groups: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| keep(r) && usable(r)) {
        let (l, x) = key(r);
        groups.entry((l, x.to_bits())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((l, x), v)| DataPoint::from_samples(l, f64::from_bits(x), v))
        .collect()
}

/// Probe values against the control parameter, at `step` (the last
/// recorded step of each size when `None`). Samples are kept.
pub fn control_series(records: &[Record], probe: &str, step: Option<usize>) -> DataSeries {
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.probe_name == probe) {
        let e = last.entry(r.L).or_insert(r.snapshot_step);
        *e = (*e).max(r.snapshot_step);
    }
    let points = grouped_points(
        records,
        |r| r.probe_name == probe && r.snapshot_step == step.unwrap_or_else(|| last[&r.L]),
        |r| (r.L, r.control_value),
    );
    DataSeries::new(probe, points)
}

/// Probe values against the step at one control value.
pub fn time_series(records: &[Record], probe: &str, control: f64) -> DataSeries {
    let points = grouped_points(
        records,
        |r| r.probe_name == probe && r.control_value == control,
        |r| (r.L, r.snapshot_step as f64),
    );
    DataSeries::new(probe, points)
}
