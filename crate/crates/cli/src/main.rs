//! `postsel`: run seeded disorder ensembles and fit their finite-size
//! scaling.
//!
//! Failures are reported on stderr as one JSON object
//! `{"error": kind, "message": text}`; invalid specs and malformed inputs
//! exit with status 2, everything else with 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use postsel::analysis::{
    self, DataPoint, DataSeries, FitError, FitOptions, FitResult, ParamSpec, ScalingForm,
};
use postsel::experiment::{self, ExperimentSpec, Record, WORKERS_ENV};
use serde_json::json;

#[derive(Parser)]
#[command(name = "postsel", about = "Post-selected monitored circuits and random tensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write records.csv and aggregate.json.
    Simulate(SpecArgs),
    /// Check a spec without running it.
    Validate(SpecArgs),
    /// Fit simulation outputs.
    Analyze {
        #[command(subcommand)]
        kind: Analysis,
    },
    /// Print the version string.
    Version,
}

#[derive(Args)]
struct SpecArgs {
    /// TOML experiment spec.
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; beats both the spec file and $POSTSEL_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
}

#[derive(Args)]
struct FitArgs {
    /// records.csv from `simulate`, or a points file with columns L,x,y,sigma.
    #[arg(long)]
    input: PathBuf,
    /// Probe to read from a records file.
    #[arg(long)]
    probe: Option<String>,
    /// Control value to read at (required when the records hold several).
    #[arg(long)]
    control: Option<f64>,
    /// Snapshot step; the last recorded step when omitted.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the FitResult JSON (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum FormArg {
    /// y against (x - x_c) L^(1/nu).
    Critical,
    /// y against t / L^z.
    Dynamical,
    /// y L^beta against (t - t0) / L^z, t0 being each size's coupling step.
    Order,
}

#[derive(Subcommand)]
enum Analysis {
    /// Scaling collapse.
    Collapse {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, value_enum, default_value = "critical")]
        form: FormArg,
        /// Parameter bounds as name=lo:hi (repeatable); lo = hi fixes it.
        #[arg(long = "bound", value_parser = parse_bound)]
        bounds: Vec<(String, f64, f64)>,
        #[arg(long, default_value_t = 21)]
        grid: usize,
    },
    /// Effective central charge from free-energy densities.
    Ceff {
        #[command(flatten)]
        fit: FitArgs,
        /// Anisotropy factor in the area v L t.
        #[arg(long, default_value_t = 1.0)]
        v: f64,
        /// L_min values; defaults to one below the smallest size and every
        /// size but the largest two.
        #[arg(long, value_delimiter = ',')]
        lmin: Option<Vec<usize>>,
    },
    /// Anisotropy factor from temporal and spatial ancilla correlations.
    Anisotropy {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        dt1: usize,
        #[arg(long)]
        dt2: usize,
        /// System size to read.
        #[arg(long = "size")]
        size: usize,
    },
    /// Log coefficients of the half-cut entropies and their a/n + b form.
    Alpha {
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Power-law exponent of the antipodal mutual information.
    Power {
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Crossings of consecutive-size curves.
    Crossing {
        #[command(flatten)]
        fit: FitArgs,
    },
}

fn parse_bound(s: &str) -> Result<(String, f64, f64), String> {
    let (name, range) = s.split_once('=').ok_or("expected name=lo:hi")?;
    let (lo, hi) = range.split_once(':').ok_or("expected name=lo:hi")?;
    let lo: f64 = lo.parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("{e}"))?;
    Ok((name.to_string(), lo, hi))
}

/// Errors that mean "your input is wrong" rather than "the run failed".
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result { f.write_str(&self.0) }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error { anyhow::Error::new(Invalid(msg.into())) }

fn load_spec(args: &SpecArgs) -> anyhow::Result<ExperimentSpec> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut spec: ExperimentSpec = toml::from_str(&text).map_err(|e| invalid(format!("spec: {e}")))?;
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        spec.workers = Some(v.trim().parse().map_err(|_| invalid(format!("{WORKERS_ENV} must be a positive integer")))?);
    }
    if let Some(w) = args.workers {
        spec.workers = Some(w);
    }
    if let Some(o) = &args.output {
        spec.output = o.clone();
    }
    if let Some(s) = args.seed {
        spec.base_seed = s;
    }
    if let Some(r) = args.realizations {
        spec.realizations = r;
    }
    if let Some(s) = &args.sizes {
        spec.sizes = s.clone();
    }
    if let Some(s) = &args.sweep {
        spec.sweep = s.clone();
    }
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(spec)
}

fn simulate(args: &SpecArgs) -> anyhow::Result<()> {
    let spec = load_spec(args)?;
    let out = experiment::run_experiment(&spec)?;
    let excluded: usize = out.aggregate.entries.iter().map(|e| e.excluded_count).sum();
    println!(
        "{}",
        json!({
            "records": out.csv_path,
            "aggregate": out.json_path,
            "rows": out.records.len(),
            "excluded": excluded,
        })
    );
    Ok(())
}

fn validate(args: &SpecArgs) -> anyhow::Result<()> {
    let spec = load_spec(args)?;
    println!("{}", json!({ "valid": true, "tasks": spec.task_count() }));
    Ok(())
}

enum Input {
    Records(Vec<Record>),
    Points(DataSeries),
}

fn load_input(path: &Path) -> anyhow::Result<Input> {
    let records = experiment::is_records_file(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if records {
        Ok(Input::Records(experiment::read_records(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?))
    } else {
        Ok(Input::Points(experiment::read_points(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?))
    }
}

/// The single control value of `records` unless one was given.
fn control_value(records: &[Record], given: Option<f64>) -> anyhow::Result<f64> {
    if let Some(c) = given {
        return Ok(c);
    }
    let mut vals: Vec<f64> = records.iter().map(|r| r.control_value).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    match vals.as_slice() {
        [c] => Ok(*c),
        _ => Err(invalid("records hold several control values; pass --control")),
    }
}

fn at_control(series: DataSeries, c: f64) -> DataSeries {
    let points = series.points.into_iter().filter(|p| (p.x - c).abs() <= 1e-12).collect();
    DataSeries { label: series.label, points }
}

fn require_probe(records: &[Record], probe: &str) -> anyhow::Result<()> {
    if records.iter().any(|r| r.probe_name == probe) {
        Ok(())
    } else {
        Err(invalid(format!("no records for probe {probe}")))
    }
}

fn options(fit: &FitArgs) -> FitOptions { FitOptions { resamples: fit.resamples, seed: fit.seed } }

fn fit_error(e: FitError) -> anyhow::Error {
    match e {
        FitError::NoOverlap | FitError::InsufficientData(_) | FitError::InvalidInput(_) => invalid(e.to_string()),
        other => anyhow!(other),
    }
}

fn collapse(fit: &FitArgs, form: FormArg, bounds: &[(String, f64, f64)], grid: usize) -> anyhow::Result<FitResult> {
    let series = match load_input(&fit.input)? {
        Input::Points(s) => s,
        Input::Records(recs) => match form {
            FormArg::Critical => {
                let probe = fit.probe.clone().unwrap_or_else(|| "i3_1".into());
                require_probe(&recs, &probe)?;
                experiment::control_series(&recs, &probe, fit.step)
            }
            FormArg::Dynamical | FormArg::Order => {
                let fallback = if matches!(form, FormArg::Order) { "s_a_bulk" } else { "s_a" };
                let probe = fit.probe.clone().unwrap_or_else(|| fallback.into());
                require_probe(&recs, &probe)?;
                let c = control_value(&recs, fit.control)?;
                let mut s = experiment::time_series(&recs, &probe, c);
                if matches!(form, FormArg::Order) {
                    shift_to_coupling(&mut s);
                }
                s
            }
        },
    };
    let (lo, hi) = series
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let mut form = match form {
        FormArg::Critical => ScalingForm::critical((lo, hi), (0.5, 4.0)),
        FormArg::Dynamical => ScalingForm::dynamical((0.5, 2.0)),
        FormArg::Order => ScalingForm::order_parameter(0.0, (0.5, 2.0), (0.0, 1.0)),
    }
    .with_grid(grid);
    for (name, lo, hi) in bounds {
        let slot = form
            .params
            .iter_mut()
            .find(|p| &p.name == name)
            .ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
        *slot = ParamSpec { grid, ..ParamSpec::new(name, *lo, *hi) };
    }
    analysis::scaling_collapse(&series, &form, options(fit)).map_err(fit_error)
}

/// Measures time from each size's first recorded step.
fn shift_to_coupling(series: &mut DataSeries) {
    let mut first = std::collections::BTreeMap::new();
    for p in &series.points {
        let e = first.entry(p.size).or_insert(p.x);
        *e = f64::min(*e, p.x);
    }
    for p in &mut series.points {
        p.x -= first[&p.size];
    }
}

fn default_lmin(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    if sizes.len() >= 2 {
        let below = sizes[0].saturating_sub(sizes[1] - sizes[0]);
        if below > 0 {
            out.push(below);
        }
    }
    out.extend(sizes.iter().take(sizes.len().saturating_sub(2)));
    out
}

fn ceff(fit: &FitArgs, v: f64, lmin: Option<&[usize]>) -> anyhow::Result<FitResult> {
    let series = match load_input(&fit.input)? {
        Input::Points(s) => s,
        Input::Records(recs) => {
            let probe = fit.probe.clone().unwrap_or_else(|| "log_z".into());
            require_probe(&recs, &probe)?;
            let c = control_value(&recs, fit.control)?;
            // f = -ln Z / (v L t) per realization, so the bootstrap resamples realizations
            let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            for r in recs.iter().filter(|r| r.probe_name == probe && r.control_value == c) {
                if !r.annihilated && r.value.is_finite() {
                    groups.entry(r.L).or_default().push(analysis::free_energy_density(-r.value, v, r.L, r.snapshot_step));
                }
            }
            let points = groups.into_iter().map(|(l, s)| DataPoint::from_samples(l, c, s)).collect();
            DataSeries::new(probe, points)
        }
    };
    let sizes = series.distinct_sizes();
    let sweep = lmin.map(<[usize]>::to_vec).unwrap_or_else(|| default_lmin(&sizes));
    analysis::casimir_fit(&series, &sweep, options(fit)).map_err(fit_error)
}

fn anisotropy(fit: &FitArgs, dt1: usize, dt2: usize, size: usize) -> anyhow::Result<FitResult> {
    let Input::Records(recs) = load_input(&fit.input)? else {
        return Err(invalid("anisotropy needs a records file with i2_spatial and i2_temporal_dt* probes"));
    };
    let curve = |probe: &str| -> anyhow::Result<Vec<DataPoint>> {
        require_probe(&recs, probe)?;
        let s = experiment::control_series(&recs, probe, None);
        Ok(s.points.into_iter().filter(|p| p.size == size).collect())
    };
    let spatial = curve("i2_spatial")?;
    let t1 = curve(&format!("i2_temporal_dt{dt1}"))?;
    let t2 = curve(&format!("i2_temporal_dt{dt2}"))?;
    let c = control_value(&recs, fit.control)?;
    analysis::anisotropy_factor([(dt1 as f64, &t1), (dt2 as f64, &t2)], &spatial, c, size, options(fit)).map_err(fit_error)
}

fn alpha(fit: &FitArgs) -> anyhow::Result<FitResult> {
    let alphas = match load_input(&fit.input)? {
        Input::Points(s) => return analysis::fit_alpha_form(&s, options(fit)).map_err(fit_error),
        Input::Records(recs) => {
            let c = control_value(&recs, fit.control)?;
            let mut probes: Vec<(u32, String)> = recs
                .iter()
                .filter_map(|r| r.probe_name.strip_prefix("s_half_").and_then(|n| n.parse().ok()).map(|n| (n, r.probe_name.clone())))
                .collect();
            probes.sort();
            probes.dedup();
            let mut points = Vec::new();
            for (n, probe) in probes {
                let s = at_control(experiment::control_series(&recs, &probe, fit.step), c);
                let r = analysis::fit_log_coefficient(&s, options(fit)).map_err(fit_error)?;
                points.push(DataPoint::new(0, n as f64, r.param("alpha"), r.error("alpha")));
            }
            DataSeries::new("alpha", points)
        }
    };
    let mut result = analysis::fit_alpha_form(&alphas, options(fit)).map_err(fit_error)?;
    for p in &alphas.points {
        result.diagnostics.extra.insert(format!("alpha_{}", p.x), p.y);
        result.diagnostics.extra.insert(format!("alpha_{}_err", p.x), p.sigma);
    }
    Ok(result)
}

fn records_at_control(fit: &FitArgs, default_probe: &str) -> anyhow::Result<DataSeries> {
    match load_input(&fit.input)? {
        Input::Points(s) => Ok(s),
        Input::Records(recs) => {
            let probe = fit.probe.clone().unwrap_or_else(|| default_probe.into());
            require_probe(&recs, &probe)?;
            let c = control_value(&recs, fit.control)?;
            Ok(at_control(experiment::control_series(&recs, &probe, fit.step), c))
        }
    }
}

fn power(fit: &FitArgs) -> anyhow::Result<FitResult> {
    let s = records_at_control(fit, "i2_spatial")?;
    analysis::power_fit(&s, options(fit)).map_err(fit_error)
}

fn crossing(fit: &FitArgs) -> anyhow::Result<FitResult> {
    let series = match load_input(&fit.input)? {
        Input::Points(s) => s,
        Input::Records(recs) => {
            let probe = fit.probe.clone().unwrap_or_else(|| "i3_1".into());
            require_probe(&recs, &probe)?;
            experiment::control_series(&recs, &probe, fit.step)
        }
    };
    analysis::crossing_fit(&series, options(fit)).map_err(fit_error)
}

fn emit(fit: &FitArgs, mut result: FitResult) -> anyhow::Result<()> {
    result.provenance.push(fit.input.display().to_string());
    let text = serde_json::to_string_pretty(&result)?;
    match &fit.output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            for (name, value) in &result.params {
                println!("{name} = {value} +/- {}", result.errors.get(name).copied().unwrap_or(0.0));
            }
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn analyze(kind: &Analysis) -> anyhow::Result<()> {
    match kind {
        Analysis::Collapse { fit, form, bounds, grid } => emit(fit, collapse(fit, *form, bounds, *grid)?),
        Analysis::Ceff { fit, v, lmin } => {
            if !(*v > 0.0) {
                return Err(invalid("v must be positive"));
            }
            emit(fit, ceff(fit, *v, lmin.as_deref())?)
        }
        Analysis::Anisotropy { fit, dt1, dt2, size } => emit(fit, anisotropy(fit, *dt1, *dt2, *size)?),
        Analysis::Alpha { fit } => emit(fit, alpha(fit)?),
        Analysis::Power { fit } => emit(fit, power(fit)?),
        Analysis::Crossing { fit } => emit(fit, crossing(fit)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Validate(args) => validate(args),
        Command::Analyze { kind } => analyze(kind),
        Command::Version => {
            println!("postsel {}", experiment::VERSION);
            Ok(())
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is::<Invalid>() { ("invalid_input", 2) } else { ("runtime", 1) };
            eprintln!("{}", json!({ "error": kind, "message": format!("{e:#}") }));
            ExitCode::from(code)
        }
    }
}
