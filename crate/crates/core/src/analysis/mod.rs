//! Finite-size analysis: scaling collapse, exponent extraction, Casimir
//! fits and the anisotropy factor.
//!
//! Every fitter returns a [`FitResult`] whose uncertainties come from a
//! seeded bootstrap: when a data point carries its per-realization samples
//! those are resampled; otherwise the point is redrawn from a Gaussian of
//! width `sigma`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{RngStream, StreamClass};

pub mod collapse;
pub mod fits;
pub mod stats;

pub use collapse::{collapse_cost, scaling_collapse, ParamSpec, ScalingForm};
pub use fits::{
    anisotropy_factor, anisotropy_from_t_star, casimir_fit, crossing_fit, find_crossings, fit_alpha_form,
    fit_log_coefficient, free_energy_density, power_fit, Crossing,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no overlap between the scaled data of different system sizes")]
    NoOverlap,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("spatial value {spatial} is not bracketed by the temporal values [{low}, {high}]")]
    Bracketing { spatial: f64, low: f64, high: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("curves of sizes {0} and {1} do not cross")]
    NoCrossing(usize, usize),
}

pub type FitResultOr<T> = Result<T, FitError>;

/// One averaged observation: system size, control value (or time), mean,
/// standard error and optionally the raw per-realization samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub size: usize,
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
}

impl DataPoint {
    pub fn new(size: usize, x: f64, y: f64, sigma: f64) -> Self {
        Self { size, x, y, sigma, samples: None }
    }

    /// Mean and standard error of `samples`, which are kept for the
    /// bootstrap.
    pub fn from_samples(size: usize, x: f64, samples: Vec<f64>) -> Self {
        let (y, sigma) = stats::mean_and_standard_error(&samples);
        Self { size, x, y, sigma, samples: Some(samples) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSeries {
    pub label: String,
    pub points: Vec<DataPoint>,
}

impl DataSeries {
    pub fn new(label: impl Into<String>, points: Vec<DataPoint>) -> Self {
        Self { label: label.into(), points }
    }

    pub fn distinct_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.points.iter().map(|p| p.size).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Points in a canonical order, so results never depend on input order.
    pub fn canonical(&self) -> Vec<DataPoint> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a.size
                .cmp(&b.size)
                .then(a.x.total_cmp(&b.x))
                .then(a.y.total_cmp(&b.y))
                .then(a.sigma.total_cmp(&b.sigma))
        });
        pts
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Per-point residuals of the final fit.
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
    /// Intermediate quantities worth reporting (e.g. `m(L_min)`).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, f64>,
    /// Collapse cost or chi-square per degree of freedom.
    pub quality: f64,
    pub diagnostics: Diagnostics,
    /// Input files the data came from.
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> f64 { self.params[name] }

    pub fn error(&self, name: &str) -> f64 { self.errors[name] }
}

/// Bootstrap settings shared by every fitter.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self { Self { resamples: 200, seed: 0 } }
}

/// Redraws every point once: resampled realizations where available,
/// Gaussian noise of width `sigma` otherwise.
pub(crate) fn resample_points<R: Rng>(points: &[DataPoint], rng: &mut R) -> Vec<DataPoint> {
    points
        .iter()
        .map(|p| match &p.samples {
            Some(s) if !s.is_empty() => {
                let draw: Vec<f64> = (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).collect();
                let (y, sigma) = stats::mean_and_standard_error(&draw);
                // a resample of identical values would have zero spread
                let sigma = if sigma > 0.0 { sigma } else { p.sigma };
                DataPoint { size: p.size, x: p.x, y, sigma, samples: None }
            }
            _ => {
                let z: f64 = rng.sample(StandardNormal);
                DataPoint { size: p.size, x: p.x, y: p.y + p.sigma * z, sigma: p.sigma, samples: None }
            }
        })
        .collect()
}

/// Runs `fit` on `opts.resamples` bootstrap replicas (in parallel, reduced
/// in replica order) and returns the standard deviation of each named
/// parameter. Replicas whose fit fails are skipped.
pub(crate) fn bootstrap_errors<F>(points: &[DataPoint], names: &[&str], opts: FitOptions, fit: F) -> BTreeMap<String, f64>
where
    F: Fn(&[DataPoint]) -> Option<Vec<f64>> + Sync,
{
    let replicas: Vec<Option<Vec<f64>>> = (0..opts.resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(opts.seed, i).rng(StreamClass::Bootstrap);
            fit(&resample_points(points, &mut rng))
        })
        .collect();
    let ok: Vec<Vec<f64>> = replicas.into_iter().flatten().collect();
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = ok.iter().map(|v| v[k]).filter(|x| x.is_finite()).collect();
            let err = if vals.len() >= 2 { stats::sample_std(&vals) } else { 0.0 };
            (name.to_string(), err)
        })
        .collect()
}
