//! Random tensor networks contracted row by row like a brickwork circuit.
//!
//! Every vertex is a four-leg tensor `T` (two legs from the row below, two
//! to the row above). Every vertical edge carries a pair state
//! `|I_e> = sum lambda_{mu nu} |mu, nu>`. Contracting the network bottom-up
//! turns each vertex into the `D^2 x D^2` "gate" `G = T (lambda^T ⊗
//! lambda^T)`, which absorbs the edges entering it from below. The bottom
//! edges meet the product state `|0...0>`, and the open top edges are closed
//! by one `lambda^T` per site when the boundary state is observed.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{brickwork_pairs, Dynamics, Layer, Parity, Protocol};
use crate::error::{ensure, ConfigResult};
use crate::linalg::{self, ComplexMatrix, RngStream, StreamClass};
use crate::probes::Probe;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RtnError {
    #[error("edge state is not normalized: tr(lambda lambda^dagger) = {0}")]
    NotNormalized(f64),

    #[error("chi = {chi} outside [0, {max}] for bond dimension {bond_dim}")]
    ChiOutOfRange { chi: f64, max: f64, bond_dim: usize },
}

/// Pair state on one network edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeState {
    bond_dim: usize,
    lambda: ComplexMatrix,
    chi: f64,
}

impl EdgeState {
    pub fn new(lambda: ComplexMatrix) -> Result<Self, RtnError> {
        let chi = chi_of_lambda(&lambda, 2)?;
        Ok(Self { bond_dim: lambda.nrows(), lambda, chi })
    }

    pub fn bond_dim(&self) -> usize { self.bond_dim }

    pub fn lambda(&self) -> &ComplexMatrix { &self.lambda }

    /// Rényi-2 mutual information of the pair state, in nats.
    pub fn chi(&self) -> f64 { self.chi }

    /// `lambda^T ⊗ lambda^T`, the factor each vertex absorbs on its inputs.
    pub fn input_factor(&self) -> ComplexMatrix {
        let lt = self.lambda.transpose();
        linalg::kron(&lt, &lt)
    }
}

/// Upper end of the chi range, `2 ln D`.
pub fn max_chi(bond_dim: usize) -> f64 { 2.0 * (bond_dim as f64).ln() }

/// `chi^(n) = 2/(1-n) ln tr (lambda lambda^dagger)^n`; `n = 1` is the
/// von Neumann limit `-2 tr(m ln m)`.
pub fn chi_of_lambda(lambda: &ComplexMatrix, n: u32) -> Result<f64, RtnError> {
    let m = lambda * lambda.adjoint();
    let tr = m.trace().re;
    if (tr - 1.0).abs() > 1e-12 {
        return Err(RtnError::NotNormalized(tr));
    }
    let spec = linalg::hermitian_spectrum(m);
    Ok(2.0 * linalg::renyi_of_spectrum(&spec, n))
}

/// Rényi-2 chi of the diagonal family `diag(sqrt q, sqrt((1-q)/(D-1)), ...)`.
fn chi_of_weight(q: f64, bond_dim: usize) -> f64 {
    let rest = if bond_dim > 1 { (1.0 - q).powi(2) / (bond_dim - 1) as f64 } else { 0.0 };
    -2.0 * (q * q + rest).ln()
}

fn diagonal_lambda(q: f64, bond_dim: usize) -> ComplexMatrix {
    let mut l = ComplexMatrix::zeros(bond_dim, bond_dim);
    l[(0, 0)] = C64::new(q.sqrt(), 0.0);
    for k in 1..bond_dim {
        l[(k, k)] = C64::new(((1.0 - q) / (bond_dim - 1) as f64).sqrt(), 0.0);
    }
    l
}

/// Diagonal edge state with the requested Rényi-2 chi. The leading weight
/// `q` runs over `[1/D, 1]`, where chi decreases monotonically, and is found
/// by bisection.
pub fn lambda_for_chi(chi: f64, bond_dim: usize) -> Result<EdgeState, RtnError> {
    let max = max_chi(bond_dim);
    if !(0.0..=max + 1e-12).contains(&chi) {
        return Err(RtnError::ChiOutOfRange { chi, max, bond_dim });
    }
    let q = if chi <= 0.0 {
        1.0
    } else if chi >= max {
        1.0 / bond_dim as f64
    } else {
        let (mut lo, mut hi) = (1.0 / bond_dim as f64, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi_of_weight(mid, bond_dim) > chi {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    EdgeState::new(diagonal_lambda(q, bond_dim))
}

/// Four-leg Gaussian tensor reshaped to `D^2 x D^2`: rows index the two
/// output legs, columns the two input legs (first leg most significant).
pub fn sample_rtn_tensor<R: Rng + ?Sized>(rng: &mut R, bond_dim: usize) -> ComplexMatrix {
    let dd = bond_dim * bond_dim;
    let t = linalg::sample_gaussian_tensor(rng, &[bond_dim, bond_dim, bond_dim, bond_dim]);
    ComplexMatrix::from_row_slice(dd, dd, &t)
}

/// Gate for one vertex: a fresh Gaussian tensor with the two incoming edge
/// states absorbed.
pub fn build_rtn_gate<R: Rng + ?Sized>(rng: &mut R, bond_dim: usize, edge: &EdgeState) -> ComplexMatrix {
    sample_rtn_tensor(rng, bond_dim) * edge.input_factor()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtnMode {
    /// Fresh tensor at every vertex.
    Random,
    /// One tensor repeated over the whole lattice.
    TranslationallyInvariant,
}

/// Ensemble the vertex tensors are drawn from.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorEnsemble {
    #[default]
    Gaussian,
    /// Haar unitaries drawn exactly as the random circuit draws its gates;
    /// with `chi = 2 ln D` this reproduces unitary circuit dynamics.
    HaarSubstitute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtnConfig {
    /// Columns `L`.
    pub sites: usize,
    /// Full steps (two vertex rows each).
    pub steps: usize,
    pub bond_dim: usize,
    pub chi: f64,
    pub stream: RngStream,
    pub mode: RtnMode,
    #[serde(default)]
    pub ensemble: TensorEnsemble,
    pub snapshot_times: Vec<usize>,
    pub probes: Vec<Probe>,
}

impl RtnConfig {
    pub fn edge_state(&self) -> Result<EdgeState, RtnError> { lambda_for_chi(self.chi, self.bond_dim) }
}

impl Dynamics for RtnConfig {
    fn sites(&self) -> usize { self.sites }
    fn local_dim(&self) -> usize { self.bond_dim }
    fn steps(&self) -> usize { self.steps }
    fn stream(&self) -> RngStream { self.stream }
    fn snapshot_times(&self) -> &[usize] { &self.snapshot_times }
    fn probes(&self) -> &[Probe] { &self.probes }

    fn validate(&self) -> ConfigResult<()> {
        let l = self.sites;
        ensure(l >= 2 && l % 2 == 0, || format!("L must be even and at least 2, got {l}"))?;
        ensure(self.steps >= 1, || "need at least one row".into())?;
        ensure(self.bond_dim >= 1, || "bond dimension must be positive".into())?;
        crate::state::check_pure_budget(self.bond_dim, l)?;
        if self.probes.iter().any(|p| matches!(p, Probe::Tripartite { .. })) {
            ensure(l % 4 == 0, || format!("I3 probes need L divisible by 4, got {l}"))?;
        }
        self.edge_state().map(|_| ()).map_err(|e| crate::error::ConfigError::Invalid(e.to_string()))
    }

    fn protocol(&self) -> Box<dyn Protocol> {
        let edge = self.edge_state().expect("validated edge state");
        Box::new(RtnProtocol::new(self.bond_dim, edge, self.mode, self.ensemble, self.stream))
    }
}

/// Layer source for a tensor network.
pub struct RtnProtocol {
    bond_dim: usize,
    input_factor: ComplexMatrix,
    terminal: ComplexMatrix,
    ensemble: TensorEnsemble,
    rng: ChaCha8Rng,
    fixed: Option<Arc<ComplexMatrix>>,
}

impl RtnProtocol {
    pub fn new(bond_dim: usize, edge: EdgeState, mode: RtnMode, ensemble: TensorEnsemble, stream: RngStream) -> Self {
        let class = match ensemble {
            TensorEnsemble::Gaussian => StreamClass::Tensors,
            TensorEnsemble::HaarSubstitute => StreamClass::Gates,
        };
        let mut p = Self {
            bond_dim,
            input_factor: edge.input_factor(),
            terminal: edge.lambda().transpose(),
            ensemble,
            rng: stream.rng(class),
            fixed: None,
        };
        if mode == RtnMode::TranslationallyInvariant {
            p.fixed = Some(Arc::new(p.fresh_gate()));
        }
        p
    }

    fn fresh_gate(&mut self) -> ComplexMatrix {
        let t = match self.ensemble {
            TensorEnsemble::Gaussian => sample_rtn_tensor(&mut self.rng, self.bond_dim),
            TensorEnsemble::HaarSubstitute => {
                linalg::sample_haar_unitary(&mut self.rng, self.bond_dim * self.bond_dim)
            }
        };
        t * &self.input_factor
    }
}

impl Protocol for RtnProtocol {
    fn layer(&mut self, parity: Parity, sites: usize) -> Layer {
        let gates = brickwork_pairs(sites, parity)
            .into_iter()
            .map(|(i, j)| {
                let g = match &self.fixed {
                    Some(g) => g.clone(),
                    None => Arc::new(self.fresh_gate()),
                };
                (i, j, g)
            })
            .collect();
        Layer { gates, renormalize_gates: true, site_actions: Vec::new() }
    }

    fn boundary_operator(&self) -> Option<&ComplexMatrix> { Some(&self.terminal) }
}

/// Contracts a random-mode network.
pub fn run_rtn(cfg: &RtnConfig) -> ConfigResult<crate::circuit::TrajectoryRecord> {
    crate::circuit::run_trajectory(cfg)
}

/// Contracts a translationally-invariant network (forces the mode).
pub fn run_ti_rtn(cfg: &RtnConfig) -> ConfigResult<crate::circuit::TrajectoryRecord> {
    let mut cfg = cfg.clone();
    cfg.mode = RtnMode::TranslationallyInvariant;
    crate::circuit::run_trajectory(&cfg)
}
