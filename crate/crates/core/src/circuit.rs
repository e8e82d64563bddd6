//! Brickwork dynamics: the post-selected random circuit, its Born-rule
//! counterpart, the translationally-invariant weak-measurement circuit, and
//! the ancilla protocols that run on top of any of them.
//!
//! A model is described by a [`Protocol`], which hands out one [`Layer`]
//! (gates, then a single-site sweep) per half-step. The protocol never sees
//! the state, so measurement locations are a classical random field fixed
//! by the [`RngStream`]. A [`Trajectory`] applies layers to a [`Register`],
//! books normalization factors, and samples Born outcomes when asked to.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ConfigResult};
use crate::linalg::{self, ComplexMatrix, RngStream, StreamClass};
use crate::probes::{self, Probe};
use crate::state::{self, DensityState, PureState, Region, Register, StateError, StateResult};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// Site pairs gated in one brickwork half-layer with periodic boundaries.
/// The odd layer includes the wrap pair `(L-1, 0)`.
pub fn brickwork_pairs(sites: usize, parity: Parity) -> Vec<(usize, usize)> {
    let start = match parity {
        Parity::Even => 0,
        Parity::Odd => 1,
    };
    (0..sites / 2).map(|k| {
        let i = start + 2 * k;
        (i % sites, (i + 1) % sites)
    })
    .collect()
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Post-select outcome `0` wherever a measurement happens.
    #[default]
    Forced,
    /// Sample outcomes with Born probabilities.
    Born,
}

/// What happens to one site during the sweep after a gate layer.
#[derive(Clone, Debug)]
pub enum SiteAction {
    /// Apply a fixed Kraus operator, renormalize and book `ln(norm^2)`.
    Kraus(Arc<ComplexMatrix>),
    /// Computational-basis measurement with a Born-sampled outcome.
    Born,
}

/// One half-step: gates on disjoint pairs, then single-site actions.
#[derive(Clone, Debug, Default)]
pub struct Layer {
    pub gates: Vec<(usize, usize, Arc<ComplexMatrix>)>,
    /// Renormalize (and book) after every gate; for non-unitary gates.
    pub renormalize_gates: bool,
    pub site_actions: Vec<(usize, SiteAction)>,
}

/// Source of layers for one disorder realization.
pub trait Protocol: Send {
    fn layer(&mut self, parity: Parity, sites: usize) -> Layer;

    /// Single-site operator applied to every system site before a state is
    /// observed (closes the open top edges of a tensor network).
    fn boundary_operator(&self) -> Option<&ComplexMatrix> { None }
}

/// Fresh Haar gates plus a Bernoulli(`p`) measurement field.
pub struct RqcProtocol {
    local_dim: usize,
    p: f64,
    mode: MeasurementMode,
    gates: ChaCha8Rng,
    pattern: ChaCha8Rng,
    projector: Arc<ComplexMatrix>,
}

impl RqcProtocol {
    pub fn new(local_dim: usize, p: f64, mode: MeasurementMode, stream: RngStream) -> Self {
        Self {
            local_dim,
            p,
            mode,
            gates: stream.rng(StreamClass::Gates),
            pattern: stream.rng(StreamClass::MeasurementPattern),
            projector: Arc::new(linalg::projector(local_dim, 0)),
        }
    }

    /// Draws the measurement locations of one sweep. Exposed so tests can
    /// replay the pattern independently of any state.
    pub fn draw_pattern(pattern: &mut ChaCha8Rng, p: f64, sites: usize) -> Vec<usize> {
        (0..sites).filter(|_| pattern.random::<f64>() < p).collect()
    }
}

impl Protocol for RqcProtocol {
    fn layer(&mut self, parity: Parity, sites: usize) -> Layer {
        let dd = self.local_dim * self.local_dim;
        let gates = brickwork_pairs(sites, parity)
            .into_iter()
            .map(|(i, j)| (i, j, Arc::new(linalg::sample_haar_unitary(&mut self.gates, dd))))
            .collect();
        let action = match self.mode {
            MeasurementMode::Forced => SiteAction::Kraus(self.projector.clone()),
            MeasurementMode::Born => SiteAction::Born,
        };
        let site_actions = Self::draw_pattern(&mut self.pattern, self.p, sites)
            .into_iter()
            .map(|s| (s, action.clone()))
            .collect();
        Layer { gates, renormalize_gates: false, site_actions }
    }
}

/// Weak-measurement Kraus operator `|0><0| + sqrt(1 - p_w) sum_{k>=1} |k><k|`.
pub fn weak_measurement_kraus(local_dim: usize, p_w: f64) -> ComplexMatrix {
    let mut k = ComplexMatrix::zeros(local_dim, local_dim);
    k[(0, 0)] = C64::new(1.0, 0.0);
    for i in 1..local_dim {
        k[(i, i)] = C64::new((1.0 - p_w).sqrt(), 0.0);
    }
    k
}

/// One Haar gate drawn once, repeated everywhere, with a post-selected weak
/// measurement on every site after every half-layer.
pub struct TiProtocol {
    gate: Arc<ComplexMatrix>,
    kraus: Option<Arc<ComplexMatrix>>,
}

impl TiProtocol {
    pub fn new(local_dim: usize, p_w: f64, gate_stream: RngStream) -> Self {
        let gate = linalg::sample_haar_unitary(&mut gate_stream.rng(StreamClass::Gates), local_dim * local_dim);
        let kraus = (p_w > 0.0).then(|| Arc::new(weak_measurement_kraus(local_dim, p_w)));
        Self { gate: Arc::new(gate), kraus }
    }

    pub fn gate(&self) -> &ComplexMatrix { &self.gate }
}

impl Protocol for TiProtocol {
    fn layer(&mut self, parity: Parity, sites: usize) -> Layer {
        let gates = brickwork_pairs(sites, parity)
            .into_iter()
            .map(|(i, j)| (i, j, self.gate.clone()))
            .collect();
        let site_actions = match &self.kraus {
            Some(k) => (0..sites).map(|s| (s, SiteAction::Kraus(k.clone()))).collect(),
            None => Vec::new(),
        };
        Layer { gates, renormalize_gates: false, site_actions }
    }
}

// ---------------------------------------------------------------------------
// trajectory engine

/// A register evolving under a protocol.
///
/// The first `system_sites` sites are gated and measured; any further sites
/// (ancillas and displaced qudits) are only spectators.
pub struct Trajectory<R: Register> {
    state: R,
    system_sites: usize,
    protocol: Box<dyn Protocol>,
    outcomes: ChaCha8Rng,
    born_log_prob: f64,
    step: usize,
}

impl<R: Register> Trajectory<R> {
    pub fn new(state: R, system_sites: usize, protocol: Box<dyn Protocol>, stream: RngStream) -> Self {
        Self {
            state,
            system_sites,
            protocol,
            outcomes: stream.rng(StreamClass::BornOutcomes),
            born_log_prob: 0.0,
            step: 0,
        }
    }

    pub fn state(&self) -> &R { &self.state }

    pub fn state_mut(&mut self) -> &mut R { &mut self.state }

    /// Completed full steps.
    pub fn step_count(&self) -> usize { self.step }

    /// `sum ln p_outcome` over Born measurements so far.
    pub fn born_log_prob(&self) -> f64 { self.born_log_prob }

    pub fn replace_state(&mut self, state: R) { self.state = state; }

    pub fn half_step(&mut self, parity: Parity) -> StateResult<()> {
        let layer = self.protocol.layer(parity, self.system_sites);
        apply_layer(&mut self.state, &layer, &mut self.outcomes, &mut self.born_log_prob)
    }

    /// Even half-layer then odd half-layer.
    pub fn step(&mut self) -> StateResult<()> {
        self.half_step(Parity::Even)?;
        self.half_step(Parity::Odd)?;
        self.step += 1;
        Ok(())
    }

    /// The state as it should be observed: a copy with the protocol's
    /// boundary operator applied to every system site.
    pub fn observed(&self) -> StateResult<R> {
        let mut s = self.state.clone();
        if let Some(op) = self.protocol.boundary_operator() {
            for site in 0..self.system_sites {
                s.apply_site_kraus(site, op)?;
            }
        }
        Ok(s)
    }
}

/// Applies one layer. Born outcomes are drawn from `outcomes`; their log
/// probabilities accumulate into `born_log_prob`.
pub fn apply_layer<R: Register>(
    state: &mut R,
    layer: &Layer,
    outcomes: &mut ChaCha8Rng,
    born_log_prob: &mut f64,
) -> StateResult<()> {
    for (i, j, g) in &layer.gates {
        state.apply_two_site_gate(*i, *j, g)?;
        if layer.renormalize_gates {
            state.renormalize()?;
        }
    }
    for (site, action) in &layer.site_actions {
        match action {
            SiteAction::Kraus(k) => state.apply_site_kraus(*site, k)?,
            SiteAction::Born => {
                let probs = state.outcome_probabilities(*site)?;
                let u: f64 = outcomes.random();
                let mut acc = 0.0;
                let mut k = probs.len() - 1;
                for (idx, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = idx;
                        break;
                    }
                }
                // never pick an outcome that carries no weight
                while probs[k] <= 0.0 && k > 0 {
                    k -= 1;
                }
                let p = state.project_outcome(*site, k)?;
                *born_log_prob += p.ln();
            }
        }
    }
    Ok(())
}

/// One post-selected (or Born) random-circuit half-step with explicit
/// generators: fresh Haar gates on the parity's pairs, then a Bernoulli(`p`)
/// measurement sweep. Returns the Born log-probability accrued.
#[allow(clippy::too_many_arguments)]
pub fn rqc_half_step<R: Register>(
    state: &mut R,
    parity: Parity,
    gate_rng: &mut ChaCha8Rng,
    pattern_rng: &mut ChaCha8Rng,
    outcome_rng: &mut ChaCha8Rng,
    p: f64,
    mode: MeasurementMode,
    system_sites: usize,
) -> StateResult<f64> {
    let d = state.local_dim();
    let gates = brickwork_pairs(system_sites, parity)
        .into_iter()
        .map(|(i, j)| (i, j, Arc::new(linalg::sample_haar_unitary(gate_rng, d * d))))
        .collect();
    let action = match mode {
        MeasurementMode::Forced => SiteAction::Kraus(Arc::new(linalg::projector(d, 0))),
        MeasurementMode::Born => SiteAction::Born,
    };
    let site_actions = RqcProtocol::draw_pattern(pattern_rng, p, system_sites)
        .into_iter()
        .map(|s| (s, action.clone()))
        .collect();
    let mut lp = 0.0;
    apply_layer(state, &Layer { gates, renormalize_gates: false, site_actions }, outcome_rng, &mut lp)?;
    Ok(lp)
}

// ---------------------------------------------------------------------------
// configurations

/// Anything that can be simulated: geometry, seeds and a protocol factory.
pub trait Dynamics {
    fn sites(&self) -> usize;
    fn local_dim(&self) -> usize;
    fn steps(&self) -> usize;
    fn stream(&self) -> RngStream;
    fn snapshot_times(&self) -> &[usize];
    fn probes(&self) -> &[Probe];
    fn validate(&self) -> ConfigResult<()>;
    fn protocol(&self) -> Box<dyn Protocol>;
}

fn validate_common(cfg: &dyn Dynamics) -> ConfigResult<()> {
    let l = cfg.sites();
    ensure(l >= 2 && l % 2 == 0, || format!("L must be even and at least 2, got {l}"))?;
    ensure(cfg.local_dim() >= 1, || "local dimension must be positive".into())?;
    ensure(cfg.steps() >= 1, || "need at least one step".into())?;
    state::check_pure_budget(cfg.local_dim(), l)?;
    for p in cfg.probes() {
        if matches!(p, Probe::Tripartite { .. }) {
            ensure(l % 4 == 0, || format!("I3 probes need L divisible by 4, got {l}"))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqcConfig {
    pub sites: usize,
    pub local_dim: usize,
    /// Measurement rate.
    pub p: f64,
    pub steps: usize,
    pub mode: MeasurementMode,
    pub stream: RngStream,
    pub snapshot_times: Vec<usize>,
    pub probes: Vec<Probe>,
}

impl Dynamics for RqcConfig {
    fn sites(&self) -> usize { self.sites }
    fn local_dim(&self) -> usize { self.local_dim }
    fn steps(&self) -> usize { self.steps }
    fn stream(&self) -> RngStream { self.stream }
    fn snapshot_times(&self) -> &[usize] { &self.snapshot_times }
    fn probes(&self) -> &[Probe] { &self.probes }

    fn validate(&self) -> ConfigResult<()> {
        validate_common(self)?;
        ensure((0.0..=1.0).contains(&self.p), || format!("p = {} outside [0, 1]", self.p))
    }

    fn protocol(&self) -> Box<dyn Protocol> {
        Box::new(RqcProtocol::new(self.local_dim, self.p, self.mode, self.stream))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiConfig {
    pub sites: usize,
    pub local_dim: usize,
    /// Weak-measurement strength.
    pub p_w: f64,
    pub steps: usize,
    /// Stream from which the single repeated gate is drawn.
    pub gate_stream: RngStream,
    pub snapshot_times: Vec<usize>,
    pub probes: Vec<Probe>,
}

impl Dynamics for TiConfig {
    fn sites(&self) -> usize { self.sites }
    fn local_dim(&self) -> usize { self.local_dim }
    fn steps(&self) -> usize { self.steps }
    fn stream(&self) -> RngStream { self.gate_stream }
    fn snapshot_times(&self) -> &[usize] { &self.snapshot_times }
    fn probes(&self) -> &[Probe] { &self.probes }

    fn validate(&self) -> ConfigResult<()> {
        validate_common(self)?;
        ensure(matches!(self.local_dim, 2 | 3), || "TI circuits use qubits or qutrits".into())?;
        ensure((0.0..=1.0).contains(&self.p_w), || format!("p_w = {} outside [0, 1]", self.p_w))
    }

    fn protocol(&self) -> Box<dyn Protocol> {
        Box::new(TiProtocol::new(self.local_dim, self.p_w, self.gate_stream))
    }
}

// ---------------------------------------------------------------------------
// records and runners

/// Observables at one snapshot, keyed by probe name.
pub type ObservableBundle = BTreeMap<String, f64>;

/// Outputs of one disorder realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub stream: RngStream,
    /// `ln Z` of the final unnormalized state (`-inf` when annihilated).
    pub log_z: f64,
    pub annihilated: bool,
    /// Snapshots keyed by completed step.
    pub snapshots: BTreeMap<usize, ObservableBundle>,
    /// `sum ln p_outcome`; zero outside Born mode.
    pub born_log_prob: f64,
}

impl TrajectoryRecord {
    fn annihilated(stream: RngStream, snapshots: BTreeMap<usize, ObservableBundle>, born: f64) -> Self {
        Self { stream, log_z: f64::NEG_INFINITY, annihilated: true, snapshots, born_log_prob: born }
    }
}

fn snapshot_bundle(state: &PureState, system_sites: usize, probes: &[Probe]) -> StateResult<ObservableBundle> {
    probes
        .iter()
        .filter(|p| p.is_snapshot_probe())
        .map(|p| Ok((p.to_string(), p.evaluate(state, system_sites)?)))
        .collect()
}

/// Evolves `|0...0>` for `cfg.steps()` full steps, evaluating snapshot
/// probes after each requested step.
pub fn run_trajectory<D: Dynamics + ?Sized>(cfg: &D) -> ConfigResult<TrajectoryRecord> {
    cfg.validate()?;
    let l = cfg.sites();
    let stream = cfg.stream();
    let mut traj = Trajectory::new(PureState::zero(cfg.local_dim(), l)?, l, cfg.protocol(), stream);
    let mut snapshots = BTreeMap::new();
    let wants = |t: usize| cfg.snapshot_times().contains(&t);
    let observe = |traj: &Trajectory<PureState>, snaps: &mut BTreeMap<usize, ObservableBundle>, t: usize| {
        traj.observed().and_then(|s| snapshot_bundle(&s, l, cfg.probes())).map(|b| {
            snaps.insert(t, b);
        })
    };
    if wants(0) && observe(&traj, &mut snapshots, 0).is_err() {
        return Ok(TrajectoryRecord::annihilated(stream, snapshots, 0.0));
    }
    for t in 1..=cfg.steps() {
        if traj.step().is_err() || (wants(t) && observe(&traj, &mut snapshots, t).is_err()) {
            return Ok(TrajectoryRecord::annihilated(stream, snapshots, traj.born_log_prob()));
        }
    }
    match traj.observed() {
        Ok(final_state) => Ok(TrajectoryRecord {
            stream,
            log_z: final_state.log_weight(),
            annihilated: false,
            snapshots,
            born_log_prob: traj.born_log_prob(),
        }),
        Err(_) => Ok(TrajectoryRecord::annihilated(stream, snapshots, traj.born_log_prob())),
    }
}

/// Post-selected / Born random circuit from `|0...0>`.
pub fn run_rqc(cfg: &RqcConfig) -> ConfigResult<TrajectoryRecord> { run_trajectory(cfg) }

/// Translationally-invariant weak-measurement circuit.
pub fn run_ti_circuit(cfg: &TiConfig) -> ConfigResult<TrajectoryRecord> { run_trajectory(cfg) }

/// Time series of one scalar observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub stream: RngStream,
    /// `(completed step, value)`.
    pub points: Vec<(usize, f64)>,
    pub annihilated: bool,
}

impl Series {
    pub fn last(&self) -> Option<f64> { self.points.last().map(|p| p.1) }
}

/// Global purification: evolve `I / d^L` under the model's schedule and
/// record its von Neumann entropy at the snapshot times (every step when
/// none are given).
pub fn purification_run<D: Dynamics + ?Sized>(cfg: &D) -> ConfigResult<Series> {
    cfg.validate()?;
    let l = cfg.sites();
    state::check_density_budget(cfg.local_dim(), l)?;
    let stream = cfg.stream();
    let mut traj = Trajectory::new(DensityState::maximally_mixed(cfg.local_dim(), l)?, l, cfg.protocol(), stream);
    let all: Vec<usize> = (0..=cfg.steps()).collect();
    let times = if cfg.snapshot_times().is_empty() { &all[..] } else { cfg.snapshot_times() };
    let mut points = Vec::new();
    let mut record = |traj: &Trajectory<DensityState>, t: usize| -> StateResult<()> {
        if times.contains(&t) {
            points.push((t, traj.observed()?.von_neumann_entropy()));
        }
        Ok(())
    };
    let mut annihilated = record(&traj, 0).is_err();
    if !annihilated {
        for t in 1..=cfg.steps() {
            if traj.step().and_then(|_| record(&traj, t)).is_err() {
                annihilated = true;
                break;
            }
        }
    }
    Ok(Series { stream, points, annihilated })
}

fn ancilla_entropy(state: &PureState, ancilla: usize) -> StateResult<f64> {
    state.renyi_entropy(&Region::new([ancilla], state.sites())?, 1)
}

/// Local order parameter: run to `t0`, couple an ancilla to site `r`, and
/// record its entropy at `t0` and after every later step up to
/// `cfg.steps()`.
pub fn order_parameter_run<D: Dynamics + ?Sized>(cfg: &D, t0: usize, r: usize) -> ConfigResult<Series> {
    cfg.validate()?;
    let l = cfg.sites();
    ensure(r < l, || format!("coupling site {r} outside the system"))?;
    ensure(t0 < cfg.steps(), || "coupling time must precede the final step".into())?;
    state::check_pure_budget(cfg.local_dim(), l + 2)?;
    let stream = cfg.stream();
    let mut traj = Trajectory::new(PureState::zero(cfg.local_dim(), l)?, l, cfg.protocol(), stream);
    let fail = |points| Ok(Series { stream, points, annihilated: true });
    for _ in 0..t0 {
        if traj.step().is_err() {
            return fail(Vec::new());
        }
    }
    let coupled = match traj.state().attach_ancilla_bell(r) {
        Ok(s) => s,
        Err(_) => return fail(Vec::new()),
    };
    traj.replace_state(coupled);
    let ancilla = l + 1;
    let mut points = Vec::new();
    for t in t0..=cfg.steps() {
        if t > t0 && traj.step().is_err() {
            return fail(points);
        }
        match traj.observed().and_then(|s| ancilla_entropy(&s, ancilla)) {
            Ok(v) => points.push((t, v)),
            Err(_) => return fail(points),
        }
    }
    Ok(Series { stream, points, annihilated: false })
}

/// Where and when the two ancillas of [`two_ancilla_run`] are coupled.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    /// Both at `t0`, at sites `r` and `r2`.
    Spatial { r: usize, r2: usize },
    /// Both at site `r`, at `t0` and `t0 + dt`.
    Temporal { r: usize, dt: usize },
}

/// Result of a two-ancilla run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutualInfoSeries {
    /// `I_2(a1:a2)` from the last coupling to the horizon.
    pub series: Series,
    /// `I_2` at the horizon.
    pub at_horizon: f64,
}

/// Two-ancilla mutual information. The run lasts until `horizon` steps
/// (default `2L`) after the last coupling; `cfg.steps()` is not used.
pub fn two_ancilla_run<D: Dynamics + ?Sized>(
    cfg: &D,
    t0: usize,
    coupling: Coupling,
    horizon: Option<usize>,
) -> ConfigResult<MutualInfoSeries> {
    cfg.validate()?;
    let l = cfg.sites();
    state::check_pure_budget(cfg.local_dim(), l + 4)?;
    let (first, second, last_coupling) = match coupling {
        Coupling::Spatial { r, r2 } => {
            ensure(r != r2, || "spatial coupling needs distinct sites".into())?;
            (r, r2, t0)
        }
        Coupling::Temporal { r, dt } => {
            ensure(dt >= 1, || "temporal coupling needs dt >= 1".into())?;
            (r, r, t0 + dt)
        }
    };
    ensure(first < l && second < l, || "coupling site outside the system".into())?;
    let horizon = horizon.unwrap_or(2 * l);
    let end = last_coupling + horizon;
    let stream = cfg.stream();
    let mut traj = Trajectory::new(PureState::zero(cfg.local_dim(), l)?, l, cfg.protocol(), stream);
    let (a1, a2) = (l + 1, l + 3);
    let mut points = Vec::new();
    let annihilated = |points| {
        Ok(MutualInfoSeries { series: Series { stream, points, annihilated: true }, at_horizon: f64::NAN })
    };
    for t in 0..=end {
        if t > 0 && traj.step().is_err() {
            return annihilated(points);
        }
        if t == t0 {
            let s = traj.state().attach_ancilla_bell(first);
            match s.and_then(|s| if t == last_coupling { s.attach_ancilla_bell(second) } else { Ok(s) }) {
                Ok(s) => traj.replace_state(s),
                Err(_) => return annihilated(points),
            }
        } else if t == last_coupling {
            match traj.state().attach_ancilla_bell(second) {
                Ok(s) => traj.replace_state(s),
                Err(_) => return annihilated(points),
            }
        }
        if t >= last_coupling {
            match traj.observed().and_then(|s| probes::mutual_information(&s, a1, a2)) {
                Ok(v) => points.push((t, v)),
                Err(_) => return annihilated(points),
            }
        }
    }
    let at_horizon = points.last().map(|p| p.1).unwrap_or(f64::NAN);
    Ok(MutualInfoSeries { series: Series { stream, points, annihilated: false }, at_horizon })
}

/// Annihilation as a recoverable per-trajectory outcome.
pub fn is_annihilation(e: &StateError) -> bool { matches!(e, StateError::Annihilated(_)) }
