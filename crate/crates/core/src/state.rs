//! Pure-state and density-operator registers of `L` qudits.
//!
//! Site `0` is the most significant digit of the basis index, so site `k`
//! has stride `d^(L-1-k)`. Both registers carry a `log_weight` ledger: every
//! renormalization that strips a factor `N` from the squared norm (or trace)
//! adds `ln N` to it, so after a forced-measurement trajectory the ledger is
//! exactly `ln Z` of the unnormalized state.

use std::io::{BufRead, Write};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, ComplexMatrix};

/// Squared norms (or traces) below this annihilate the state.
pub const ANNIHILATION_THRESHOLD: f64 = 1e-28;
/// Largest pure-state amplitude count accepted at config validation.
pub const MAX_PURE_AMPLITUDES: usize = 1 << 22;
/// Largest density-matrix dimension accepted at config validation.
pub const MAX_DENSITY_ROWS: usize = 1 << 12;

const NORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("site {site} out of range for {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("two-site gate needs distinct sites, got ({0}, {0})")]
    RepeatedSite(usize),

    #[error("operator is {rows}x{cols}, expected {expected}x{expected}")]
    DimensionMismatch { rows: usize, cols: usize, expected: usize },

    #[error("state annihilated: squared norm {0:e} after non-unitary operation")]
    Annihilated(f64),

    #[error("state is not normalized (squared norm {0})")]
    NotNormalized(f64),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("register of {local_dim}^{sites} exceeds the memory budget")]
    Resource { local_dim: usize, sites: usize },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

pub type StateResult<T> = Result<T, StateError>;

/// `d^sites` with overflow-safe budget checks.
fn checked_dim(d: usize, sites: usize, budget: usize) -> StateResult<usize> {
    let mut dim = 1usize;
    for _ in 0..sites {
        dim = dim
            .checked_mul(d)
            .filter(|&x| x <= budget)
            .ok_or(StateError::Resource { local_dim: d, sites })?;
    }
    Ok(dim)
}

/// Validates that a pure register of `d^sites` amplitudes fits the budget.
pub fn check_pure_budget(d: usize, sites: usize) -> StateResult<()> {
    checked_dim(d, sites, MAX_PURE_AMPLITUDES).map(|_| ())
}

/// Validates that a density register of `d^sites` rows fits the budget.
pub fn check_density_budget(d: usize, sites: usize) -> StateResult<()> {
    checked_dim(d, sites, MAX_DENSITY_ROWS).map(|_| ())
}

/// An ordered set of distinct sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region(Vec<usize>);

impl Region {
    pub fn new(sites: impl IntoIterator<Item = usize>, total: usize) -> StateResult<Self> {
        let sites: Vec<usize> = sites.into_iter().collect();
        let mut seen = vec![false; total];
        for &s in &sites {
            if s >= total {
                return Err(StateError::InvalidRegion(format!("site {s} >= {total}")));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(StateError::InvalidRegion(format!("site {s} repeated")));
            }
        }
        Ok(Self(sites))
    }

    /// Contiguous sites `start..start+len`, wrapping periodically.
    pub fn contiguous(start: usize, len: usize, total: usize) -> StateResult<Self> {
        if len > total {
            return Err(StateError::InvalidRegion(format!("length {len} > {total}")));
        }
        Self::new((0..len).map(|k| (start + k) % total), total)
    }

    pub fn sites(&self) -> &[usize] { &self.0 }

    pub fn len(&self) -> usize { self.0.len() }

    pub fn is_empty(&self) -> bool { self.0.is_empty() }

    pub fn contains(&self, site: usize) -> bool { self.0.contains(&site) }

    /// Union, keeping `self`'s order first.
    pub fn union(&self, other: &Region) -> Region {
        let mut v = self.0.clone();
        v.extend(other.0.iter().copied().filter(|s| !self.0.contains(s)));
        Region(v)
    }

    /// Sites of `0..total` not in `self`, ascending.
    pub fn complement(&self, total: usize) -> Region {
        Region((0..total).filter(|s| !self.0.contains(s)).collect())
    }
}

// ---------------------------------------------------------------------------
// amplitude kernels

fn stride(d: usize, sites: usize, site: usize) -> usize {
    d.pow((sites - 1 - site) as u32)
}

/// Calls `f(base)` for every index whose digits at strides `s_a` and `s_b`
/// are both zero.
#[inline]
fn for_each_pair_base(n: usize, d: usize, s_a: usize, s_b: usize, mut f: impl FnMut(usize)) {
    let (hi, lo) = if s_a > s_b { (s_a, s_b) } else { (s_b, s_a) };
    let (block_hi, block_lo) = (hi * d, lo * d);
    let mut outer = 0;
    while outer < n {
        let mut mid = 0;
        while mid < hi {
            let base = outer + mid;
            for inner in 0..lo {
                f(base + inner);
            }
            mid += block_lo;
        }
        outer += block_hi;
    }
}

/// Row-major copy of a square matrix.
fn row_major(m: &ComplexMatrix) -> Vec<C64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn apply_pair_fixed<const DD: usize>(amps: &mut [C64], d: usize, s_i: usize, s_j: usize, g: &[C64]) {
    let mut offs = [0usize; DD];
    for (k, off) in offs.iter_mut().enumerate() {
        *off = (k / d) * s_i + (k % d) * s_j;
    }
    let mut gm = [[C64::new(0.0, 0.0); DD]; DD];
    for r in 0..DD {
        for c in 0..DD {
            gm[r][c] = g[r * DD + c];
        }
    }
    let n = amps.len();
    for_each_pair_base(n, d, s_i, s_j, |base| {
        let mut v = [C64::new(0.0, 0.0); DD];
        for k in 0..DD {
            v[k] = amps[base + offs[k]];
        }
        for r in 0..DD {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..DD {
                acc += gm[r][c] * v[c];
            }
            amps[base + offs[r]] = acc;
        }
    });
}

fn apply_pair_dyn(amps: &mut [C64], d: usize, s_i: usize, s_j: usize, g: &[C64]) {
    let dd = d * d;
    let offs: Vec<usize> = (0..dd).map(|k| (k / d) * s_i + (k % d) * s_j).collect();
    let mut v = vec![C64::new(0.0, 0.0); dd];
    let n = amps.len();
    for_each_pair_base(n, d, s_i, s_j, |base| {
        for k in 0..dd {
            v[k] = amps[base + offs[k]];
        }
        for r in 0..dd {
            let row = &g[r * dd..(r + 1) * dd];
            amps[base + offs[r]] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
    });
}

/// Applies a `d^2 x d^2` row-major gate to the digits at strides `s_i`
/// (first tensor factor) and `s_j`.
fn apply_pair(amps: &mut [C64], d: usize, s_i: usize, s_j: usize, g: &[C64]) {
    match d * d {
        4 => apply_pair_fixed::<4>(amps, d, s_i, s_j, g),
        9 => apply_pair_fixed::<9>(amps, d, s_i, s_j, g),
        _ => apply_pair_dyn(amps, d, s_i, s_j, g),
    }
}

fn is_diagonal(m: &ComplexMatrix) -> bool {
    (0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == C64::new(0.0, 0.0)))
}

/// Applies a `d x d` operator to the digit at stride `s`.
fn apply_single(amps: &mut [C64], d: usize, s: usize, m: &ComplexMatrix) {
    let n = amps.len();
    let block = s * d;
    if is_diagonal(m) {
        let diag: Vec<C64> = (0..d).map(|k| m[(k, k)]).collect();
        let mut outer = 0;
        while outer < n {
            for (x, w) in diag.iter().enumerate() {
                let start = outer + x * s;
                if *w == C64::new(1.0, 0.0) {
                    continue;
                }
                for a in &mut amps[start..start + s] {
                    *a *= w;
                }
            }
            outer += block;
        }
        return;
    }
    let g = row_major(m);
    let mut v = vec![C64::new(0.0, 0.0); d];
    let mut outer = 0;
    while outer < n {
        for inner in 0..s {
            let base = outer + inner;
            for k in 0..d {
                v[k] = amps[base + k * s];
            }
            for r in 0..d {
                amps[base + r * s] = (0..d).map(|c| g[r * d + c] * v[c]).sum();
            }
        }
        outer += block;
    }
}

/// Probability weight of each digit value at stride `s`.
fn digit_weights(amps: &[C64], d: usize, s: usize) -> Vec<f64> {
    let mut w = vec![0.0; d];
    let block = s * d;
    let mut outer = 0;
    while outer < amps.len() {
        for (x, wx) in w.iter_mut().enumerate() {
            let start = outer + x * s;
            *wx += amps[start..start + s].iter().map(|a| a.norm_sqr()).sum::<f64>();
        }
        outer += block;
    }
    w
}

fn check_square(m: &ComplexMatrix, expected: usize) -> StateResult<()> {
    if m.nrows() != expected || m.ncols() != expected {
        return Err(StateError::DimensionMismatch { rows: m.nrows(), cols: m.ncols(), expected });
    }
    Ok(())
}

/// Operations the trajectory engine needs from a register.
pub trait Register: Clone + Send {
    fn local_dim(&self) -> usize;
    fn sites(&self) -> usize;
    fn log_weight(&self) -> f64;
    /// Applies `gate` to sites `(i, j)` without renormalizing.
    fn apply_two_site_gate(&mut self, i: usize, j: usize, gate: &ComplexMatrix) -> StateResult<()>;
    /// Applies `k` to site `i`, renormalizes and books the stripped weight.
    fn apply_site_kraus(&mut self, i: usize, k: &ComplexMatrix) -> StateResult<()>;
    /// Renormalizes, booking the stripped weight; returns the squared norm
    /// (or trace) that was removed.
    fn renormalize(&mut self) -> StateResult<f64>;
    /// Born weights of each outcome of a computational-basis measurement
    /// of `site`.
    fn outcome_probabilities(&self, site: usize) -> StateResult<Vec<f64>>;
    /// Projects `site` onto outcome `k` and renormalizes *without* touching
    /// `log_weight`; returns the Born probability of that outcome.
    fn project_outcome(&mut self, site: usize, k: usize) -> StateResult<f64>;
}

// ---------------------------------------------------------------------------
// pure states

/// Amplitude vector over `sites` qudits of dimension `local_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    local_dim: usize,
    sites: usize,
    amps: Vec<C64>,
    log_weight: f64,
}

impl PureState {
    /// `|0...0>`.
    pub fn zero(local_dim: usize, sites: usize) -> StateResult<Self> {
        assert!(local_dim >= 1);
        let dim = checked_dim(local_dim, sites, MAX_PURE_AMPLITUDES)?;
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[0] = C64::new(1.0, 0.0);
        Ok(Self { local_dim, sites, amps, log_weight: 0.0 })
    }

    /// Wraps raw amplitudes; no normalization is performed.
    pub fn from_amplitudes(local_dim: usize, sites: usize, amps: Vec<C64>) -> StateResult<Self> {
        let dim = checked_dim(local_dim, sites, MAX_PURE_AMPLITUDES)?;
        if amps.len() != dim {
            return Err(StateError::DimensionMismatch { rows: amps.len(), cols: 1, expected: dim });
        }
        Ok(Self { local_dim, sites, amps, log_weight: 0.0 })
    }

    /// Product of single-site states (each of length `local_dim`).
    pub fn product(local_dim: usize, factors: &[Vec<C64>]) -> StateResult<Self> {
        let mut amps = vec![C64::new(1.0, 0.0)];
        for f in factors {
            assert_eq!(f.len(), local_dim);
            amps = amps.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect();
        }
        Self::from_amplitudes(local_dim, factors.len(), amps)
    }

    pub fn amplitudes(&self) -> &[C64] { &self.amps }

    pub fn dim(&self) -> usize { self.amps.len() }

    pub fn set_log_weight(&mut self, w: f64) { self.log_weight = w; }

    pub fn norm_sqr(&self) -> f64 { self.amps.iter().map(|a| a.norm_sqr()).sum() }

    fn check_site(&self, site: usize) -> StateResult<()> {
        if site >= self.sites {
            return Err(StateError::SiteOutOfRange { site, sites: self.sites });
        }
        Ok(())
    }

    fn check_normalized(&self) -> StateResult<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(StateError::NotNormalized(n));
        }
        Ok(())
    }

    /// Applies a single-site operator without renormalizing.
    pub fn apply_site_operator(&mut self, i: usize, m: &ComplexMatrix) -> StateResult<()> {
        self.check_site(i)?;
        check_square(m, self.local_dim)?;
        let s = stride(self.local_dim, self.sites, i);
        apply_single(&mut self.amps, self.local_dim, s, m);
        Ok(())
    }

    /// Amplitude matrix with rows indexed by the digits of `region` (in
    /// region order) and columns by the remaining sites (ascending).
    pub fn bipartition_matrix(&self, region: &Region) -> ComplexMatrix {
        let d = self.local_dim;
        let a = region.len();
        let b = self.sites - a;
        let rows = d.pow(a as u32);
        let cols = d.pow(b as u32);
        let mut weights = vec![(0usize, 0usize); self.sites];
        let comp = region.complement(self.sites);
        for (pos, &s) in region.sites().iter().enumerate() {
            weights[s] = (d.pow((a - 1 - pos) as u32), 0);
        }
        for (pos, &s) in comp.sites().iter().enumerate() {
            weights[s] = (0, d.pow((b - 1 - pos) as u32));
        }
        let mut data = vec![C64::new(0.0, 0.0); rows * cols];
        let mut digits = vec![0usize; self.sites];
        let (mut row, mut col) = (0usize, 0usize);
        for amp in &self.amps {
            data[col * rows + row] = *amp;
            // odometer increment, least significant site last
            for site in (0..self.sites).rev() {
                let (wr, wc) = weights[site];
                digits[site] += 1;
                row += wr;
                col += wc;
                if digits[site] < d {
                    break;
                }
                digits[site] = 0;
                row -= d * wr;
                col -= d * wc;
            }
        }
        ComplexMatrix::from_vec(rows, cols, data)
    }

    /// Schmidt coefficients (squared) across `region | complement`,
    /// descending.
    pub fn schmidt_spectrum(&self, region: &Region) -> StateResult<Vec<f64>> {
        self.check_normalized()?;
        if region.is_empty() || region.len() == self.sites {
            return Ok(vec![1.0]);
        }
        Ok(linalg::squared_singular_values(self.bipartition_matrix(region)))
    }

    /// `rho_A = tr_{complement} |psi><psi|`, indexed in region order.
    pub fn reduced_density(&self, region: &Region) -> StateResult<ComplexMatrix> {
        self.check_normalized()?;
        check_pure_budget(self.local_dim, region.len())
            .and_then(|_| check_density_budget(self.local_dim, region.len()))?;
        let m = self.bipartition_matrix(region);
        Ok(&m * m.adjoint())
    }

    /// Rényi entropy `S_n` of `region`, natural log; `n = 1` is von Neumann.
    pub fn renyi_entropy(&self, region: &Region, n: u32) -> StateResult<f64> {
        Ok(linalg::renyi_of_spectrum(&self.schmidt_spectrum(region)?, n))
    }

    /// Couples a fresh ancilla to `site` in a maximally entangled pair.
    ///
    /// The site's current qudit is moved into a new, never-touched
    /// register slot (index `L`), and the site together with a second new
    /// slot (index `L + 1`, the ancilla) is reset to
    /// `(1/sqrt d) sum_k |k>|k>`. The result has `L + 2` sites; the ancilla
    /// starts with entropy exactly `ln d` and no correlation with anything
    /// else.
    pub fn attach_ancilla_bell(&self, site: usize) -> StateResult<PureState> {
        self.check_site(site)?;
        let d = self.local_dim;
        let new_sites = self.sites + 2;
        let dim = checked_dim(d, new_sites, MAX_PURE_AMPLITUDES)?;
        let s = stride(d, self.sites, site);
        let scale = 1.0 / (d as f64).sqrt();
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        for (idx, amp) in self.amps.iter().enumerate() {
            if *amp == C64::new(0.0, 0.0) {
                continue;
            }
            let x = (idx / s) % d;
            let rest = idx - x * s;
            for k in 0..d {
                let sys = rest + k * s;
                amps[(sys * d + x) * d + k] = amp * scale;
            }
        }
        Ok(PureState { local_dim: d, sites: new_sites, amps, log_weight: self.log_weight })
    }

    /// Writes a debugging snapshot: a header line `# d,L,log_weight`
    /// followed by one `re,im` line per amplitude in basis order.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {},{},{}", self.local_dim, self.sites, self.log_weight)?;
        for a in &self.amps {
            writeln!(w, "{},{}", a.re, a.im)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: R) -> StateResult<Self> {
        let bad = |m: &str| StateError::Snapshot(m.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?.map_err(|e| bad(&e.to_string()))?;
        let fields: Vec<&str> = header
            .strip_prefix("# ")
            .ok_or_else(|| bad("missing header"))?
            .split(',')
            .collect();
        if fields.len() != 3 {
            return Err(bad("header needs d,L,log_weight"));
        }
        let d: usize = fields[0].parse().map_err(|_| bad("d"))?;
        let sites: usize = fields[1].parse().map_err(|_| bad("L"))?;
        let log_weight: f64 = fields[2].parse().map_err(|_| bad("log_weight"))?;
        let mut amps = Vec::new();
        for line in lines {
            let line = line.map_err(|e| bad(&e.to_string()))?;
            let (re, im) = line.split_once(',').ok_or_else(|| bad("amplitude line"))?;
            amps.push(C64::new(
                re.parse().map_err(|_| bad("re"))?,
                im.parse().map_err(|_| bad("im"))?,
            ));
        }
        let mut state = Self::from_amplitudes(d, sites, amps)?;
        state.log_weight = log_weight;
        Ok(state)
    }
}

impl Register for PureState {
    fn local_dim(&self) -> usize { self.local_dim }

    fn sites(&self) -> usize { self.sites }

    fn log_weight(&self) -> f64 { self.log_weight }

    fn apply_two_site_gate(&mut self, i: usize, j: usize, gate: &ComplexMatrix) -> StateResult<()> {
        self.check_site(i)?;
        self.check_site(j)?;
        if i == j {
            return Err(StateError::RepeatedSite(i));
        }
        let d = self.local_dim;
        check_square(gate, d * d)?;
        let g = row_major(gate);
        let (si, sj) = (stride(d, self.sites, i), stride(d, self.sites, j));
        apply_pair(&mut self.amps, d, si, sj, &g);
        Ok(())
    }

    fn apply_site_kraus(&mut self, i: usize, k: &ComplexMatrix) -> StateResult<()> {
        self.apply_site_operator(i, k)?;
        self.renormalize().map(|_| ())
    }

    fn renormalize(&mut self) -> StateResult<f64> {
        let n = self.norm_sqr();
        if !(n >= ANNIHILATION_THRESHOLD) || !n.is_finite() {
            return Err(StateError::Annihilated(n));
        }
        if n != 1.0 {
            let scale = 1.0 / n.sqrt();
            self.amps.iter_mut().for_each(|a| *a *= scale);
            self.log_weight += n.ln();
        }
        Ok(n)
    }

    fn outcome_probabilities(&self, site: usize) -> StateResult<Vec<f64>> {
        self.check_site(site)?;
        let s = stride(self.local_dim, self.sites, site);
        let w = digit_weights(&self.amps, self.local_dim, s);
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / total).collect())
    }

    fn project_outcome(&mut self, site: usize, k: usize) -> StateResult<f64> {
        let before = self.norm_sqr();
        self.apply_site_operator(site, &linalg::projector(self.local_dim, k))?;
        let n = self.norm_sqr();
        if !(n >= ANNIHILATION_THRESHOLD) {
            return Err(StateError::Annihilated(n));
        }
        let scale = 1.0 / n.sqrt();
        self.amps.iter_mut().for_each(|a| *a *= scale);
        Ok(n / before)
    }
}

// ---------------------------------------------------------------------------
// density states

/// Density operator over `sites` qudits, stored row-major as a vector over
/// `2 * sites` virtual digits (row digits first).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    local_dim: usize,
    sites: usize,
    entries: Vec<C64>,
    log_weight: f64,
}

impl DensityState {
    /// `I / d^L`.
    pub fn maximally_mixed(local_dim: usize, sites: usize) -> StateResult<Self> {
        let dim = checked_dim(local_dim, sites, MAX_DENSITY_ROWS)?;
        let mut entries = vec![C64::new(0.0, 0.0); dim * dim];
        for r in 0..dim {
            entries[r * dim + r] = C64::new(1.0 / dim as f64, 0.0);
        }
        Ok(Self { local_dim, sites, entries, log_weight: 0.0 })
    }

    /// `|psi><psi|`.
    pub fn from_pure(psi: &PureState) -> StateResult<Self> {
        let dim = checked_dim(psi.local_dim, psi.sites, MAX_DENSITY_ROWS)?;
        let a = psi.amplitudes();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                entries.push(a[r] * a[c].conj());
            }
        }
        Ok(Self { local_dim: psi.local_dim, sites: psi.sites, entries, log_weight: psi.log_weight })
    }

    pub fn dim(&self) -> usize { self.local_dim.pow(self.sites as u32) }

    pub fn matrix(&self) -> ComplexMatrix {
        let dim = self.dim();
        ComplexMatrix::from_row_slice(dim, dim, &self.entries)
    }

    pub fn trace(&self) -> f64 {
        let dim = self.dim();
        (0..dim).map(|r| self.entries[r * dim + r].re).sum()
    }

    fn check_site(&self, site: usize) -> StateResult<()> {
        if site >= self.sites {
            return Err(StateError::SiteOutOfRange { site, sites: self.sites });
        }
        Ok(())
    }

    fn row_stride(&self, site: usize) -> usize { stride(self.local_dim, 2 * self.sites, site) }

    fn col_stride(&self, site: usize) -> usize {
        stride(self.local_dim, 2 * self.sites, self.sites + site)
    }

    /// `rho <- K rho K^dagger` on one site, without renormalizing.
    pub fn apply_site_operator(&mut self, i: usize, k: &ComplexMatrix) -> StateResult<()> {
        self.check_site(i)?;
        check_square(k, self.local_dim)?;
        let d = self.local_dim;
        let (rs, cs) = (self.row_stride(i), self.col_stride(i));
        apply_single(&mut self.entries, d, rs, k);
        apply_single(&mut self.entries, d, cs, &k.map(|z| z.conj()));
        Ok(())
    }

    /// Spectrum of the trace-normalized operator, descending.
    pub fn spectrum(&self) -> Vec<f64> {
        let tr = self.trace();
        linalg::hermitian_spectrum(self.matrix().unscale(tr))
    }

    /// Rényi entropy of the whole register (natural log).
    pub fn renyi_entropy(&self, n: u32) -> f64 {
        linalg::renyi_of_spectrum(&self.spectrum(), n)
    }

    pub fn von_neumann_entropy(&self) -> f64 { self.renyi_entropy(1) }

    /// Largest `|rho - rho^dagger|` entry.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = self.matrix();
        (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl Register for DensityState {
    fn local_dim(&self) -> usize { self.local_dim }

    fn sites(&self) -> usize { self.sites }

    fn log_weight(&self) -> f64 { self.log_weight }

    fn apply_two_site_gate(&mut self, i: usize, j: usize, gate: &ComplexMatrix) -> StateResult<()> {
        self.check_site(i)?;
        self.check_site(j)?;
        if i == j {
            return Err(StateError::RepeatedSite(i));
        }
        let d = self.local_dim;
        check_square(gate, d * d)?;
        let g = row_major(gate);
        let gc: Vec<C64> = g.iter().map(|z| z.conj()).collect();
        let (ri, rj) = (self.row_stride(i), self.row_stride(j));
        let (ci, cj) = (self.col_stride(i), self.col_stride(j));
        apply_pair(&mut self.entries, d, ri, rj, &g);
        apply_pair(&mut self.entries, d, ci, cj, &gc);
        Ok(())
    }

    fn apply_site_kraus(&mut self, i: usize, k: &ComplexMatrix) -> StateResult<()> {
        self.apply_site_operator(i, k)?;
        self.renormalize().map(|_| ())
    }

    fn renormalize(&mut self) -> StateResult<f64> {
        let tr = self.trace();
        if !(tr >= ANNIHILATION_THRESHOLD) || !tr.is_finite() {
            return Err(StateError::Annihilated(tr));
        }
        if tr != 1.0 {
            let scale = 1.0 / tr;
            self.entries.iter_mut().for_each(|a| *a *= scale);
            self.log_weight += tr.ln();
        }
        Ok(tr)
    }

    fn outcome_probabilities(&self, site: usize) -> StateResult<Vec<f64>> {
        self.check_site(site)?;
        let d = self.local_dim;
        let dim = self.dim();
        let s = stride(d, self.sites, site);
        let mut w = vec![0.0; d];
        for r in 0..dim {
            w[(r / s) % d] += self.entries[r * dim + r].re;
        }
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| (x / total).max(0.0)).collect())
    }

    fn project_outcome(&mut self, site: usize, k: usize) -> StateResult<f64> {
        let before = self.trace();
        self.apply_site_operator(site, &linalg::projector(self.local_dim, k))?;
        let tr = self.trace();
        if !(tr >= ANNIHILATION_THRESHOLD) {
            return Err(StateError::Annihilated(tr));
        }
        let scale = 1.0 / tr;
        self.entries.iter_mut().for_each(|a| *a *= scale);
        Ok(tr / before)
    }
}
