//! Dense complex linear algebra and random-matrix sampling shared by the
//! circuit and tensor-network simulators.

use nalgebra as na;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Dense complex matrix (column-major, as stored by nalgebra).
pub type ComplexMatrix = na::DMatrix<C64>;

/// Singular values below this are treated as exact zeros before any entropy
/// is evaluated.
pub const SPECTRUM_CUTOFF: f64 = 1e-14;

/// Identifies one independent random stream.
///
/// A stream is addressed by the experiment-wide `base_seed` and a
/// `stream_index` (one per disorder realization). Each [`StreamClass`] draws
/// from its own generator, so e.g. the measurement pattern of a trajectory
/// never depends on how many numbers the gate sampler consumed.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_index: u64,
}

/// Class of random object drawn from a [`RngStream`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum StreamClass {
    Gates = 1,
    MeasurementPattern = 2,
    BornOutcomes = 3,
    Tensors = 4,
    Bootstrap = 5,
    Generic = 6,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        Self { base_seed, stream_index }
    }

    /// Deterministic generator for one object class of this stream.
    ///
    /// The 256-bit ChaCha key holds `(base_seed, class)` and the ChaCha
    /// stream id holds `stream_index`, so distinct triples never share a
    /// keystream.
    pub fn rng(&self, class: StreamClass) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.base_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&(class as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// One standard complex Gaussian: real and imaginary parts each have
/// variance 1/2, so `E|z|^2 = 1`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random `d x d` unitary.
///
/// QR of a complex Ginibre matrix, with the phases of `diag(R)` moved into
/// `Q` so that the decomposition is unique and the result is Haar
/// distributed.
pub fn sample_haar_unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> ComplexMatrix {
    assert!(d >= 1, "local dimension must be positive");
    let ginibre = ComplexMatrix::from_fn(d, d, |_, _| complex_gaussian(rng));
    let qr = ginibre.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..d {
        let rkk = r[(k, k)];
        let norm = rkk.norm();
        let phase = if norm > 0.0 { rkk / norm } else { C64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, k)] *= phase;
        }
    }
    q
}

/// Tensor with i.i.d. standard complex Gaussian entries, flattened row-major
/// over `dims` (last leg fastest).
pub fn sample_gaussian_tensor<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> Vec<C64> {
    assert!(dims.iter().all(|&n| n >= 1), "every leg dimension must be positive");
    let len: usize = dims.iter().product();
    (0..len).map(|_| complex_gaussian(rng)).collect()
}

/// Squared singular values of `m`, sorted descending, with entries below
/// [`SPECTRUM_CUTOFF`] clamped to zero.
pub fn squared_singular_values(m: ComplexMatrix) -> Vec<f64> {
    let m = if m.nrows() > m.ncols() { m.adjoint() } else { m };
    clamp_sorted(singular_values(&m).into_iter().map(|s| s * s).collect())
}

fn to_faer(m: &ComplexMatrix) -> faer::Mat<C64> { faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]) }

// Sequential on purpose: results must not depend on the thread count.
fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::svd::{self, ComputeSvdVectors};
    let a = to_faer(m);
    let (r, c) = (m.nrows(), m.ncols());
    let mut s = faer::diag::Diag::<C64>::zeros(r.min(c));
    let scratch = svd::svd_scratch::<C64>(r, c, ComputeSvdVectors::No, ComputeSvdVectors::No, faer::Par::Seq, Default::default());
    svd::svd(a.as_ref(), s.as_mut(), None, None, faer::Par::Seq, MemStack::new(&mut MemBuffer::new(scratch)), Default::default())
        .expect("SVD converges");
    s.column_vector().iter().map(|x| x.re).collect()
}

fn clamp_sorted(mut spec: Vec<f64>) -> Vec<f64> {
    for p in spec.iter_mut() {
        if *p < SPECTRUM_CUTOFF {
            *p = 0.0;
        }
    }
    spec.sort_by(|a, b| b.total_cmp(a));
    spec
}

/// Eigenvalues of a Hermitian matrix, sorted descending, clamped like
/// [`squared_singular_values`].
pub fn hermitian_spectrum(m: ComplexMatrix) -> Vec<f64> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::evd::{self, ComputeEigenvectors};
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let a = to_faer(&m);
    let mut s = faer::diag::Diag::<C64>::zeros(n);
    let scratch = evd::self_adjoint_evd_scratch::<C64>(n, ComputeEigenvectors::No, faer::Par::Seq, Default::default());
    evd::self_adjoint_evd(a.as_ref(), s.as_mut(), None, faer::Par::Seq, MemStack::new(&mut MemBuffer::new(scratch)), Default::default())
        .expect("Hermitian eigensolver converges");
    clamp_sorted(s.column_vector().iter().map(|x| x.re).collect())
}

/// Rényi entropy (natural log) of a probability spectrum. `n = 1` is the
/// von Neumann entropy.
pub fn renyi_of_spectrum(spec: &[f64], n: u32) -> f64 {
    assert!(n >= 1, "Rényi index must be at least 1");
    let s = if n == 1 {
        -spec.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    } else {
        let tr: f64 = spec.iter().filter(|&&p| p > 0.0).map(|&p| p.powi(n as i32)).sum();
        tr.ln() / (1.0 - n as f64)
    };
    s.max(0.0)
}

/// Largest absolute entry of `U^† U - I`.
pub fn unitarity_defect(u: &ComplexMatrix) -> f64 {
    let n = u.ncols();
    let prod = u.adjoint() * u;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Kronecker product `a ⊗ b` (first factor on the most significant index).
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Single-site projector `|k><k|` in dimension `d`.
pub fn projector(d: usize, k: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d, d);
    m[(k, k)] = C64::new(1.0, 0.0);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_one_dimensional_is_a_phase() {
        let mut rng = RngStream::new(1, 0).rng(StreamClass::Gates);
        for _ in 0..10 {
            let u = sample_haar_unitary(&mut rng, 1);
            assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_is_unitary() {
        let mut rng = RngStream::new(2, 5).rng(StreamClass::Gates);
        for d in [2, 3, 4, 9] {
            for _ in 0..50 {
                let u = sample_haar_unitary(&mut rng, d);
                assert!(unitarity_defect(&u) < 1e-12);
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = RngStream::new(7, 3);
        let u1 = sample_haar_unitary(&mut a.rng(StreamClass::Gates), 4);
        let u2 = sample_haar_unitary(&mut a.rng(StreamClass::Gates), 4);
        assert_eq!(u1, u2);
        let u3 = sample_haar_unitary(&mut RngStream::new(7, 4).rng(StreamClass::Gates), 4);
        assert_ne!(u1, u3);
        let u4 = sample_haar_unitary(&mut a.rng(StreamClass::Tensors), 4);
        assert_ne!(u1, u4);
    }

    /// Haar moment E|U_00|^2 = 1/d, checked against a Monte Carlo mean with
    /// its own standard error.
    #[test]
    fn haar_first_moment() {
        let mut rng = RngStream::new(11, 0).rng(StreamClass::Gates);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_haar_unitary(&mut rng, 2)[(0, 0)].norm_sqr())
            .collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean - 0.5).abs() < 5.0 * se, "mean {mean} se {se}");
    }

    /// Left-multiplying by a fixed unitary leaves the |U_00|^2 moment
    /// unchanged within Monte Carlo error.
    #[test]
    fn haar_left_invariance_of_moment() {
        let mut rng = RngStream::new(12, 0).rng(StreamClass::Gates);
        let v = sample_haar_unitary(&mut rng, 3);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| (&v * sample_haar_unitary(&mut rng, 3))[(0, 0)].norm_sqr())
            .collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean - 1.0 / 3.0).abs() < 5.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn gaussian_tensor_moments() {
        let mut rng = RngStream::new(3, 0).rng(StreamClass::Tensors);
        let t = sample_gaussian_tensor(&mut rng, &[2, 2, 5, 5000]);
        assert_eq!(t.len(), 100_000);
        let re: Vec<f64> = t.iter().map(|z| z.re).collect();
        let im: Vec<f64> = t.iter().map(|z| z.im).collect();
        let abs2: Vec<f64> = t.iter().map(|z| z.norm_sqr()).collect();
        for xs in [&re, &im] {
            let (m, se) = mean_and_se(xs);
            assert!(m.abs() < 5.0 * se);
        }
        let (m, se) = mean_and_se(&abs2);
        assert!((m - 1.0).abs() < 5.0 * se, "E|T|^2 = {m}");
        // E[T*_mu T_nu] for mu != nu, using disjoint neighbouring pairs
        let cross: Vec<C64> = t.chunks(2).map(|c| c[0].conj() * c[1]).collect();
        let cre: Vec<f64> = cross.iter().map(|z| z.re).collect();
        let cim: Vec<f64> = cross.iter().map(|z| z.im).collect();
        for xs in [&cre, &cim] {
            let (m, se) = mean_and_se(xs);
            assert!(m.abs() < 5.0 * se);
        }
    }

    #[test]
    fn renyi_of_flat_spectrum() {
        let spec = [0.25; 4];
        for n in 1..6 {
            assert!((renyi_of_spectrum(&spec, n) - 4f64.ln()).abs() < 1e-12);
        }
        assert_eq!(renyi_of_spectrum(&[1.0, 0.0], 1), 0.0);
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}
