//! Reference implementations shared by the integration targets.
#![allow(dead_code)]

use num_complex::Complex64 as C64;
use postsel::circuit::{self, Parity, Protocol, SiteAction};
use postsel::linalg::{ComplexMatrix, RngStream};
use postsel::probes::Probe;
use postsel::rtn::{RtnConfig, RtnMode, TensorEnsemble};

pub fn digits(mut idx: usize, d: usize, sites: usize) -> Vec<usize> {
    let mut out = vec![0; sites];
    for s in (0..sites).rev() {
        out[s] = idx % d;
        idx /= d;
    }
    out
}

pub fn index(digits: &[usize], d: usize) -> usize { digits.iter().fold(0, |acc, &x| acc * d + x) }

/// `psi <- G psi` on sites `(i, j)` by direct summation over basis states.
pub fn dense_pair(psi: &[C64], d: usize, sites: usize, i: usize, j: usize, g: &ComplexMatrix) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for (idx, a) in psi.iter().enumerate() {
        let x = digits(idx, d, sites);
        for yi in 0..d {
            for yj in 0..d {
                let mut y = x.clone();
                y[i] = yi;
                y[j] = yj;
                out[index(&y, d)] += g[(yi * d + yj, x[i] * d + x[j])] * a;
            }
        }
    }
    out
}

pub fn dense_site(psi: &[C64], d: usize, sites: usize, s: usize, k: &ComplexMatrix) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for (idx, a) in psi.iter().enumerate() {
        let x = digits(idx, d, sites);
        for ys in 0..d {
            let mut y = x.clone();
            y[s] = ys;
            out[index(&y, d)] += k[(ys, x[s])] * a;
        }
    }
    out
}

pub fn norm_sqr(psi: &[C64]) -> f64 { psi.iter().map(|a| a.norm_sqr()).sum() }

pub fn rtn_cfg(l: usize, steps: usize, d: usize, chi: f64, seed: u64, ensemble: TensorEnsemble) -> RtnConfig {
    RtnConfig {
        sites: l,
        steps,
        bond_dim: d,
        chi,
        stream: RngStream::new(seed, 3),
        mode: RtnMode::Random,
        ensemble,
        snapshot_times: vec![steps],
        probes: vec![Probe::HalfCut { renyi: 1 }],
    }
}

/// Contracts the L = 4, t = 2 network edge by edge. With a diagonal edge
/// state every bond carries one index and one factor `lambda_k`.
pub fn brute_force_network(tensors: &[ComplexMatrix], lambda: &[f64], d: usize) -> Vec<C64> {
    let l = 4;
    let half_layers = 4;
    // segment h of site s is the bond entering that site's h-th vertex;
    // segment 0 is the initial |0>, segment `half_layers` the physical output
    let layers: Vec<Vec<(usize, usize)>> = (0..half_layers)
        .map(|h| circuit::brickwork_pairs(l, if h % 2 == 0 { Parity::Even } else { Parity::Odd }))
        .collect();
    let internal = l * (half_layers - 1);
    let mut psi = vec![C64::new(0.0, 0.0); d.pow(l as u32)];
    for out in 0..d.pow(l as u32) {
        let phys = digits(out, d, l);
        for bonds in 0..d.pow(internal as u32) {
            let b = digits(bonds, d, internal);
            let seg = |s: usize, h: usize| -> usize {
                if h == 0 {
                    0
                } else if h == half_layers {
                    phys[s]
                } else {
                    b[s * (half_layers - 1) + h - 1]
                }
            };
            let mut amp = C64::new(1.0, 0.0);
            let mut v = 0;
            for (h, pairs) in layers.iter().enumerate() {
                for &(a, c) in pairs {
                    let t = &tensors[v];
                    v += 1;
                    amp *= t[(seg(a, h + 1) * d + seg(c, h + 1), seg(a, h) * d + seg(c, h))];
                }
            }
            for s in 0..l {
                for h in 0..=half_layers {
                    amp *= lambda[seg(s, h)];
                }
            }
            psi[out] += amp;
        }
    }
    psi
}


/// Replays a protocol on an unnormalized dense vector.
pub fn unnormalized_log_z(protocol: &mut dyn Protocol, d: usize, l: usize, steps: usize) -> f64 {
    let mut psi = vec![C64::new(0.0, 0.0); d.pow(l as u32)];
    psi[0] = C64::new(1.0, 0.0);
    for _ in 0..steps {
        for parity in [Parity::Even, Parity::Odd] {
            let layer = protocol.layer(parity, l);
            for (i, j, g) in &layer.gates {
                psi = dense_pair(&psi, d, l, *i, *j, g);
            }
            for (s, action) in &layer.site_actions {
                match action {
                    SiteAction::Kraus(k) => psi = dense_site(&psi, d, l, *s, k),
                    SiteAction::Born => panic!("forced protocols only"),
                }
            }
        }
    }
    norm_sqr(&psi).ln()
}
