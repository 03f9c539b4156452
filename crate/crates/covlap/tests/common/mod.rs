//! Shared oracles for the acceptance suite: an independent full-space
//! Newton minimizer built on finite differences, Simpson quadrature for
//! the exact model evidence at p <= 2, and random problem generators.
#![allow(dead_code)]

use covlap::bcd;
use covlap::laplace::{analytic_hessian, fd_hessian};
use covlap::objective::{objective_r, EdgeSet, Hyperparams};
use covlap::symmat::SymMatrix;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random well-conditioned PD matrix: M M' / p plus a positive diagonal.
pub fn random_pd(p: usize, rng: &mut impl Rng) -> SymMatrix {
    let entries: Vec<Vec<f64>> =
        (0..p).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut s = SymMatrix::zeros(p);
    for i in 0..p {
        for j in 0..=i {
            let dot: f64 = (0..p).map(|k| entries[i][k] * entries[j][k]).sum();
            s.set(i, j, dot / p as f64);
        }
    }
    s.add_diag(rng.gen_range(0.3..1.0));
    s
}

pub fn random_edges(p: usize, density: f64, rng: &mut impl Rng) -> EdgeSet {
    let mut z = EdgeSet::empty(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.gen_bool(density) {
                z.set_pair(i, j, true);
            }
        }
    }
    z
}

/// Permuted matrix: out(a, b) = m(perm[a], perm[b]).
pub fn permute_matrix(m: &SymMatrix, perm: &[usize]) -> SymMatrix {
    let p = m.dim();
    let mut out = SymMatrix::zeros(p);
    for a in 0..p {
        for b in 0..=a {
            out.set(a, b, m.get(perm[a], perm[b]));
        }
    }
    out
}

/// Free coordinates in canonical order: all diagonals, then included pairs.
pub fn free_coords(p: usize, z: &EdgeSet) -> Vec<(usize, usize)> {
    let mut coords: Vec<(usize, usize)> = (0..p).map(|i| (i, i)).collect();
    coords.extend(z.included_pairs());
    coords
}

fn eval_or_inf(
    m: &SymMatrix,
    z: &EdgeSet,
    s: &SymMatrix,
    h: &Hyperparams,
    n: usize,
) -> f64 {
    objective_r(m, z, s, h, n).unwrap_or(f64::INFINITY)
}

fn apply_step(base: &SymMatrix, coords: &[(usize, usize)], delta: &[f64], t: f64) -> SymMatrix {
    let mut m = base.clone();
    for (&(i, j), &d) in coords.iter().zip(delta) {
        m.set(i, j, m.get(i, j) + t * d);
    }
    m
}

/// Full-space damped Newton minimizer of the structured objective over the
/// free coordinates, with central-difference gradient and the
/// finite-difference Hessian. Independent of the coordinate-descent solver:
/// same starting point, entirely different iteration. Panics if it cannot
/// push the gradient below tolerance; returns the minimizer.
pub fn newton_minimize(s: &SymMatrix, z: &EdgeSet, h: &Hyperparams, n: usize) -> SymMatrix {
    let p = s.dim();
    let coords = free_coords(p, z);
    let dims = coords.len();
    let rho = h.lambda / n as f64;

    let mut x = SymMatrix::zeros(p);
    for i in 0..p {
        x.set(i, i, s.get(i, i) + rho);
    }

    let mut f = eval_or_inf(&x, z, s, h, n);
    assert!(f.is_finite(), "diagonal start must be feasible");

    for _iter in 0..200 {
        let scale = x.max_abs().max(1.0);
        // Wide enough that roundoff in f (about eps * |f| / dg) stays two
        // orders below the stop tolerance; truncation is O(dg^2), smaller.
        let dg = 1e-6 * scale;
        let mut grad = vec![0.0; dims];
        let mut gnorm: f64 = 0.0;
        for (k, &(i, j)) in coords.iter().enumerate() {
            let mut plus = x.clone();
            plus.set(i, j, plus.get(i, j) + dg);
            let mut minus = x.clone();
            minus.set(i, j, minus.get(i, j) - dg);
            let fp = eval_or_inf(&plus, z, s, h, n);
            let fm = eval_or_inf(&minus, z, s, h, n);
            assert!(fp.is_finite() && fm.is_finite(), "gradient probe left the PD cone");
            grad[k] = (fp - fm) / (2.0 * dg);
            gnorm = gnorm.max(grad[k].abs());
        }
        if gnorm <= 1e-8 * (1.0 + f.abs()) {
            return x;
        }

        // Newton direction when the local curvature cooperates, otherwise
        // steepest descent
        let step = 1e-5 * scale;
        let direction = match fd_hessian(&x, s, z, h, n, step) {
            Ok(hess) => match hess.mat.cholesky() {
                Ok(factor) => {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    factor.solve(&neg)
                }
                Err(_) => grad.iter().map(|g| -g).collect(),
            },
            Err(_) => grad.iter().map(|g| -g).collect(),
        };
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        let dir = if slope < 0.0 {
            direction
        } else {
            grad.iter().map(|g| -g).collect::<Vec<f64>>()
        };
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let mut t = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let cand = apply_step(&x, &coords, &dir, t);
            let fc = eval_or_inf(&cand, z, s, h, n);
            if fc <= f + 1e-4 * t * slope {
                x = cand;
                f = fc;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if !advanced {
            // Progress has hit floating-point granularity; the gradient
            // itself decides whether this point qualifies as the minimizer.
            assert!(
                gnorm <= 1e-6 * (1.0 + f.abs()),
                "line search stalled with gradient {gnorm} at objective {f}"
            );
            return x;
        }
    }
    panic!("newton minimizer did not converge");
}

// ---- quadrature ----

/// log of the composite-Simpson integral of exp(log_f) over [lo, hi] with
/// `panels` panels (even).
pub fn simpson_log_1d(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    assert!(panels >= 2 && panels % 2 == 0);
    let hstep = (hi - lo) / panels as f64;
    let values: Vec<f64> = (0..=panels).map(|k| log_f(lo + k as f64 * hstep)).collect();
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(m.is_finite(), "integrand vanished everywhere on the grid");
    // grid must straddle the mass: both ends negligible next to the peak
    assert!(values[0] - m < -30.0, "left endpoint carries weight: {}", values[0] - m);
    assert!(values[panels] - m < -30.0, "right endpoint carries weight");
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        let w = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (v - m).exp();
    }
    m + (acc * hstep / 3.0).ln()
}

/// One-variable evidence factor: log Int_0^inf exp(-(n/2)(ln t + s/t)
/// - (lambda/2) t) dt, integrated in log space around the mode.
pub fn log_evidence_univariate(s11: f64, lambda: f64, n: usize) -> f64 {
    let rho = lambda / n as f64;
    let mode = bcd::gamma_hat(s11, rho).unwrap();
    let t_star = mode.ln();
    let half = 1.0f64.max(30.0 * (2.0 / n as f64).sqrt());
    let nf = n as f64;
    simpson_log_1d(
        |t| {
            let sig = t.exp();
            -0.5 * nf * (t + s11 / sig + rho * sig) + t
        },
        t_star - half,
        t_star + half,
        4000,
    )
}

/// Bivariate evidence for the saturated structure: log of the integral of
/// exp(-(n/2) r(Sigma)) over {sigma11 > 0, sigma22 > 0, sigma12^2 <
/// sigma11 sigma22}, with the diagonal in log coordinates. The grid is
/// centered on the coordinate-descent mode and sized by the analytic
/// curvature there.
pub fn log_evidence_bivariate_full(s: &SymMatrix, h: &Hyperparams, n: usize) -> f64 {
    assert_eq!(s.dim(), 2);
    let z = EdgeSet::full(2);
    let mode = bcd::solve(s, &z, h, n).unwrap().sigma;
    let hess = analytic_hessian(&mode, s, &z, n, h.v).unwrap();
    // index_map order: (0,0), (1,1), (0,1)
    let nf = n as f64;
    let sd = |k: usize| (2.0 / (nf * hess.mat.get(k, k))).sqrt();

    let (m11, m22, m12) = (mode.get(0, 0), mode.get(1, 1), mode.get(0, 1));
    let (s11, s22, s12) = (s.get(0, 0), s.get(1, 1), s.get(0, 1));
    let rho = h.lambda / nf;
    let slab = 1.0 / (nf * h.v * h.v);

    // log-space half-widths for the diagonals, linear for the off-diagonal
    let h1 = 1.0f64.max(14.0 * sd(0) / m11);
    let h2 = 1.0f64.max(14.0 * sd(1) / m22);
    let h3 = (14.0 * sd(2)).max(0.5 * (m11 * m22).sqrt());

    let panels = 160;
    let log_f = |t1: f64, t2: f64, y: f64| -> f64 {
        let a = t1.exp();
        let b = t2.exp();
        let det = a * b - y * y;
        if det <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let trace = (s11 * b - 2.0 * s12 * y + s22 * a) / det;
        let r = det.ln() + trace + slab * y * y + rho * (a + b);
        -0.5 * nf * r + t1 + t2
    };

    let weight = |k: usize| -> f64 {
        if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };

    let (lo1, lo2, lo3) = (m11.ln() - h1, m22.ln() - h2, m12 - h3);
    let (d1, d2, d3) = (
        2.0 * h1 / panels as f64,
        2.0 * h2 / panels as f64,
        2.0 * h3 / panels as f64,
    );

    let peak = log_f(m11.ln(), m22.ln(), m12);
    assert!(peak.is_finite());
    let mut acc = 0.0f64;
    let mut boundary_max = f64::NEG_INFINITY;
    for k1 in 0..=panels {
        let t1 = lo1 + k1 as f64 * d1;
        for k2 in 0..=panels {
            let t2 = lo2 + k2 as f64 * d2;
            for k3 in 0..=panels {
                let y = lo3 + k3 as f64 * d3;
                let v = log_f(t1, t2, y);
                if v == f64::NEG_INFINITY {
                    continue;
                }
                if k1 == 0 || k1 == panels || k2 == 0 || k2 == panels {
                    boundary_max = boundary_max.max(v);
                }
                acc += weight(k1) * weight(k2) * weight(k3) * (v - peak).exp();
            }
        }
    }
    // the box must contain the mass (the y faces may touch the natural
    // PD boundary where the integrand already vanishes)
    assert!(
        boundary_max - peak < -25.0,
        "integration box too small: boundary at {}",
        boundary_max - peak
    );
    peak + (acc * d1 * d2 * d3 / 27.0).ln()
}

/// Total variation distance between two distributions on the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
