//! Dense symmetric linear algebra: Cholesky factorization, log-determinant,
//! positive definite inverse, spectral norm, elementwise norms.
//!
//! Design:
//! - Packed lower-triangle storage, one slot per unordered index pair, so
//!   symmetry holds by construction and cannot drift.
//! - Positive definiteness is decided by the Cholesky pivots against a
//!   scale-invariant threshold `dim * eps * max|A|`.
//! - The spectral norm runs power iteration on A*A (sign-proof) from a
//!   deterministic start, with a second deflated start as fallback in case
//!   the first start is orthogonal to the dominant eigenvector.

use crate::{Error, Result};

/// Dense symmetric matrix. `get(i, j) == get(j, i)` because both read the
/// same slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    /// Packed rows of the lower triangle: (0,0), (1,0), (1,1), (2,0), ...
    data: Vec<f64>,
}

#[inline]
fn slot(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        SymMatrix {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from full square rows. The two copies of each off-diagonal pair
    /// are averaged; asymmetry beyond `1e-8 * (1 + max|entry|)` is rejected.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if p == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: row.len() });
            }
        }
        let max_abs = rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let tol = 1e-8 * (1.0 + max_abs);
        let mut m = Self::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                if (rows[i][j] - rows[j][i]).abs() > tol {
                    return Err(Error::NotSymmetric { i, j });
                }
                m.set(i, j, 0.5 * (rows[i][j] + rows[j][i]));
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.dim && j < self.dim);
        self.data[slot(i, j)]
    }

    /// Writes the single slot shared by (i, j) and (j, i).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.dim && j < self.dim);
        self.data[slot(i, j)] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// x' A y.
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let ax = self.matvec(y);
        x.iter().zip(ax.iter()).map(|(a, b)| a * b).sum()
    }

    /// Entrywise difference; dimensions must match.
    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        out
    }

    /// Adds `c` to every diagonal entry.
    pub fn add_diag(&mut self, c: f64) {
        for i in 0..self.dim {
            let v = self.get(i, i);
            self.set(i, i, v + c);
        }
    }

    /// Entrywise scaling by `c`.
    pub fn scaled(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= c;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Frobenius norm over all p^2 positions (off-diagonal slots count twice).
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let v = self.get(i, j);
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    /// (Frobenius norm, max absolute entry).
    pub fn norms(&self) -> (f64, f64) {
        (self.frobenius_norm(), self.max_abs())
    }

    /// A B A for symmetric A = self, B = other. Used for the curvature
    /// matrix U = Omega S Omega.
    pub fn sandwich(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim);
        let p = self.dim;
        // m = self * other, dense row-major
        let mut m = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += self.get(i, k) * other.get(k, j);
                }
                m[i * p + j] = acc;
            }
        }
        // out = m * self; symmetric in exact arithmetic, read lower triangle
        let mut out = SymMatrix::zeros(p);
        for i in 0..p {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += m[i * p + k] * self.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Lower Cholesky factor. Fails with [`Error::NotPositiveDefinite`] when
    /// a pivot drops to `dim * eps * max|A|` or below.
    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        let p = self.dim;
        let threshold = p as f64 * f64::EPSILON * self.max_abs();
        let mut lower = vec![0.0; p * (p + 1) / 2];
        for i in 0..p {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= lower[slot(i, k)] * lower[slot(j, k)];
                }
                if i == j {
                    if sum <= threshold {
                        return Err(Error::NotPositiveDefinite);
                    }
                    lower[slot(i, i)] = sum.sqrt();
                } else {
                    lower[slot(i, j)] = sum / lower[slot(j, j)];
                }
            }
        }
        Ok(CholeskyFactor { dim: p, lower })
    }

    /// Inverse through the Cholesky factor; the input must be positive
    /// definite.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        Ok(self.cholesky()?.inverse())
    }

    /// Largest absolute eigenvalue by power iteration on A*A. Runs a second,
    /// deflated start vector and keeps the larger estimate, covering the case
    /// where the all-ones start is orthogonal to the dominant eigenvector.
    pub fn spectral_norm(&self, tol: f64, max_iter: usize) -> SpectralEstimate {
        assert!(tol > 0.0);
        let p = self.dim;
        let start = vec![1.0 / (p as f64).sqrt(); p];
        let first = self.power_iter_sq(start, tol, max_iter);

        // Deflated second start: the coordinate axis least aligned with the
        // first limit vector, projected off it.
        let k = (0..p)
            .min_by(|&a, &b| {
                first.vector[a]
                    .abs()
                    .partial_cmp(&first.vector[b].abs())
                    .unwrap()
            })
            .unwrap();
        let mut start2 = vec![0.0; p];
        start2[k] = 1.0;
        let dot = first.vector[k];
        for (s, v) in start2.iter_mut().zip(first.vector.iter()) {
            *s -= dot * v;
        }
        let n2: f64 = start2.iter().map(|v| v * v).sum::<f64>().sqrt();
        let best = if n2 > 1e-12 {
            for s in start2.iter_mut() {
                *s /= n2;
            }
            let second = self.power_iter_sq(start2, tol, max_iter);
            if second.sq_value > first.sq_value {
                second
            } else {
                first
            }
        } else {
            first
        };
        SpectralEstimate {
            value: best.sq_value.sqrt(),
            converged: best.converged,
            iterations: best.iterations,
        }
    }

    /// (smallest, largest) eigenvalue estimates. With s = ||A||_2 both
    /// A + sI and sI - A are positive semidefinite, and their top
    /// eigenvalues are lambda_max + s and s - lambda_min; power iteration
    /// handles each.
    pub fn eigen_extremes(&self, tol: f64, max_iter: usize) -> (f64, f64) {
        let s = self.spectral_norm(tol, max_iter).value;
        let mut up = self.clone();
        up.add_diag(s);
        let lmax = up.spectral_norm(tol, max_iter).value - s;
        let mut down = self.scaled(-1.0);
        down.add_diag(s);
        let lmin = s - down.spectral_norm(tol, max_iter).value;
        (lmin, lmax)
    }

    fn power_iter_sq(&self, mut v: Vec<f64>, tol: f64, max_iter: usize) -> PowerRun {
        let mut mu_prev = f64::NAN;
        for it in 1..=max_iter {
            let w = self.matvec(&v);
            let nu: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mu = nu * nu; // Rayleigh quotient of A*A at unit v
            if nu < 1e-300 {
                return PowerRun {
                    sq_value: 0.0,
                    vector: v,
                    converged: true,
                    iterations: it,
                };
            }
            if !mu_prev.is_nan() && (mu - mu_prev).abs() <= tol * mu {
                return PowerRun {
                    sq_value: mu,
                    vector: v,
                    converged: true,
                    iterations: it,
                };
            }
            mu_prev = mu;
            let y = self.matvec(&w); // A*A v
            let ny: f64 = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = y.into_iter().map(|x| x / ny).collect();
        }
        PowerRun {
            sq_value: mu_prev,
            vector: v,
            converged: false,
            iterations: max_iter,
        }
    }
}

struct PowerRun {
    sq_value: f64,
    vector: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Power-iteration result. `converged == false` means `value` is the best
/// estimate after `iterations` steps, not a hard failure.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Lower Cholesky factor of a positive definite matrix; all diagonal entries
/// strictly positive.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    /// Packed rows, same layout as [`SymMatrix`].
    lower: Vec<f64>,
}

impl CholeskyFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry of L; zero above the diagonal.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.lower[slot(i, j)]
        }
    }

    /// log det A = 2 sum_i log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[slot(i, i)].ln())
            .sum::<f64>()
            * 2.0
    }

    /// Solves A x = b via forward and back substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let p = self.dim;
        let mut y = b.to_vec();
        for i in 0..p {
            for k in 0..i {
                y[i] -= self.lower[slot(i, k)] * y[k];
            }
            y[i] /= self.lower[slot(i, i)];
        }
        for i in (0..p).rev() {
            for k in (i + 1)..p {
                y[i] -= self.lower[slot(k, i)] * y[k];
            }
            y[i] /= self.lower[slot(i, i)];
        }
        y
    }

    /// A^{-1}, column by column.
    pub fn inverse(&self) -> SymMatrix {
        let p = self.dim;
        let mut out = SymMatrix::zeros(p);
        let mut e = vec![0.0; p];
        for j in 0..p {
            e[j] = 1.0;
            let x = self.solve(&e);
            e[j] = 0.0;
            for i in j..p {
                out.set(i, j, x[i]);
            }
        }
        out
    }
}
