//! Prior hyperparameters, edge-inclusion structures, and the penalized
//! negative log-likelihood objective r_Z that the solver minimizes and the
//! model probabilities integrate.
//!
//! For a covariance Sigma respecting structure Z (excluded off-diagonals
//! exactly zero),
//!
//!   r_Z(Sigma) = log|Sigma| + tr(S Sigma^-1) + penalty(Sigma, Z)
//!   penalty    = 1/(n v^2) sum_{z_ij = 1} sigma_ij^2 + lambda/n sum_i sigma_ii
//!
//! with each unordered pair counted once.

use crate::symmat::SymMatrix;
use crate::{Error, Result};

/// Excluded entries may carry round-off this large and still count as zero;
/// anything bigger is a structure violation.
pub const STRUCTURE_TOLERANCE: f64 = 1e-12;

/// Prior constants and solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Edge inclusion probability, in (0, 1).
    pub q: f64,
    /// Slab standard deviation of included off-diagonal entries.
    pub v: f64,
    /// Diagonal exponential prior rate, times-two convention: the density is
    /// proportional to exp(-lambda sigma_ii / 2).
    pub lambda: f64,
    /// Entries at or below this magnitude count as zero in structure metrics.
    pub zero_threshold: f64,
    /// Frobenius change between sweeps that stops coordinate descent.
    pub bcd_tol: f64,
    pub bcd_max_iter: usize,
}

impl Hyperparams {
    /// Defaults with the edge probability resolved for dimension `p`:
    /// q = log(p)/p^2. A 1-dimensional problem has no edges, so p = 1 reuses
    /// the p = 2 value to keep q inside (0, 1).
    pub fn for_dim(p: usize) -> Self {
        let pe = p.max(2) as f64;
        Hyperparams {
            q: pe.ln() / (pe * pe),
            v: 1.0,
            lambda: 1.0,
            zero_threshold: 0.001,
            bcd_tol: 1e-6,
            bcd_max_iter: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidConfig(format!("q = {} not in (0,1)", self.q)));
        }
        if !(self.v > 0.0) {
            return Err(Error::InvalidConfig(format!("v = {} not positive", self.v)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda = {} not positive",
                self.lambda
            )));
        }
        if !(self.zero_threshold >= 0.0) {
            return Err(Error::InvalidConfig("zero_threshold negative".into()));
        }
        if !(self.bcd_tol > 0.0) {
            return Err(Error::InvalidConfig("bcd_tol not positive".into()));
        }
        if self.bcd_max_iter == 0 {
            return Err(Error::InvalidConfig("bcd_max_iter is zero".into()));
        }
        Ok(())
    }
}

/// Number of unordered off-diagonal pairs in dimension `p`.
pub fn pair_count(p: usize) -> usize {
    p * (p - 1) / 2
}

/// Canonical bit position of pair (i, j), i < j: (0,1), (0,2), ...,
/// (0,p-1), (1,2), ...
pub fn pair_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < p);
    i * (2 * p - i - 1) / 2 + (j - i - 1)
}

/// Pair at bit position `k`; inverse of [`pair_index`].
pub fn pair_at(p: usize, mut k: usize) -> (usize, usize) {
    debug_assert!(k < pair_count(p));
    let mut i = 0;
    while k >= p - 1 - i {
        k -= p - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Which off-diagonal entries are allowed to be nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeSet {
    dim: usize,
    bits: Vec<bool>,
}

impl EdgeSet {
    pub fn empty(dim: usize) -> Self {
        assert!(dim >= 1);
        EdgeSet {
            dim,
            bits: vec![false; pair_count(dim)],
        }
    }

    pub fn full(dim: usize) -> Self {
        assert!(dim >= 1);
        EdgeSet {
            dim,
            bits: vec![true; pair_count(dim)],
        }
    }

    pub fn from_bits(dim: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != pair_count(dim) {
            return Err(Error::DimensionMismatch {
                expected: pair_count(dim),
                got: bits.len(),
            });
        }
        Ok(EdgeSet { dim, bits })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of included edges (#Z).
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[pair_index(self.dim, i.min(j), i.max(j))]
    }

    pub fn set_pair(&mut self, i: usize, j: usize, on: bool) {
        let k = pair_index(self.dim, i.min(j), i.max(j));
        self.bits[k] = on;
    }

    #[inline]
    pub fn bit(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn flip_bit(&mut self, k: usize) {
        self.bits[k] = !self.bits[k];
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Included pairs (i, j), i < j, in canonical order.
    pub fn included_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.dim;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| pair_at(p, k))
    }

    /// Relabels variables: pair (i, j) moves to (perm[i], perm[j]).
    pub fn permuted(&self, perm: &[usize]) -> EdgeSet {
        assert_eq!(perm.len(), self.dim);
        let mut out = EdgeSet::empty(self.dim);
        for (i, j) in self.included_pairs() {
            out.set_pair(perm[i], perm[j], true);
        }
        out
    }
}

/// The prior-induced penalty: slab quadratic over included pairs plus the
/// exponential pull on the diagonal.
pub fn penalty(sigma: &SymMatrix, z: &EdgeSet, h: &Hyperparams, n: usize) -> Result<f64> {
    if sigma.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.dim(),
            got: sigma.dim(),
        });
    }
    let nf = n as f64;
    let mut slab = 0.0;
    for (i, j) in z.included_pairs() {
        slab += sigma.get(i, j).powi(2);
    }
    let trace: f64 = (0..sigma.dim()).map(|i| sigma.get(i, i)).sum();
    Ok(slab / (nf * h.v * h.v) + h.lambda * trace / nf)
}

/// r_Z(Sigma) = log|Sigma| + tr(S Sigma^-1) + penalty. Sigma must be
/// positive definite and respect Z.
pub fn objective_r(
    sigma: &SymMatrix,
    z: &EdgeSet,
    s: &SymMatrix,
    h: &Hyperparams,
    n: usize,
) -> Result<f64> {
    let p = sigma.dim();
    if s.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: s.dim() });
    }
    if z.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: z.dim() });
    }
    for i in 0..p {
        for j in (i + 1)..p {
            if !z.contains(i, j) && sigma.get(i, j).abs() > STRUCTURE_TOLERANCE {
                return Err(Error::StructureViolation { i, j, value: sigma.get(i, j) });
            }
        }
    }
    let factor = sigma.cholesky()?;
    let log_det = factor.log_det();
    let omega = factor.inverse();
    let mut trace = 0.0;
    for i in 0..p {
        trace += s.get(i, i) * omega.get(i, i);
        for j in (i + 1)..p {
            trace += 2.0 * s.get(i, j) * omega.get(i, j);
        }
    }
    Ok(log_det + trace + penalty(sigma, z, h, n)?)
}

/// #Z * log( q / ((1-q) sqrt(2 pi) v) ), the structure-size factor of the
/// unnormalized model probability.
pub fn log_edge_factor(z: &EdgeSet, h: &Hyperparams) -> f64 {
    let tau = (2.0 * std::f64::consts::PI).sqrt();
    z.count() as f64 * (h.q / ((1.0 - h.q) * tau * h.v)).ln()
}
