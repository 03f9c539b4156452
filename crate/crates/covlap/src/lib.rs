//! Bayesian sparse covariance estimation under a point-mass spike-and-slab prior.
//!
//! The posterior over covariance graph structures is explored by a
//! Metropolis-Hastings chain whose stationary weights come from a Laplace
//! approximation around the conditional posterior mode; the mode itself is
//! found by block coordinate descent. The crate also ships the synthetic
//! covariance models, evaluation metrics, and the LDA experiment used to
//! benchmark the estimator against the raw sample covariance.
//!
//! Modules, bottom up:
//! - [`symmat`]: dense symmetric linear algebra (Cholesky, inverse, norms).
//! - [`objective`]: hyperparameters, edge sets, the penalized objective.
//! - [`bcd`]: block coordinate descent for the conditional posterior mode.
//! - [`laplace`]: analytic Hessian and approximated log model probability.
//! - [`sampler`]: the structure chain, MPM/MAP selection, end-to-end fits.
//! - [`simbench`]: synthetic models, metrics, replication benchmarks.
//! - [`lda`]: linear discriminant analysis on an estimated covariance.
//! - [`cli`]: command-line wiring and file formats.

pub mod bcd;
pub mod cli;
pub mod laplace;
pub mod lda;
pub mod objective;
pub mod sampler;
pub mod simbench;
pub mod symmat;

mod stream;

/// Crate-wide error type. Numerical infeasibility (a matrix leaving the
/// positive definite cone, a nonpositive quadratic coefficient) is reported
/// through dedicated variants so callers can distinguish "this model is
/// infeasible" from genuine misuse.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric at ({i},{j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("entry ({i},{j}) is constrained to zero by the structure but holds {value:e}")]
    StructureViolation { i: usize, j: usize, value: f64 },
    #[error("quadratic coefficient u = {0} is not positive")]
    NonpositiveU(f64),
    #[error("covariance model generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("class {class} has {available} rows, {requested} requested")]
    InsufficientClassCount { class: u8, requested: usize, available: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("line {line}: {message}")]
    InvalidData { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
