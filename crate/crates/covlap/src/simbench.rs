//! Synthetic covariance models, Gaussian sampling, evaluation metrics, and
//! the seeded replication benchmark harness.
//!
//! The truth covariance is generated once per (model, p, seed) and held
//! fixed; replication r draws fresh data from the stream `seed XOR r` and
//! runs each requested estimator. Replications are independent and fan out
//! across threads when the `parallel` feature is on; reports aggregate in
//! replication order either way, so the output bytes do not depend on the
//! schedule.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::objective::{EdgeSet, Hyperparams};
use crate::sampler::{mh_run, select_map, select_mpm, ChainConfig};
use crate::stream::{stage_seed, TAG_CHAIN, TAG_DATA, TAG_TRUTH};
use crate::symmat::SymMatrix;
use crate::{bcd, Error, Result};

/// One benchmark scenario: which synthetic model, its dimensions, and the
/// base seed all streams derive from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: u8,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.model_id) {
            return Err(Error::InvalidConfig(format!(
                "model {} not in 1..=5",
                self.model_id
            )));
        }
        if self.p < 2 || self.n < 2 {
            return Err(Error::InvalidConfig("need p >= 2 and n >= 2".into()));
        }
        Ok(())
    }
}

/// Diagonal shift c with cond(O + cI) = p exactly:
/// (lmax + c)/(lmin + c) = p  =>  c = (lmax - p lmin)/(p - 1).
/// None when the shifted matrix would not be safely positive definite
/// (possible only for O with equal extreme eigenvalues, e.g. all zeros).
fn condition_shift(o: &SymMatrix) -> Option<f64> {
    let p = o.dim() as f64;
    let (lmin, lmax) = o.eigen_extremes(1e-12, 50_000);
    let c = (lmax - p * lmin) / (p - 1.0);
    if lmin + c <= 1e-10 * lmax.abs().max(1.0) {
        None
    } else {
        Some(c)
    }
}

/// Generates the truth covariance for `spec`. Models 3-5 are deterministic;
/// models 1-2 draw their sparsity pattern from `rng`. The result is always
/// positive definite.
pub fn gen_model(spec: &ModelSpec, rng: &mut impl Rng) -> Result<SymMatrix> {
    spec.validate()?;
    let p = spec.p;
    match spec.model_id {
        // sparse random signs, diagonal lifted so cond = p
        1 => {
            const ATTEMPTS: usize = 100;
            for _ in 0..ATTEMPTS {
                let mut o = SymMatrix::zeros(p);
                for i in 0..p {
                    for j in (i + 1)..p {
                        if rng.gen_bool(0.02) {
                            o.set(i, j, if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
                        }
                    }
                }
                if let Some(c) = condition_shift(&o) {
                    o.add_diag(c);
                    if o.cholesky().is_ok() {
                        return Ok(o);
                    }
                }
            }
            Err(Error::GenerationFailed { attempts: ATTEMPTS })
        }
        // dense-ish Bernoulli halves, normalized to unit diagonal
        2 => {
            let mut b = SymMatrix::identity(p);
            for i in 0..p {
                for j in (i + 1)..p {
                    if rng.gen_bool(0.2) {
                        b.set(i, j, 0.5);
                    }
                }
            }
            let (lmin, _) = b.eigen_extremes(1e-12, 50_000);
            let delta = (-lmin).max(0.0) + 0.05;
            b.add_diag(delta);
            let sigma = b.scaled(1.0 / (1.0 + delta));
            sigma.cholesky()?;
            Ok(sigma)
        }
        // first-order moving average band, diagonal lifted so cond = p
        3 => {
            let mut o = SymMatrix::zeros(p);
            for i in 0..p - 1 {
                o.set(i, i + 1, 0.4);
            }
            let c = condition_shift(&o).ok_or(Error::GenerationFailed { attempts: 1 })?;
            o.add_diag(c);
            o.cholesky()?;
            Ok(o)
        }
        // second-order moving average band
        4 => {
            let mut o = SymMatrix::identity(p);
            for i in 0..p - 1 {
                o.set(i, i + 1, 0.5);
            }
            for i in 0..p.saturating_sub(2) {
                o.set(i, i + 2, 0.25);
            }
            o.cholesky()?;
            Ok(o)
        }
        // inverse of the 0.75-Toeplitz correlation matrix
        5 => {
            let mut omega = SymMatrix::zeros(p);
            for i in 0..p {
                for j in 0..=i {
                    omega.set(i, j, 0.75f64.powi((i - j) as i32));
                }
            }
            omega.inverse_pd()
        }
        _ => unreachable!("validated above"),
    }
}

/// n i.i.d. mean-zero Gaussian rows with covariance `sigma0`, via the lower
/// Cholesky factor: row = L g with g standard normal.
pub fn sample_mvn(n: usize, sigma0: &SymMatrix, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let l = sigma0.cholesky()?;
    let p = sigma0.dim();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = vec![0.0; p];
        for i in 0..p {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += l.get(i, k) * g[k];
            }
            x[i] = acc;
        }
        rows.push(x);
    }
    Ok(rows)
}

/// S = X'X / n. The model is mean-zero, so no centering happens here;
/// callers that need centering (LDA) center before calling.
pub fn sample_cov(x: &[Vec<f64>]) -> SymMatrix {
    let n = x.len();
    assert!(n >= 1, "need at least one row");
    let p = x[0].len();
    let mut s = SymMatrix::zeros(p);
    for i in 0..p {
        for j in 0..=i {
            let mut acc = 0.0;
            for row in x {
                acc += row[i] * row[j];
            }
            s.set(i, j, acc / n as f64);
        }
    }
    s
}

/// (specificity, sensitivity) of the off-diagonal support: sp is the
/// fraction of truly zero pairs estimated at or below `threshold` in
/// magnitude, se the fraction of truly nonzero pairs estimated above it.
/// A class with no pairs scores 1 by convention.
pub fn structure_metrics(
    sigma_hat: &SymMatrix,
    sigma0: &SymMatrix,
    threshold: f64,
) -> Result<(f64, f64)> {
    let p = sigma0.dim();
    if sigma_hat.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: sigma_hat.dim() });
    }
    let (mut true_zero, mut kept_zero) = (0usize, 0usize);
    let (mut true_nonzero, mut kept_nonzero) = (0usize, 0usize);
    for i in 0..p {
        for j in (i + 1)..p {
            let flagged = sigma_hat.get(i, j).abs() > threshold;
            if sigma0.get(i, j) == 0.0 {
                true_zero += 1;
                if !flagged {
                    kept_zero += 1;
                }
            } else {
                true_nonzero += 1;
                if flagged {
                    kept_nonzero += 1;
                }
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok((ratio(kept_zero, true_zero), ratio(kept_nonzero, true_nonzero)))
}

/// (rmse, mnorm, norm2) of the estimation error: Frobenius norm over p, max
/// absolute entry, and spectral norm of the difference.
pub fn loss_metrics(sigma_hat: &SymMatrix, sigma0: &SymMatrix) -> Result<(f64, f64, f64)> {
    let p = sigma0.dim();
    if sigma_hat.dim() != p {
        return Err(Error::DimensionMismatch { expected: p, got: sigma_hat.dim() });
    }
    let diff = sigma_hat.sub(sigma0);
    let (frob, mnorm) = diff.norms();
    let norm2 = diff.spectral_norm(1e-9, 5000).value;
    Ok((frob / p as f64, mnorm, norm2))
}

/// Which covariance estimators a benchmark run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Estimator {
    ProposedMpm,
    ProposedMap,
    SampleCov,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::ProposedMpm => "proposed-mpm",
            Estimator::ProposedMap => "proposed-map",
            Estimator::SampleCov => "sample-cov",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed-mpm" => Ok(Estimator::ProposedMpm),
            "proposed-map" => Ok(Estimator::ProposedMap),
            "sample-cov" => Ok(Estimator::SampleCov),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub sp: MetricSummary,
    pub se: MetricSummary,
    pub rmse: MetricSummary,
    pub mnorm: MetricSummary,
    pub norm2: MetricSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: u8,
    pub p: usize,
    pub n: usize,
    pub reps: usize,
    /// Keyed by estimator name; BTreeMap keeps serialization order stable.
    pub estimators: BTreeMap<String, EstimatorReport>,
    /// Replications dropped because an estimator failed on them.
    pub failures: usize,
}

/// All five metrics in report order.
type MetricRow = [f64; 5];

fn metrics_for(
    sigma_hat: &SymMatrix,
    sigma0: &SymMatrix,
    threshold: f64,
) -> Result<MetricRow> {
    let (sp, se) = structure_metrics(sigma_hat, sigma0, threshold)?;
    let (rmse, mnorm, norm2) = loss_metrics(sigma_hat, sigma0)?;
    Ok([sp, se, rmse, mnorm, norm2])
}

fn one_replication(
    rep: u64,
    spec: &ModelSpec,
    sigma0: &SymMatrix,
    h: &Hyperparams,
    cfg: &ChainConfig,
    estimators: &[Estimator],
) -> Result<Vec<(Estimator, MetricRow)>> {
    let mut data_rng = ChaCha20Rng::seed_from_u64(stage_seed(spec.seed, rep, TAG_DATA));
    let x = sample_mvn(spec.n, sigma0, &mut data_rng)?;
    let s = sample_cov(&x);
    let mut rows = Vec::with_capacity(estimators.len());

    // one chain serves both proposed selectors; selection is a pure
    // function of the trace
    let needs_chain = estimators
        .iter()
        .any(|e| matches!(e, Estimator::ProposedMpm | Estimator::ProposedMap));
    let trace = if needs_chain {
        let cfg_rep = ChainConfig { seed: stage_seed(spec.seed, rep, TAG_CHAIN), ..*cfg };
        Some(mh_run(&s, h, &cfg_rep, spec.n)?)
    } else {
        None
    };

    for est in estimators {
        let sigma_hat = match est {
            Estimator::SampleCov => s.clone(),
            Estimator::ProposedMpm | Estimator::ProposedMap => {
                let trace = trace.as_ref().expect("chain ran above");
                let z: EdgeSet = match est {
                    Estimator::ProposedMpm => select_mpm(trace),
                    Estimator::ProposedMap => select_map(trace),
                    Estimator::SampleCov => unreachable!(),
                };
                bcd::solve(&s, &z, h, spec.n)?.sigma
            }
        };
        rows.push((*est, metrics_for(&sigma_hat, sigma0, h.zero_threshold)?));
    }
    Ok(rows)
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MetricSummary { mean, sd }
}

/// Runs `reps` replications of `spec` and aggregates each estimator's
/// metrics (mean and sample standard deviation over successful
/// replications). `jobs` bounds the worker threads (0 = library default);
/// without the `parallel` feature replications run sequentially and `jobs`
/// is ignored. `progress` writes one line per replication to stderr.
pub fn run_benchmark(
    spec: &ModelSpec,
    reps: usize,
    h: &Hyperparams,
    cfg: &ChainConfig,
    estimators: &[Estimator],
    jobs: usize,
    progress: bool,
) -> Result<BenchReport> {
    spec.validate()?;
    h.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("no estimators requested".into()));
    }

    let mut truth_rng = ChaCha20Rng::seed_from_u64(stage_seed(spec.seed, 0, TAG_TRUTH));
    let sigma0 = gen_model(spec, &mut truth_rng)?;

    let task = |rep: usize| {
        let out = one_replication(rep as u64, spec, &sigma0, h, cfg, estimators);
        if progress {
            match &out {
                Ok(_) => eprintln!("model {} p {} rep {rep}/{reps}: ok", spec.model_id, spec.p),
                Err(e) => eprintln!(
                    "model {} p {} rep {rep}/{reps}: failed ({e})",
                    spec.model_id, spec.p
                ),
            }
        }
        out
    };

    #[cfg(feature = "parallel")]
    let records: Vec<Result<Vec<(Estimator, MetricRow)>>> = {
        let run = || (1..=reps).into_par_iter().map(task).collect();
        if jobs > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
                .install(run)
        } else {
            run()
        }
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<Result<Vec<(Estimator, MetricRow)>>> = {
        let _ = jobs;
        (1..=reps).map(task).collect()
    };

    let mut failures = 0usize;
    let mut per_estimator: BTreeMap<Estimator, Vec<MetricRow>> = BTreeMap::new();
    for record in records {
        match record {
            Ok(rows) => {
                for (est, row) in rows {
                    per_estimator.entry(est).or_default().push(row);
                }
            }
            Err(_) => failures += 1,
        }
    }
    if failures == reps {
        return Err(Error::GenerationFailed { attempts: reps });
    }

    let mut estimators_out = BTreeMap::new();
    for (est, rows) in per_estimator {
        let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
        estimators_out.insert(
            est.name().to_string(),
            EstimatorReport {
                sp: summarize(&col(0)),
                se: summarize(&col(1)),
                rmse: summarize(&col(2)),
                mnorm: summarize(&col(3)),
                norm2: summarize(&col(4)),
            },
        );
    }

    Ok(BenchReport {
        model: spec.model_id,
        p: spec.p,
        n: spec.n,
        reps,
        estimators: estimators_out,
        failures,
    })
}
