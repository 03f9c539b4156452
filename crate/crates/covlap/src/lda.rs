//! Linear discriminant analysis with a plug-in covariance estimator, and
//! the stratified-split breast-cancer experiment around it.
//!
//! The classifier assumes a covariance shared by both classes, so the
//! estimator sees the pooled within-class centered training rows (each row
//! minus its class mean). Feature standardization is optional and off by
//! default; when on, the scaler is fitted on the training rows only and
//! applied to both sets.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::objective::Hyperparams;
use crate::sampler::{estimate, ChainConfig, Selector};
use crate::simbench::{sample_cov, Estimator, MetricSummary};
use crate::stream::{stage_seed, TAG_CHAIN, TAG_SPLIT};
use crate::symmat::SymMatrix;
use crate::{Error, Result};

/// Feature rows with binary labels: 0 = benign, 1 = malignant.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Reads "id,diagnosis,f1,...,f30" CSV lines; diagnosis M maps to class 1,
/// B to class 0. Line numbers in errors are 1-based.
pub fn load_wdbc(path: &Path) -> Result<LabeledDataset> {
    const FIELDS: usize = 32;
    let text = std::fs::read_to_string(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != FIELDS {
            return Err(Error::InvalidData {
                line,
                message: format!("expected {FIELDS} fields, found {}", fields.len()),
            });
        }
        let label = match fields[1] {
            "M" => 1,
            "B" => 0,
            other => {
                return Err(Error::InvalidData {
                    line,
                    message: format!("diagnosis must be M or B, found '{other}'"),
                })
            }
        };
        let mut row = Vec::with_capacity(FIELDS - 2);
        for f in &fields[2..] {
            row.push(f.parse::<f64>().map_err(|e| Error::InvalidData {
                line,
                message: format!("bad feature value '{f}': {e}"),
            })?);
        }
        features.push(row);
        labels.push(label);
    }
    Ok(LabeledDataset { features, labels })
}

/// Draws `train_counts` = (malignant, benign) rows per class uniformly
/// without replacement; everything else is the test set. Both halves keep
/// the original row order. The malignant class consumes the stream first,
/// so the split is a pure function of the seed.
pub fn stratified_split(
    data: &LabeledDataset,
    train_counts: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut chosen = vec![false; data.len()];
    for (class, want) in [(1u8, train_counts.0), (0u8, train_counts.1)] {
        let mut pool: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if want > pool.len() {
            return Err(Error::InsufficientClassCount {
                class,
                requested: want,
                available: pool.len(),
            });
        }
        // partial Fisher-Yates: the first `want` slots end up a uniform
        // without-replacement sample
        for k in 0..want {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
            chosen[pool[k]] = true;
        }
    }
    let mut train = LabeledDataset { features: Vec::new(), labels: Vec::new() };
    let mut test = LabeledDataset { features: Vec::new(), labels: Vec::new() };
    for i in 0..data.len() {
        let dst = if chosen[i] { &mut train } else { &mut test };
        dst.features.push(data.features[i].clone());
        dst.labels.push(data.labels[i]);
    }
    Ok((train, test))
}

/// Per-feature affine map fitted on training rows: subtract the mean,
/// divide by the sample standard deviation (constant features are only
/// centered).
#[derive(Debug, Clone)]
pub struct FeatureScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &[Vec<f64>]) -> Self {
        let n = features.len();
        assert!(n >= 2, "need at least two rows to fit a scaler");
        let p = features[0].len();
        let mut mean = vec![0.0; p];
        for row in features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut scale = vec![0.0; p];
        for row in features {
            for j in 0..p {
                scale[j] += (row[j] - mean[j]).powi(2);
            }
        }
        for s in &mut scale {
            *s = (*s / (n - 1) as f64).sqrt();
            if *s <= 0.0 {
                *s = 1.0;
            }
        }
        FeatureScaler { mean, scale }
    }

    pub fn apply(&self, features: &[Vec<f64>]) -> Vec<Vec<f64>> {
        features
            .iter()
            .map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// Fitted discriminant: class means, the inverse of the estimated pooled
/// covariance, and log class proportions.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub omega_hat: SymMatrix,
    pub log_pi0: f64,
    pub log_pi1: f64,
}

fn class_mean(data: &LabeledDataset, class: u8) -> Vec<f64> {
    let p = data.features[0].len();
    let mut mean = vec![0.0; p];
    let mut count = 0usize;
    for (row, &label) in data.features.iter().zip(&data.labels) {
        if label == class {
            count += 1;
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    mean
}

/// Fits the discriminant on training data. The covariance estimator sees
/// the rows centered by their own class mean; `estimator` picks between the
/// structure-sampling pipeline (either selector) and the raw sample
/// covariance baseline.
pub fn fit_lda(
    train: &LabeledDataset,
    h: &Hyperparams,
    cfg: &ChainConfig,
    estimator: Estimator,
) -> Result<LdaModel> {
    let n1 = train.class_count(1);
    let n0 = train.class_count(0);
    for (class, count) in [(0u8, n0), (1u8, n1)] {
        if count == 0 {
            return Err(Error::InsufficientClassCount { class, requested: 1, available: 0 });
        }
    }
    let mu0 = class_mean(train, 0);
    let mu1 = class_mean(train, 1);
    let centered: Vec<Vec<f64>> = train
        .features
        .iter()
        .zip(&train.labels)
        .map(|(row, &label)| {
            let mu = if label == 1 { &mu1 } else { &mu0 };
            row.iter().zip(mu).map(|(v, m)| v - m).collect()
        })
        .collect();

    let sigma_hat = match estimator {
        Estimator::SampleCov => sample_cov(&centered),
        Estimator::ProposedMpm | Estimator::ProposedMap => {
            let selector = if estimator == Estimator::ProposedMpm {
                Selector::Mpm
            } else {
                Selector::Map
            };
            let cfg = ChainConfig { selector, ..*cfg };
            estimate(&centered, h, &cfg)?.sigma
        }
    };
    let omega_hat = sigma_hat.inverse_pd()?;

    let n = train.len() as f64;
    Ok(LdaModel {
        mu0,
        mu1,
        omega_hat,
        log_pi0: (n0 as f64 / n).ln(),
        log_pi1: (n1 as f64 / n).ln(),
    })
}

fn discriminant(model: &LdaModel, x: &[f64], mu: &[f64], log_pi: f64) -> f64 {
    let omega_mu = model.omega_hat.matvec(mu);
    let x_term: f64 = x.iter().zip(&omega_mu).map(|(a, b)| a * b).sum();
    let mu_term: f64 = mu.iter().zip(&omega_mu).map(|(a, b)| a * b).sum();
    x_term - 0.5 * mu_term + log_pi
}

/// Classifies one observation; ties go to class 0.
pub fn predict(model: &LdaModel, x: &[f64]) -> u8 {
    let d0 = discriminant(model, x, &model.mu0, model.log_pi0);
    let d1 = discriminant(model, x, &model.mu1, model.log_pi1);
    u8::from(d1 > d0)
}

/// Fraction of test rows misclassified.
pub fn error_rate(model: &LdaModel, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let wrong = test
        .features
        .iter()
        .zip(&test.labels)
        .filter(|(x, &y)| predict(model, x) != y)
        .count();
    Ok(wrong as f64 / test.len() as f64)
}

/// Training split sizes from the experiment design: 72 malignant and 119
/// benign cases, remainder held out.
pub const TRAIN_MALIGNANT: usize = 72;
pub const TRAIN_BENIGN: usize = 119;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaReport {
    pub reps: usize,
    pub error_rate: MetricSummary,
    pub per_rep: Vec<f64>,
}

/// Repeats the split/fit/score cycle `reps` times. Replication r draws its
/// split and its chain from streams derived from (seed, r), so reports are
/// reproducible and independent of the worker schedule. `jobs` bounds the
/// thread count as in the benchmark harness.
#[allow(clippy::too_many_arguments)]
pub fn run_wdbc_experiment(
    data: &LabeledDataset,
    reps: usize,
    seed: u64,
    h: &Hyperparams,
    cfg: &ChainConfig,
    estimator: Estimator,
    standardize: bool,
    jobs: usize,
    progress: bool,
) -> Result<LdaReport> {
    h.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }

    let task = |rep: usize| -> Result<f64> {
        let mut split_rng = ChaCha20Rng::seed_from_u64(stage_seed(seed, rep as u64, TAG_SPLIT));
        let (mut train, mut test) =
            stratified_split(data, (TRAIN_MALIGNANT, TRAIN_BENIGN), &mut split_rng)?;
        if standardize {
            let scaler = FeatureScaler::fit(&train.features);
            train.features = scaler.apply(&train.features);
            test.features = scaler.apply(&test.features);
        }
        let cfg_rep = ChainConfig { seed: stage_seed(seed, rep as u64, TAG_CHAIN), ..*cfg };
        let model = fit_lda(&train, h, &cfg_rep, estimator)?;
        let err = error_rate(&model, &test)?;
        if progress {
            eprintln!("lda rep {rep}/{reps}: error {err:.4}");
        }
        Ok(err)
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<f64>> = {
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
    let outcomes: Vec<Result<f64>> = {
        let _ = jobs;
        (1..=reps).map(task).collect()
    };

    let mut per_rep = Vec::with_capacity(reps);
    for outcome in outcomes {
        per_rep.push(outcome?);
    }
    let mean = per_rep.iter().sum::<f64>() / reps as f64;
    let sd = if reps < 2 {
        0.0
    } else {
        (per_rep.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
    };
    Ok(LdaReport { reps, error_rate: MetricSummary { mean, sd }, per_rep })
}
