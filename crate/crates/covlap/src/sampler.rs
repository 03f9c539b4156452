//! Metropolis-Hastings over edge structures, MPM/MAP model selection, and
//! the end-to-end covariance fit.
//!
//! The chain proposes single-bit flips (a symmetric kernel) and accepts with
//! probability min(1, exp(score_cand - score_curr)), the scores being
//! Laplace-approximated log posteriors memoized per chain. The final
//! structure is either the median probability model (edges included by more
//! than half the retained samples) or the highest-scoring visited structure.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::laplace::{log_model_prob, ScoreCache};
use crate::objective::{pair_count, EdgeSet, Hyperparams};
use crate::symmat::SymMatrix;
use crate::{bcd, simbench, Error, Result};

/// How the final structure is chosen from the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Mpm,
    Map,
}

/// Chain starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStructure {
    Empty,
    Full,
    /// Each edge included independently with the prior probability q.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    /// Discarded leading steps.
    pub burn_in: usize,
    /// Retained steps after burn-in.
    pub iterations: usize,
    pub seed: u64,
    pub selector: Selector,
    pub init: InitStructure,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 3000,
            iterations: 12000,
            seed: 0,
            selector: Selector::Mpm,
            init: InitStructure::Empty,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Post-burn-in record of the chain.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// (state after the step, its log score, whether the proposal was taken).
    pub samples: Vec<(EdgeSet, f64, bool)>,
    /// Accepted fraction over the retained steps.
    pub acceptance_rate: f64,
    /// Per-pair inclusion frequency over the retained steps.
    pub inclusion_freq: Vec<f64>,
}

/// Flips one uniformly chosen pair bit; symmetric proposal.
pub fn propose(z: &EdgeSet, rng: &mut impl Rng) -> EdgeSet {
    let k = rng.gen_range(0..pair_count(z.dim()));
    let mut out = z.clone();
    out.flip_bit(k);
    out
}

fn initial_structure(p: usize, init: InitStructure, q: f64, rng: &mut impl Rng) -> EdgeSet {
    match init {
        InitStructure::Empty => EdgeSet::empty(p),
        InitStructure::Full => EdgeSet::full(p),
        InitStructure::Random => {
            let mut z = EdgeSet::empty(p);
            for k in 0..pair_count(p) {
                if rng.gen_bool(q) {
                    z.flip_bit(k);
                }
            }
            z
        }
    }
}

/// Runs the chain on sample covariance `s` from `n` observations.
/// Deterministic given `cfg.seed`; the trace keeps post-burn-in steps only.
pub fn mh_run(s: &SymMatrix, h: &Hyperparams, cfg: &ChainConfig, n: usize) -> Result<ChainTrace> {
    mh_run_impl(s, h, cfg, n, true)
}

/// `use_cache = false` recomputes every score; the trajectory must not
/// change, which the tests assert.
fn mh_run_impl(
    s: &SymMatrix,
    h: &Hyperparams,
    cfg: &ChainConfig,
    n: usize,
    use_cache: bool,
) -> Result<ChainTrace> {
    h.validate()?;
    cfg.validate()?;
    let p = s.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut cache = ScoreCache::new();
    let score = |z: &EdgeSet, cache: &mut ScoreCache| -> f64 {
        if use_cache {
            cache.score(z, s, h, n).log_prob
        } else {
            log_model_prob(z, s, h, n).log_prob
        }
    };

    let mut curr = initial_structure(p, cfg.init, h.q, &mut rng);
    let mut curr_lp = score(&curr, &mut cache);
    if curr_lp == f64::NEG_INFINITY {
        eprintln!("warning: initial structure is infeasible; starting from the empty structure");
        curr = EdgeSet::empty(p);
        curr_lp = score(&curr, &mut cache);
        if curr_lp == f64::NEG_INFINITY {
            return Err(Error::NotPositiveDefinite);
        }
    }

    let mut samples = Vec::with_capacity(cfg.iterations);
    let mut accepted_post = 0usize;
    if p < 2 {
        // no pairs exist; the chain has a single state
        for _ in 0..cfg.iterations {
            samples.push((curr.clone(), curr_lp, false));
        }
    } else {
        let total = cfg.burn_in + cfg.iterations;
        for step in 0..total {
            let cand = propose(&curr, &mut rng);
            let cand_lp = score(&cand, &mut cache);
            // exp(-inf) = 0 rejects infeasible candidates automatically
            let ratio = (cand_lp - curr_lp).exp();
            let accepted = rng.gen::<f64>() < ratio.min(1.0);
            if accepted {
                curr = cand;
                curr_lp = cand_lp;
            }
            if step >= cfg.burn_in {
                samples.push((curr.clone(), curr_lp, accepted));
                if accepted {
                    accepted_post += 1;
                }
            }
        }
    }

    let mut inclusion_freq = vec![0.0; pair_count(p)];
    for (z, _, _) in &samples {
        for (k, freq) in inclusion_freq.iter_mut().enumerate() {
            if z.bit(k) {
                *freq += 1.0;
            }
        }
    }
    for freq in inclusion_freq.iter_mut() {
        *freq /= samples.len() as f64;
    }

    Ok(ChainTrace {
        samples,
        acceptance_rate: accepted_post as f64 / cfg.iterations as f64,
        inclusion_freq,
    })
}

/// Median probability model: pairs included strictly more than half the
/// time. Exact ties resolve to exclusion, favoring sparsity.
pub fn select_mpm(trace: &ChainTrace) -> EdgeSet {
    assert!(!trace.samples.is_empty());
    let p = trace.samples[0].0.dim();
    let mut z = EdgeSet::empty(p);
    for (k, &freq) in trace.inclusion_freq.iter().enumerate() {
        if freq > 0.5 {
            z.flip_bit(k);
        }
    }
    z
}

/// Highest-scoring visited structure. Score ties break toward fewer edges,
/// then the lexicographically smallest bit pattern.
pub fn select_map(trace: &ChainTrace) -> EdgeSet {
    assert!(!trace.samples.is_empty());
    let mut best: Option<(&EdgeSet, f64)> = None;
    for (z, lp, _) in &trace.samples {
        let better = match best {
            None => true,
            Some((bz, blp)) => {
                *lp > blp
                    || (*lp == blp
                        && (z.count(), z.bits()) < (bz.count(), bz.bits()))
            }
        };
        if better {
            best = Some((z, *lp));
        }
    }
    best.unwrap().0.clone()
}

/// Selected structure, covariance estimate at its conditional posterior
/// mode, and chain diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub z: EdgeSet,
    pub selector: Selector,
    /// Score of the selected structure.
    pub log_model_prob: f64,
    pub sigma: SymMatrix,
    pub acceptance_rate: f64,
    pub inclusion_freq: Vec<f64>,
    /// Objective value at the estimate.
    pub objective: f64,
    /// Coordinate descent sweeps for the final solve.
    pub sweeps: usize,
    pub converged: bool,
    /// lambda_max(Sigma - 2S); a nonnegative value means the mode left the
    /// region the expansion argument assumes. Diagnostic only.
    pub constraint_gap: f64,
}

/// Full pipeline on raw data rows: sample covariance, chain, selection, and
/// the conditional posterior mode of the selected structure.
pub fn estimate(x: &[Vec<f64>], h: &Hyperparams, cfg: &ChainConfig) -> Result<FitResult> {
    let n = x.len();
    if n < 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: n });
    }
    let p = x[0].len();
    for row in x {
        if row.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: row.len() });
        }
    }
    let s = simbench::sample_cov(x);
    let trace = mh_run(&s, h, cfg, n)?;
    let z = match cfg.selector {
        Selector::Mpm => select_mpm(&trace),
        Selector::Map => select_map(&trace),
    };
    let log_prob = log_model_prob(&z, &s, h, n).log_prob;
    let sol = bcd::solve(&s, &z, h, n)?;
    let (_, constraint_gap) = sol.sigma.sub(&s.scaled(2.0)).eigen_extremes(1e-9, 5000);
    Ok(FitResult {
        z,
        selector: cfg.selector,
        log_model_prob: log_prob,
        sigma: sol.sigma,
        acceptance_rate: trace.acceptance_rate,
        inclusion_freq: trace.inclusion_freq,
        objective: sol.objective,
        sweeps: sol.sweeps,
        converged: sol.converged,
        constraint_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simbench::sample_mvn;

    fn h_with(q: f64, p: usize) -> Hyperparams {
        Hyperparams { q, v: 1.0, lambda: 1.0, ..Hyperparams::for_dim(p) }
    }

    fn banded_truth(p: usize, off: f64) -> SymMatrix {
        let mut m = SymMatrix::identity(p);
        for i in 0..p - 1 {
            m.set(i, i + 1, off);
        }
        m
    }

    #[test]
    fn propose_flips_exactly_one_bit() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let z = EdgeSet::empty(2);
        let z2 = propose(&z, &mut rng);
        assert_eq!(z2.count(), 1);
        // flipping the same single bit again restores the structure
        let z3 = propose(&z2, &mut rng);
        assert_eq!(z3, z);
    }

    #[test]
    fn propose_picks_pairs_uniformly() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = 4;
        let bits = pair_count(p);
        let n = 120_000usize;
        let mut counts = vec![0usize; bits];
        let base = EdgeSet::empty(p);
        for _ in 0..n {
            let cand = propose(&base, &mut rng);
            let k = (0..bits).find(|&k| cand.bit(k)).unwrap();
            counts[k] += 1;
        }
        let expect = n as f64 / bits as f64;
        let sd = (n as f64 * (1.0 / bits as f64) * (1.0 - 1.0 / bits as f64)).sqrt();
        for &c in &counts {
            assert!((c as f64 - expect).abs() < 3.0 * sd, "count {c} vs {expect}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_trace() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = sample_mvn(60, &banded_truth(3, 0.5), &mut rng).unwrap();
        let s = crate::simbench::sample_cov(&x);
        let h = h_with(0.15, 3);
        let cfg = ChainConfig { burn_in: 50, iterations: 300, seed: 11, ..Default::default() };
        let a = mh_run(&s, &h, &cfg, 60).unwrap();
        let b = mh_run(&s, &h, &cfg, 60).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for ((za, la, fa), (zb, lb, fb)) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(za, zb);
            assert_eq!(la.to_bits(), lb.to_bits());
            assert_eq!(fa, fb);
        }
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
    }

    #[test]
    fn cache_does_not_change_the_trajectory() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let x = sample_mvn(50, &banded_truth(3, 0.45), &mut rng).unwrap();
        let s = crate::simbench::sample_cov(&x);
        let h = h_with(0.2, 3);
        let cfg = ChainConfig { burn_in: 30, iterations: 200, seed: 5, ..Default::default() };
        let cached = mh_run_impl(&s, &h, &cfg, 50, true).unwrap();
        let uncached = mh_run_impl(&s, &h, &cfg, 50, false).unwrap();
        for ((za, la, _), (zb, lb, _)) in cached.samples.iter().zip(uncached.samples.iter()) {
            assert_eq!(za, zb);
            assert_eq!(la.to_bits(), lb.to_bits());
        }
    }

    #[test]
    fn chain_explores_and_acceptance_stays_interior() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = sample_mvn(80, &banded_truth(3, 0.5), &mut rng).unwrap();
        let s = crate::simbench::sample_cov(&x);
        let h = h_with(0.2, 3);
        let cfg = ChainConfig { burn_in: 200, iterations: 1000, seed: 2, ..Default::default() };
        let trace = mh_run(&s, &h, &cfg, 80).unwrap();
        assert!(trace.acceptance_rate > 0.0 && trace.acceptance_rate < 1.0);
        let accepted: usize = trace.samples.iter().filter(|(_, _, a)| *a).count();
        let rejected = trace.samples.len() - accepted;
        assert!(accepted > 0 && rejected > 0);
    }

    #[test]
    fn mpm_threshold_is_strict() {
        let z = EdgeSet::empty(3);
        let trace = ChainTrace {
            samples: vec![(z, -1.0, false)],
            acceptance_rate: 0.0,
            inclusion_freq: vec![0.7, 0.5, 0.3],
        };
        let chosen = select_mpm(&trace);
        assert!(chosen.bit(0));
        assert!(!chosen.bit(1), "exact 0.5 resolves to exclusion");
        assert!(!chosen.bit(2));
    }

    #[test]
    fn map_prefers_score_then_sparsity_then_lex() {
        let mut z_a = EdgeSet::empty(3);
        z_a.flip_bit(0);
        let mut z_b = EdgeSet::empty(3);
        z_b.flip_bit(1);
        let z_c = EdgeSet::empty(3);

        // clear winner by score
        let trace = ChainTrace {
            samples: vec![(z_a.clone(), -10.0, true), (z_b.clone(), -9.0, true)],
            acceptance_rate: 1.0,
            inclusion_freq: vec![0.5, 0.5, 0.0],
        };
        assert_eq!(select_map(&trace), z_b);

        // score tie: the single-edge models lose to the empty model
        let trace = ChainTrace {
            samples: vec![(z_a.clone(), -4.0, true), (z_c.clone(), -4.0, true)],
            acceptance_rate: 1.0,
            inclusion_freq: vec![0.5, 0.0, 0.0],
        };
        assert_eq!(select_map(&trace), z_c);

        // score and count tie: lexicographically smaller bits win
        let trace = ChainTrace {
            samples: vec![(z_b.clone(), -4.0, true), (z_a.clone(), -4.0, true)],
            acceptance_rate: 1.0,
            inclusion_freq: vec![0.5, 0.5, 0.0],
        };
        assert_eq!(select_map(&trace), z_b, "bit 0 clear beats bit 0 set");
    }

    #[test]
    fn estimate_scalar_data_has_no_edges() {
        let x: Vec<Vec<f64>> = vec![vec![1.2], vec![-0.4], vec![0.9], vec![2.1]];
        let h = h_with(0.2, 1);
        let cfg = ChainConfig { burn_in: 5, iterations: 20, ..Default::default() };
        let fit = estimate(&x, &h, &cfg).unwrap();
        assert_eq!(fit.z.count(), 0);
        let s00: f64 = x.iter().map(|r| r[0] * r[0]).sum::<f64>() / 4.0;
        let want = bcd::gamma_hat(s00, h.lambda / 4.0).unwrap();
        approx::assert_relative_eq!(fit.sigma.get(0, 0), want, max_relative = 1e-10);
    }

    #[test]
    fn estimate_recovers_a_strong_band() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let truth = banded_truth(3, 0.5);
        let x = sample_mvn(300, &truth, &mut rng).unwrap();
        let h = h_with(3f64.ln() / 9.0, 3);
        let cfg = ChainConfig { burn_in: 300, iterations: 1500, seed: 4, ..Default::default() };
        let fit = estimate(&x, &h, &cfg).unwrap();
        assert!(fit.z.contains(0, 1));
        assert!(fit.z.contains(1, 2));
        assert!(!fit.z.contains(0, 2));
        fit.sigma.cholesky().unwrap();
    }

    #[test]
    fn estimate_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let x = sample_mvn(40, &banded_truth(3, 0.4), &mut rng).unwrap();
        let h = h_with(0.2, 3);
        let cfg = ChainConfig { burn_in: 20, iterations: 100, seed: 9, ..Default::default() };
        let a = estimate(&x, &h, &cfg).unwrap();
        let b = estimate(&x, &h, &cfg).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.log_model_prob.to_bits(), b.log_model_prob.to_bits());
        assert_eq!(a.inclusion_freq, b.inclusion_freq);
    }
}
