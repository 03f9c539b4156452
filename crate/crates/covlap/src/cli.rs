//! Command-line entry point: synthetic data generation, single-dataset
//! fitting, replication benchmarks, and the breast-cancer experiment.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 runtime
//! failure (a diagnostic JSON object goes to stderr), 2 usage or config
//! error. Outputs are written atomically (temp file in the target
//! directory, then rename), so a crashed run never leaves half a file.
//!
//! Seeds resolve with precedence flag > COVLAP_SEED > config > default 0.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::lda::{load_wdbc, run_wdbc_experiment};
use crate::objective::Hyperparams;
use crate::sampler::{estimate, ChainConfig, InitStructure, Selector};
use crate::simbench::{gen_model, run_benchmark, sample_mvn, Estimator, ModelSpec};
use crate::stream::{stage_seed, TAG_DATA, TAG_TRUTH};
use crate::symmat::SymMatrix;
use crate::Error;

#[derive(Parser)]
#[command(
    name = "covlap",
    version,
    about = "Sparse covariance estimation with spike-and-slab structure search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its true covariance as CSV
    Gen {
        /// Model family, 1 through 5
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        model: u8,
        /// Dimension
        #[arg(long)]
        p: usize,
        /// Sample size
        #[arg(long)]
        n: usize,
        /// Base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Data matrix output path (n rows, p columns)
        #[arg(long)]
        out: PathBuf,
        /// True covariance output path (p x p)
        #[arg(long)]
        truth: PathBuf,
    },
    /// Fit one dataset: sample the structure chain, select, and estimate
    Fit {
        /// Input data CSV (rows = observations)
        #[arg(long)]
        data: PathBuf,
        /// JSON config; every field optional
        #[arg(long)]
        config: Option<PathBuf>,
        /// Result JSON path; the covariance CSV lands alongside
        #[arg(long)]
        out: PathBuf,
        /// Chain seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replicated synthetic benchmark against the truth
    Bench {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        model: u8,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        /// Number of replications
        #[arg(long)]
        reps: usize,
        /// Base seed for all replication streams
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report JSON path
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of proposed-mpm, proposed-map, sample-cov
        #[arg(long)]
        estimators: Option<String>,
        /// Worker threads for replications (0 = library default)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Stratified-split classification experiment on the breast-cancer data
    Lda {
        /// WDBC CSV path (id,diagnosis,f1..f30)
        #[arg(long)]
        wdbc: PathBuf,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// One of proposed-mpm, proposed-map, sample-cov
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Usage/config problems exit 2; pipeline errors exit 1.
#[derive(Debug)]
enum CliFailure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        CliFailure::Runtime(e)
    }
}

type CliResult = std::result::Result<(), CliFailure>;

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliFailure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliFailure::Runtime(e)) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Gen { model, p, n, seed, out, truth } => cmd_gen(model, p, n, seed, &out, &truth),
        Command::Fit { data, config, out, seed } => cmd_fit(&data, config.as_deref(), &out, seed),
        Command::Bench { model, p, n, reps, seed, config, out, estimators, jobs } => cmd_bench(
            model,
            p,
            n,
            reps,
            seed,
            config.as_deref(),
            &out,
            estimators.as_deref(),
            jobs.unwrap_or(0),
        ),
        Command::Lda { wdbc, reps, seed, config, out, estimator, jobs } => cmd_lda(
            &wdbc,
            reps,
            seed,
            config.as_deref(),
            &out,
            estimator.as_deref(),
            jobs.unwrap_or(0),
        ),
    }
}

// ---- config file ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    prior: Option<PriorSection>,
    chain: Option<ChainSection>,
    bcd: Option<BcdSection>,
    zero_threshold: Option<f64>,
    lda: Option<LdaSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorSection {
    q: Option<f64>,
    v: Option<f64>,
    lambda: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSection {
    burn_in: Option<usize>,
    iterations: Option<usize>,
    seed: Option<u64>,
    selector: Option<Selector>,
    init: Option<InitStructure>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcdSection {
    tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LdaSection {
    standardize: Option<bool>,
}

fn load_config(path: Option<&Path>) -> std::result::Result<FileConfig, CliFailure> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliFailure::Usage(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliFailure::Usage(format!("malformed config {}: {e}", path.display())))
}

/// Seed precedence: command-line flag, then the COVLAP_SEED environment
/// variable, then the config file, then 0.
fn resolve_seed(
    flag: Option<u64>,
    env: Option<&str>,
    config: Option<u64>,
) -> std::result::Result<u64, CliFailure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(raw) = env {
        return raw.trim().parse().map_err(|_| {
            CliFailure::Usage(format!("COVLAP_SEED must be an unsigned integer, found '{raw}'"))
        });
    }
    Ok(config.unwrap_or(0))
}

fn env_seed() -> Option<String> {
    std::env::var("COVLAP_SEED").ok()
}

struct Resolved {
    h: Hyperparams,
    chain: ChainConfig,
    standardize: bool,
}

fn resolve(
    file: &FileConfig,
    p: usize,
    seed_flag: Option<u64>,
) -> std::result::Result<Resolved, CliFailure> {
    let mut h = Hyperparams::for_dim(p);
    if let Some(prior) = &file.prior {
        if let Some(q) = prior.q {
            h.q = q;
        }
        if let Some(v) = prior.v {
            h.v = v;
        }
        if let Some(lambda) = prior.lambda {
            h.lambda = lambda;
        }
    }
    if let Some(bcd) = &file.bcd {
        if let Some(tol) = bcd.tol {
            h.bcd_tol = tol;
        }
        if let Some(max_iter) = bcd.max_iter {
            h.bcd_max_iter = max_iter;
        }
    }
    if let Some(t) = file.zero_threshold {
        h.zero_threshold = t;
    }

    let mut chain = ChainConfig::default();
    if let Some(c) = &file.chain {
        if let Some(b) = c.burn_in {
            chain.burn_in = b;
        }
        if let Some(i) = c.iterations {
            chain.iterations = i;
        }
        if let Some(s) = c.selector {
            chain.selector = s;
        }
        if let Some(i) = c.init {
            chain.init = i;
        }
    }
    chain.seed = resolve_seed(
        seed_flag,
        env_seed().as_deref(),
        file.chain.as_ref().and_then(|c| c.seed),
    )?;

    h.validate().map_err(|e| CliFailure::Usage(e.to_string()))?;
    chain.validate().map_err(|e| CliFailure::Usage(e.to_string()))?;
    Ok(Resolved {
        h,
        chain,
        // Standardized features are the default: the spike-and-slab
        // estimator is not scale-equivariant, and raw clinical scales
        // differ by orders of magnitude.
        standardize: file.lda.as_ref().and_then(|l| l.standardize).unwrap_or(true),
    })
}

// ---- resolved-config echo in fit output ----

#[derive(Serialize)]
struct ConfigEcho {
    prior: PriorEcho,
    chain: ChainEcho,
    bcd: BcdEcho,
    zero_threshold: f64,
}

#[derive(Serialize)]
struct PriorEcho {
    q: f64,
    v: f64,
    lambda: f64,
}

#[derive(Serialize)]
struct ChainEcho {
    burn_in: usize,
    iterations: usize,
    seed: u64,
    selector: Selector,
    init: InitStructure,
}

#[derive(Serialize)]
struct BcdEcho {
    tol: f64,
    max_iter: usize,
}

fn echo(h: &Hyperparams, chain: &ChainConfig) -> ConfigEcho {
    ConfigEcho {
        prior: PriorEcho { q: h.q, v: h.v, lambda: h.lambda },
        chain: ChainEcho {
            burn_in: chain.burn_in,
            iterations: chain.iterations,
            seed: chain.seed,
            selector: chain.selector,
            init: chain.init,
        },
        bcd: BcdEcho { tol: h.bcd_tol, max_iter: h.bcd_max_iter },
        zero_threshold: h.zero_threshold,
    }
}

// ---- file plumbing ----

fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    use std::io::Write as _;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn matrix_csv(m: &SymMatrix) -> String {
    let p = m.dim();
    let mut out = String::new();
    for i in 0..p {
        for j in 0..p {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&m.get(i, j).to_string());
        }
        out.push('\n');
    }
    out
}

fn rows_csv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

fn parse_matrix(text: &str) -> crate::Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row = raw
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::InvalidData {
                    line,
                    message: format!("bad value '{f}': {e}"),
                })
            })
            .collect::<crate::Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::InvalidData {
                    line,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData { line: 1, message: "no data rows".into() });
    }
    Ok(rows)
}

// ---- commands ----

fn cmd_gen(
    model: u8,
    p: usize,
    n: usize,
    seed_flag: Option<u64>,
    out: &Path,
    truth: &Path,
) -> CliResult {
    let seed = resolve_seed(seed_flag, env_seed().as_deref(), None)?;
    let spec = ModelSpec { model_id: model, p, n, seed };
    spec.validate().map_err(|e| CliFailure::Usage(e.to_string()))?;
    let mut truth_rng = ChaCha20Rng::seed_from_u64(stage_seed(seed, 0, TAG_TRUTH));
    let sigma0 = gen_model(&spec, &mut truth_rng)?;
    // same stream the benchmark harness uses for its first replication
    let mut data_rng = ChaCha20Rng::seed_from_u64(stage_seed(seed, 1, TAG_DATA));
    let x = sample_mvn(n, &sigma0, &mut data_rng)?;
    write_atomic(truth, matrix_csv(&sigma0).as_bytes())?;
    write_atomic(out, rows_csv(&x).as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct FitDiagnostics {
    objective: f64,
    sweeps: usize,
    converged: bool,
    constraint_gap: f64,
}

#[derive(Serialize)]
struct FitOutput {
    z: Vec<u8>,
    selector: Selector,
    log_model_prob: f64,
    acceptance_rate: f64,
    inclusion_freq: Vec<f64>,
    sigma_csv: String,
    config: ConfigEcho,
    diagnostics: FitDiagnostics,
}

fn cmd_fit(data: &Path, config: Option<&Path>, out: &Path, seed_flag: Option<u64>) -> CliResult {
    let text = std::fs::read_to_string(data).map_err(Error::Io)?;
    let x = parse_matrix(&text)?;
    let file = load_config(config)?;
    let r = resolve(&file, x[0].len(), seed_flag)?;

    let fit = estimate(&x, &r.h, &r.chain)?;

    let sigma_path = out.with_extension("sigma.csv");
    write_atomic(&sigma_path, matrix_csv(&fit.sigma).as_bytes())?;
    let output = FitOutput {
        z: fit.z.bits().iter().map(|&b| u8::from(b)).collect(),
        selector: fit.selector,
        log_model_prob: fit.log_model_prob,
        acceptance_rate: fit.acceptance_rate,
        inclusion_freq: fit.inclusion_freq.clone(),
        sigma_csv: sigma_path.display().to_string(),
        config: echo(&r.h, &r.chain),
        diagnostics: FitDiagnostics {
            objective: fit.objective,
            sweeps: fit.sweeps,
            converged: fit.converged,
            constraint_gap: fit.constraint_gap,
        },
    };
    let json = serde_json::to_string_pretty(&output).expect("serializable") + "\n";
    write_atomic(out, json.as_bytes())?;
    Ok(())
}

fn parse_estimators(
    spec: Option<&str>,
) -> std::result::Result<Vec<Estimator>, CliFailure> {
    let Some(spec) = spec else {
        return Ok(vec![Estimator::ProposedMpm, Estimator::SampleCov]);
    };
    let mut out = Vec::new();
    for name in spec.split(',') {
        let est = Estimator::parse(name.trim()).map_err(|e| CliFailure::Usage(e.to_string()))?;
        if !out.contains(&est) {
            out.push(est);
        }
    }
    if out.is_empty() {
        return Err(CliFailure::Usage("no estimators requested".into()));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    model: u8,
    p: usize,
    n: usize,
    reps: usize,
    seed_flag: Option<u64>,
    config: Option<&Path>,
    out: &Path,
    estimators: Option<&str>,
    jobs: usize,
) -> CliResult {
    let file = load_config(config)?;
    let r = resolve(&file, p, seed_flag)?;
    let estimators = parse_estimators(estimators)?;
    let spec = ModelSpec { model_id: model, p, n, seed: r.chain.seed };
    spec.validate().map_err(|e| CliFailure::Usage(e.to_string()))?;
    if reps == 0 {
        return Err(CliFailure::Usage("reps must be at least 1".into()));
    }

    let report = run_benchmark(&spec, reps, &r.h, &r.chain, &estimators, jobs, true)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    write_atomic(out, json.as_bytes())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_lda(
    wdbc: &Path,
    reps: usize,
    seed_flag: Option<u64>,
    config: Option<&Path>,
    out: &Path,
    estimator: Option<&str>,
    jobs: usize,
) -> CliResult {
    let file = load_config(config)?;
    let r = resolve(&file, 30, seed_flag)?;
    let estimator = match estimator {
        Some(name) => Estimator::parse(name).map_err(|e| CliFailure::Usage(e.to_string()))?,
        None => Estimator::ProposedMpm,
    };
    if reps == 0 {
        return Err(CliFailure::Usage("reps must be at least 1".into()));
    }

    let data = load_wdbc(wdbc)?;
    let report = run_wdbc_experiment(
        &data,
        reps,
        r.chain.seed,
        &r.h,
        &r.chain,
        estimator,
        r.standardize,
        jobs,
        true,
    )?;
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    write_atomic(out, json.as_bytes())?;
    Ok(())
}
