pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde_json::json;

use homlab::error::{HomError, Result};
use homlab::verify::VerifyConfig;

use config::{Experiment, ExperimentConfig};
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "homlab", version, about = "Stochastic homogenization experiments on periodic lattices")]
pub struct Cli {
    pub experiment: Experiment,
    /// TOML experiment configuration (optional for `verify`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, env = "HOMLAB_THREADS")]
    pub threads: Option<usize>,
    /// Omit timings from numerical outputs so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Verify only: corrupt sigma with a symmetric part.
    #[arg(long)]
    pub fault_sigma: bool,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;

pub fn exit_code(e: &HomError) -> u8 {
    match e {
        HomError::NotConverged { .. }
        | HomError::NonFinite { .. }
        | HomError::NotPositiveDefinite { .. }
        | HomError::SingularFace { .. }
        | HomError::Inconsistent(_)
        | HomError::NonFiniteMoment { .. } => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

fn error_class(e: &HomError) -> &'static str {
    match e {
        HomError::InvalidGrid(_) => "invalid_grid",
        HomError::InvalidModel(_) => "invalid_model",
        HomError::InvalidArgument(_) => "invalid_argument",
        HomError::NotPositiveDefinite { .. } => "not_positive_definite",
        HomError::NonFinite { .. } => "non_finite",
        HomError::NonFiniteMoment { .. } => "non_finite_moment",
        HomError::SingularFace { .. } => "singular_face",
        HomError::NotConverged { .. } => "not_converged",
        HomError::Inconsistent(_) => "inconsistent",
        HomError::Rejected(_) => "rejected",
        HomError::Format(_) => "format",
        HomError::Config(_) => "config",
        HomError::Io(_) => "io",
        HomError::Json(_) => "json",
    }
}

struct Prepared {
    config: Option<ExperimentConfig>,
    verify: VerifyConfig,
    out: PathBuf,
    hash: String,
    deterministic: bool,
    raw: Option<String>,
}

fn prepare(cli: &Cli) -> Result<Prepared> {
    let (mut config, raw) = match &cli.config {
        Some(p) => {
            let raw = std::fs::read_to_string(p)?;
            (Some(ExperimentConfig::parse(&raw)?), Some(raw))
        }
        None if cli.experiment == Experiment::Verify => (None, None),
        None => return Err(HomError::Config(format!("{} needs --config", cli.experiment.name()))),
    };
    let mut verify = config.as_ref().and_then(|c| c.verify.clone()).unwrap_or_default();
    let mut deterministic = cli.deterministic;
    let mut out = cli.out.clone();
    if let Some(c) = config.as_mut() {
        if let Some(e) = c.experiment {
            if e != cli.experiment {
                return Err(HomError::Config(format!("config is for `{}`, not `{}`", e.name(), cli.experiment.name())));
            }
        }
        c.experiment = Some(cli.experiment);
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        c.deterministic |= cli.deterministic;
        deterministic = c.deterministic;
        out = out.or_else(|| c.out.clone());
        c.out = None;
        verify.master_seed = c.seed;
        if cli.experiment != Experiment::Verify {
            c.validate(cli.experiment)?;
        }
    } else if let Some(s) = cli.seed {
        verify.master_seed = s;
    }
    verify.fault_sigma |= cli.fault_sigma;
    if let Some(c) = config.as_mut() {
        c.verify = Some(verify.clone());
    }
    let hash = match &config {
        Some(c) => c.hash(),
        None => {
            use sha2::{Digest, Sha256};
            hex::encode(&Sha256::digest(serde_json::to_vec(&verify)?)[..8])
        }
    };
    let out = out.unwrap_or_else(|| PathBuf::from(format!("homlab-{}-{hash}", cli.experiment.name())));
    Ok(Prepared { config, verify, out, hash, deterministic, raw })
}

fn report_error(e: &HomError, out: Option<&PathBuf>, hash: Option<&str>) -> u8 {
    let code = exit_code(e);
    let record = json!({ "status": "error", "class": error_class(e), "message": e.to_string(), "exit_code": code, "config_hash": hash });
    eprintln!("{record}");
    if let Some(dir) = out {
        if dir.is_dir() {
            let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
        }
    }
    code
}

pub fn main_with(cli: Cli) -> u8 {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
        eprintln!("{}", json!({ "status": "warning", "message": e.to_string() }));
    }
    let prep = match prepare(&cli) {
        Ok(p) => p,
        Err(e) => return report_error(&e, None, None),
    };
    let mut out = match OutputDir::create(&prep.out, &prep.hash) {
        Ok(o) => o,
        Err(e) => return report_error(&e, None, Some(&prep.hash)),
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let result = run::run(cli.experiment, prep.config.as_ref(), &prep.verify, &mut out);
    let (status, seeds, code) = match &result {
        Ok(o) if o.passed => ("ok", o.seeds.clone(), EXIT_OK),
        Ok(o) => ("failed", o.seeds.clone(), EXIT_NUMERICAL),
        Err(e) => ("error", vec![], report_error(e, Some(&prep.out), Some(&prep.hash))),
    };
    let manifest = json!({
        "tool": "homlab",
        "version": concat!("v", env!("CARGO_PKG_VERSION")),
        "experiment": cli.experiment.name(),
        "status": status,
        "exit_code": code,
        "config": prep.config,
        "config_text": prep.raw,
        "verify": prep.verify,
        "deterministic": prep.deterministic,
        "threads": threads,
        "started_unix": started,
        "wall_seconds": clock.elapsed().as_secs_f64(),
        "seeds": seeds,
        "outputs": out.written(),
    });
    if let Err(e) = out.json("manifest.json", &manifest) {
        return report_error(&e, None, Some(&prep.hash)).max(code);
    }
    code
}
