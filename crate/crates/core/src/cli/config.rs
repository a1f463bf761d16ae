//! TOML experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use homlab::error::{HomError, Result};
use homlab::field::check_moment_condition;
use homlab::grid::GridSpec;
use homlab::models::EnsembleModel;
use homlab::radii::{DEFAULT_C0, DEFAULT_M0};
use homlab::solver::SolverConfig;
use homlab::stats::montecarlo::KPolicy;
use homlab::stats::sgap::Functional;
use homlab::twoscale::MacroLoad;
use homlab::verify::VerifyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Gen,
    Corrector,
    Radii,
    Tails,
    Twoscale,
    Sgcheck,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gen => "gen",
            Experiment::Corrector => "corrector",
            Experiment::Radii => "radii",
            Experiment::Tails => "tails",
            Experiment::Twoscale => "twoscale",
            Experiment::Sgcheck => "sgcheck",
            Experiment::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(flatten)]
    pub model: EnsembleModel,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub l: usize,
    #[serde(default = "one")]
    pub h: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiiSection {
    pub c0: f64,
    pub m0: f64,
    pub k: KPolicy,
    pub n_boot: usize,
    pub eps_samples: usize,
}

impl Default for RadiiSection {
    fn default() -> Self {
        Self { c0: DEFAULT_C0, m0: DEFAULT_M0, k: KPolicy::Empirical { pilot: 32 }, n_boot: 1000, eps_samples: 4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoScaleSection {
    pub macro_length: f64,
    pub deltas: Vec<f64>,
    pub load: MacroLoad,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Measured `eps d` for the weight regime; defaults to `d`.
    pub eps_d: Option<f64>,
}

fn default_realizations() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgcheckSection {
    pub functionals: Vec<Functional>,
    /// Coarsen the resampling units with the partition of this exponent.
    pub partition_beta: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deterministic: bool,
    pub out: Option<PathBuf>,
    /// Number of realizations (samples for `sgcheck`).
    #[serde(default = "default_n")]
    pub n: usize,
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub radii: RadiiSection,
    pub twoscale: Option<TwoScaleSection>,
    pub sgcheck: Option<SgcheckSection>,
    pub verify: Option<VerifyConfig>,
}

fn default_n() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HomError::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.d, self.grid.l, self.grid.h)
    }

    /// Checks run before any computation.
    pub fn validate(&self, experiment: Experiment) -> Result<()> {
        let m = &self.model.model;
        m.validate()?;
        self.grid()?;
        if !check_moment_condition(m.p, m.q, self.grid.d, true) {
            return Err(HomError::Config(format!("moment condition 1/p + 1/q < 2/d fails for p={}, q={}, d={}", m.p, m.q, self.grid.d)));
        }
        let beta = self.model.beta;
        if !(0.0..1.0).contains(&beta) {
            return Err(HomError::Config(format!("beta={beta} must lie in [0, 1)")));
        }
        if self.solver.tol.is_nan() || self.solver.tol <= 0.0 {
            return Err(HomError::Config(format!("solver tolerance {} must be positive", self.solver.tol)));
        }
        if !(self.radii.c0 > 0.0 && self.radii.m0 >= 1.0) {
            return Err(HomError::Config("need c0 > 0 and m0 >= 1".into()));
        }
        if self.n == 0 {
            return Err(HomError::Config("n must be positive".into()));
        }
        match experiment {
            Experiment::Twoscale => {
                let t = self.twoscale.as_ref().ok_or_else(|| HomError::Config("missing [twoscale] section".into()))?;
                if t.deltas.is_empty() || t.realizations == 0 {
                    return Err(HomError::Config("twoscale needs deltas and realizations".into()));
                }
            }
            Experiment::Sgcheck => {
                let s = self.sgcheck.as_ref().ok_or_else(|| HomError::Config("missing [sgcheck] section".into()))?;
                if s.functionals.is_empty() {
                    return Err(HomError::Config("sgcheck needs at least one functional".into()));
                }
            }
            Experiment::Verify => {
                if let Some(v) = &self.verify {
                    if !(v.tol > 0.0 && v.dense_tol > 0.0) {
                        return Err(HomError::Config("verify tolerances must be positive".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..8])
    }
}
