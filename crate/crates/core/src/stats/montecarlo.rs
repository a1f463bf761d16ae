//! Monte Carlo tails of the ellipticity and minimal radii.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::field::empirical_k;
use crate::grid::GridSpec;
use crate::models::{sample_field, EnsembleModel};
use crate::radii::{harmonic_probe, hole_filling_exponent, radius_report, HoleFilling, RadiusConfig, RadiusReport, DEFAULT_C0, DEFAULT_M0};
use crate::solver::{solve_extended_corrector, SolverConfig};

use super::seeds::derive_seed;
use super::survival::{tail_estimate, TailEstimate};

pub const MIN_REALIZATIONS: usize = 50;

/// How the moment constant `K` of the ellipticity radius is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KPolicy {
    Fixed {
        k: f64,
    },
    /// Pooled empirical moments of `pilot` independent realizations.
    Empirical {
        pilot: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n: usize,
    pub c0: f64,
    pub m0: f64,
    pub k: KPolicy,
    pub solver: SolverConfig,
    pub beta: f64,
    pub n_boot: usize,
    /// Realizations used to measure the hole-filling exponent.
    pub eps_samples: usize,
    pub master_seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n: 200,
            c0: DEFAULT_C0,
            m0: DEFAULT_M0,
            k: KPolicy::Empirical { pilot: 32 },
            solver: SolverConfig::default(),
            beta: 0.0,
            n_boot: 1000,
            eps_samples: 4,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloRadii {
    pub k: f64,
    pub reports: Vec<RadiusReport>,
    pub r_e: TailEstimate,
    pub r_star: TailEstimate,
    pub eps: Option<HoleFilling>,
    pub warnings: Vec<String>,
}

pub fn resolve_k(model: &EnsembleModel, grid: &GridSpec, policy: KPolicy, master_seed: u64) -> Result<f64> {
    match policy {
        KPolicy::Fixed { k } if k > 0.0 => Ok(k),
        KPolicy::Fixed { k } => Err(HomError::InvalidArgument(format!("K={k} must be positive"))),
        KPolicy::Empirical { pilot } => {
            if pilot == 0 {
                return Err(HomError::InvalidArgument("empty pilot".into()));
            }
            let fields = (0..pilot)
                .into_par_iter()
                .map(|i| sample_field(model, grid, derive_seed(master_seed, "pilot", i as u64)))
                .collect::<Result<Vec<_>>>()?;
            empirical_k(&fields, model.p, model.q)
        }
    }
}

/// Stretch orders predicted for `r_e` and `r_*` (the second needs a measured `eps`).
pub fn target_orders(model: &EnsembleModel, d: usize, beta: f64, eps: Option<f64>) -> (f64, f64) {
    let base = 0.5 * d as f64 * (1.0 - beta);
    (model.alpha / (model.alpha + 1.0) * base, eps.map_or(f64::NAN, |e| e * base))
}

pub fn monte_carlo_radii(model: &EnsembleModel, grid: &GridSpec, cfg: &MonteCarloConfig) -> Result<MonteCarloRadii> {
    if cfg.n < MIN_REALIZATIONS {
        return Err(HomError::InvalidArgument(format!("need at least {MIN_REALIZATIONS} realizations, got {}", cfg.n)));
    }
    let k = resolve_k(model, grid, cfg.k, cfg.master_seed)?;
    let rcfg = RadiusConfig { p: model.p, q: model.q, k, c0: cfg.c0, m0: cfg.m0 };
    let eps_samples = cfg.eps_samples.min(cfg.n);
    let inner = (grid.l / 4) as f64;
    let probe_radii: Vec<f64> = std::iter::successors(Some(2.0), |r| Some(r * 2.0)).take_while(|r| *r <= inner).collect();

    let per: Vec<(RadiusReport, Option<f64>)> = (0..cfg.n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let field = sample_field(model, grid, derive_seed(cfg.master_seed, "realization", i as u64))?;
            let sol = solve_extended_corrector(&field, &cfg.solver)?;
            if let Some(s) = sol.stats.iter().find(|s| !s.converged) {
                return Err(HomError::NotConverged { iterations: s.iterations, residual: s.relative_residual });
            }
            let report = radius_report(&field, &sol, &rcfg)?;
            let slope = if i < eps_samples && probe_radii.len() >= 3 {
                let mut xi = vec![0.0; grid.d];
                xi[0] = 1.0;
                let probe = harmonic_probe(&sol.op, &xi, inner, cfg.solver.tol)?;
                Some(hole_filling_exponent(&sol.op, &[probe], &probe_radii)?.eps_d)
            } else {
                None
            };
            Ok((report, slope))
        })
        .collect::<Result<Vec<_>>>()?;

    let slopes: Vec<f64> = per.iter().filter_map(|p| p.1).collect();
    let eps = (!slopes.is_empty()).then(|| {
        let m = slopes.iter().sum::<f64>() / slopes.len() as f64;
        let half = if slopes.len() >= 2 {
            let var = slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64;
            1.96 * (var / slopes.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        HoleFilling { eps_d: m, eps: m / grid.d as f64, ci: (m - half, m + half), per_sample: slopes.clone() }
    });

    let reports: Vec<RadiusReport> = per.into_iter().map(|p| p.0).collect();
    let cap = grid.max_radius() as f64;
    let radii: Vec<f64> = (1..=grid.max_radius()).map(|r| r as f64).collect();
    let (order_e, order_star) = target_orders(model, grid.d, cfg.beta, eps.as_ref().map(|h| h.eps));
    let re: Vec<f64> = reports.iter().map(|r| r.r_e).collect();
    let re_c: Vec<bool> = reports.iter().map(|r| r.r_e_truncated).collect();
    let rs: Vec<f64> = reports.iter().map(|r| r.r_star).collect();
    let rs_c: Vec<bool> = reports.iter().map(|r| r.r_star_truncated).collect();
    let boot_seed = derive_seed(cfg.master_seed, "bootstrap", 0);
    let r_e = tail_estimate(&re, &re_c, &radii, cap, order_e, cfg.n_boot, boot_seed);
    let r_star = tail_estimate(&rs, &rs_c, &radii, cap, order_star, cfg.n_boot, boot_seed ^ 1);
    let mut warnings = Vec::new();
    for (name, t) in [("r_e", &r_e), ("r_star", &r_star)] {
        warnings.extend(t.warnings.iter().map(|w| format!("{name}: {w}")));
    }
    Ok(MonteCarloRadii { k, reports, r_e, r_star, eps, warnings })
}
