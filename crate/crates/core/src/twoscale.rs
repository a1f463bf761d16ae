//! Quantitative two-scale expansion on the torus.
//!
//! Everything is computed in microscopic cells (`delta = 1`): for a macro
//! torus of side `T` and scale `delta`, the lattice has `L = T / delta` cells
//! and a macro field `g` enters as `delta * g` sampled at edge midpoints.
//! With `v` the radius-one ball average of `u_hom`, `w_i = D_i v` and
//! `z = u - v - phi_i w_i`, the error solves
//!
//! `G^T A G z + G^T (g - g_1 + A Phi - S) = 0`,
//!
//! where `g_1` is the ball average of `g`,
//! `Phi_k(x) = sum_i phi_i(x + e_k) D_k w_i(x)` and
//! `S_j(x) = sum_(i,k) sigma_ijk(x - e_k) (w_i(x) - w_i(x - e_k))`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fft::LatticeFft;
use crate::field::{empirical_k, CoefficientField};
use crate::grid::{ball_kernel, GridSpec};
use crate::models::{block_rng, sample_field, translate, EnsembleModel};
use crate::radii::ellipticity_radius;
use crate::solver::operator::dot;
use crate::solver::{solve_divergence_rhs, solve_extended_corrector, DiscreteOperator, SolverConfig};
use crate::stats::growth::{loglog_slope, RegimeParams, Slope};
use crate::stats::seeds::derive_seed;

/// Macro right-hand side `g`, compactly supported around the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MacroLoad {
    Zero,
    /// `g(X) = amplitude * psi(|X| / radius)` with `psi(s) = exp(1 - 1/(1 - s^2))` on `s < 1`.
    Bump {
        amplitude: Vec<f64>,
        radius: f64,
    },
}

fn psi(s: f64) -> (f64, f64) {
    if s >= 1.0 {
        return (0.0, 0.0);
    }
    let den = 1.0 - s * s;
    let v = (1.0 - 1.0 / den).exp();
    (v, -2.0 * s / (den * den) * v)
}

impl MacroLoad {
    pub fn support_radius(&self) -> f64 {
        match self {
            MacroLoad::Zero => 0.0,
            MacroLoad::Bump { radius, .. } => *radius,
        }
    }

    /// Component `k` of `g` at macro point `x`.
    pub fn value(&self, x: &[f64], k: usize) -> f64 {
        match self {
            MacroLoad::Zero => 0.0,
            MacroLoad::Bump { amplitude, radius } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                amplitude[k] * psi(r / radius).0
            }
        }
    }

    /// `|grad g|^2` (Frobenius) at macro point `x`.
    pub fn grad_norm_sq(&self, x: &[f64]) -> f64 {
        match self {
            MacroLoad::Zero => 0.0,
            MacroLoad::Bump { amplitude, radius } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dpsi = psi(r / radius).1 / radius;
                amplitude.iter().map(|a| a * a).sum::<f64>() * dpsi * dpsi
            }
        }
    }
}

/// Macro coordinates of the cell centers of a grid with spacing `h`.
fn cell_center(grid: &GridSpec, x: usize, h: f64) -> Vec<f64> {
    let c = grid.signed_coords(x);
    (0..grid.d).map(|k| c[k] as f64 * h).collect()
}

/// `delta * g` at the edge midpoints of the micro lattice.
pub fn sample_load(load: &MacroLoad, grid: &GridSpec, delta: f64) -> Vec<f64> {
    let d = grid.d;
    let mut g = vec![0.0; grid.n_cells() * d];
    for x in 0..grid.n_cells() {
        let center = cell_center(grid, x, delta);
        for k in 0..d {
            let mut mid = center.clone();
            mid[k] += 0.5 * delta;
            g[x * d + k] = delta * load.value(&mid, k);
        }
    }
    g
}

/// Discrete `(h^d sum mu(|x|)^2 |grad g|^2)^(1/2)` with `|grad g|^2` given per cell.
pub fn weighted_norm(grad_sq: &[f64], grid: &GridSpec, h: f64, regime: &RegimeParams) -> f64 {
    let s: f64 = (0..grid.n_cells())
        .map(|x| {
            let r = (grid.dist2(x) as f64).sqrt() * h;
            regime.mu(r).powi(2) * grad_sq[x]
        })
        .sum();
    (h.powi(grid.d as i32) * s).sqrt()
}

/// Ingredients of the micro-scale identity.
pub struct TwoScaleFields {
    pub v: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

pub fn assemble_error(op: &DiscreteOperator, fft: &LatticeFft, u: &[f64], u_hom: &[f64], phi: &[Vec<f64>]) -> TwoScaleFields {
    let d = op.d();
    let n = op.n();
    let v = fft.convolve(u_hom, &ball_kernel(&op.grid, 1.0));
    let gv = op.gradient(&v);
    let w: Vec<Vec<f64>> = (0..d).map(|i| (0..n).map(|x| gv[x * d + i]).collect()).collect();
    let z = (0..n).map(|x| u[x] - v[x] - (0..d).map(|i| phi[i][x] * w[i][x]).sum::<f64>()).collect();
    TwoScaleFields { v, w, z }
}

/// `|G^T A G z + G^T h| / |G^T g|` for the right side `h = g - g_1 + A Phi - S`.
///
/// `sigma(i, j, k, x)` is read for every index triple, so non-skew tensors are
/// evaluated as given.
pub fn twoscale_identity_residual(
    op: &DiscreteOperator,
    fft: &LatticeFft,
    g: &[f64],
    u: &[f64],
    u_hom: &[f64],
    phi: &[Vec<f64>],
    sigma: &dyn Fn(usize, usize, usize, usize) -> f64,
) -> f64 {
    let d = op.d();
    let n = op.n();
    let nb = &op.nb;
    let TwoScaleFields { w, z, .. } = assemble_error(op, fft, u, u_hom, phi);
    let kernel = fft.forward_real(&ball_kernel(&op.grid, 1.0));
    let mut g1 = vec![0.0; n * d];
    for k in 0..d {
        let comp: Vec<f64> = (0..n).map(|x| g[x * d + k]).collect();
        for (x, v) in fft.convolve_hat(&comp, &kernel).into_iter().enumerate() {
            g1[x * d + k] = v;
        }
    }
    let gw: Vec<Vec<f64>> = w.iter().map(|wi| op.gradient(wi)).collect();
    let mut big_phi = vec![0.0; n * d];
    let mut s = vec![0.0; n * d];
    for x in 0..n {
        for k in 0..d {
            big_phi[x * d + k] = (0..d).map(|i| phi[i][nb.up(x, k)] * gw[i][x * d + k]).sum();
        }
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                for k in 0..d {
                    let y = nb.down(x, k);
                    acc += sigma(i, j, k, y) * (w[i][x] - w[i][y]);
                }
            }
            s[x * d + j] = acc;
        }
    }
    let a_phi = op.apply_blocks(&big_phi);
    let h: Vec<f64> = (0..n * d).map(|e| g[e] - g1[e] + a_phi[e] - s[e]).collect();
    let lhs = op.apply(&z);
    let rhs = op.grad_transpose(&h);
    let res: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a + b).collect();
    let gtg = op.grad_transpose(g);
    let scale = dot(&gtg, &gtg).sqrt();
    if scale == 0.0 {
        return dot(&res, &res).sqrt();
    }
    dot(&res, &res).sqrt() / scale
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoScaleConfig {
    /// Macro torus side `T`.
    pub macro_length: f64,
    pub deltas: Vec<f64>,
    pub load: MacroLoad,
    pub tol: f64,
    pub realizations: usize,
    pub master_seed: u64,
    /// Integrability exponent in the first error term.
    pub q: f64,
    pub regime: RegimeParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaPoint {
    pub delta: f64,
    pub l: usize,
    pub realization: usize,
    pub seed: u64,
    pub energy_error: f64,
    /// `delta^(1 + d/(2q)) |grad g|_(L^(2q/(q-1)))`.
    pub term1: f64,
    /// `delta mu(1/delta) (int mu(|x|)^2 |grad g|^2)^(1/2)`.
    pub term2: f64,
    pub identity_residual: f64,
    /// Load radius in cells is below the realization's ellipticity radius.
    pub r_e_flag: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub accepted: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoScaleResult {
    pub points: Vec<DeltaPoint>,
    pub summary: Vec<DeltaSummary>,
    pub order: Option<Slope>,
    pub max_identity_residual: f64,
}

/// Micro lattice side for one scale; `T / delta` must be an integer.
pub fn lattice_side(macro_length: f64, delta: f64) -> Result<usize> {
    let l = macro_length / delta;
    let rounded = l.round();
    if !(delta > 0.0) || (l - rounded).abs() > 1e-9 * l.max(1.0) || rounded < 4.0 {
        return Err(HomError::Config(format!("T/delta = {macro_length}/{delta} is not an integer lattice side >= 4")));
    }
    Ok(rounded as usize)
}

fn realize(model: &EnsembleModel, grid: &GridSpec, seed: u64) -> Result<CoefficientField> {
    let field = sample_field(model, grid, seed)?;
    if model.is_deterministic() {
        // periodic ensembles are stationary under uniformly random translations
        let mut rng = block_rng(seed, u64::MAX);
        let shift: Vec<i64> = (0..grid.d).map(|_| rng.random_range(0..grid.l as i64)).collect();
        return Ok(translate(&field, &shift));
    }
    Ok(field)
}

/// One scale and one realization.
pub fn twoscale_point(
    model: &EnsembleModel,
    d: usize,
    cfg: &TwoScaleConfig,
    delta: f64,
    realization: usize,
    seed: u64,
) -> Result<DeltaPoint> {
    let l = lattice_side(cfg.macro_length, delta)?;
    let grid = GridSpec::unit(d, l)?;
    let field = realize(model, &grid, seed)?;
    let sol = solve_extended_corrector(&field, &SolverConfig::with_tol(cfg.tol))?;
    if let Some(s) = sol.stats.iter().find(|s| !s.converged) {
        return Err(HomError::NotConverged { iterations: s.iterations, residual: s.relative_residual });
    }
    let op = &sol.op;
    let fft = LatticeFft::new(&grid);
    let g = sample_load(&cfg.load, &grid, delta);
    let u = solve_divergence_rhs(op, &g, cfg.tol)?;
    if !u.stats.converged {
        return Err(HomError::NotConverged { iterations: u.stats.iterations, residual: u.stats.relative_residual });
    }
    let rhs: Vec<f64> = op.grad_transpose(&g).into_iter().map(|v| -v).collect();
    let u_hom = fft.solve_constant(&sol.a_hom, &rhs);
    let sigma = |i: usize, j: usize, k: usize, x: usize| sol.sigma_at(i, j, k, x);
    let residual = twoscale_identity_residual(op, &fft, &g, &u.x, &u_hom, &sol.phi, &sigma);
    if residual > 100.0 * cfg.tol {
        return Err(HomError::Inconsistent(format!("two-scale identity residual {residual:e} exceeds 100 tol at delta={delta}")));
    }
    let fields = assemble_error(op, &fft, &u.x, &u_hom, &sol.phi);
    let gz = op.gradient(&fields.z);
    let energy = (delta.powi(d as i32 - 2) * dot(&gz, &op.apply_blocks(&gz))).sqrt();

    let hd = delta.powi(d as i32);
    let grad_sq: Vec<f64> = (0..grid.n_cells()).map(|x| cfg.load.grad_norm_sq(&cell_center(&grid, x, delta))).collect();
    let s = 2.0 * cfg.q / (cfg.q - 1.0);
    let lq = (hd * grad_sq.iter().map(|v| v.powf(s / 2.0)).sum::<f64>()).powf(1.0 / s);
    let term1 = delta.powf(1.0 + d as f64 / (2.0 * cfg.q)) * lq;
    let term2 = delta * cfg.regime.mu(1.0 / delta) * weighted_norm(&grad_sq, &grid, delta, &cfg.regime);

    let k = empirical_k(std::slice::from_ref(&field), model.p, model.q)?;
    let r_e = ellipticity_radius(&field, model.p, model.q, k)?.r_e;
    let r_e_flag = cfg.load.support_radius() / delta < r_e;
    Ok(DeltaPoint { delta, l, realization, seed, energy_error: energy, term1, term2, identity_residual: residual, r_e_flag, error: None })
}

pub fn run_twoscale(model: &EnsembleModel, d: usize, cfg: &TwoScaleConfig) -> Result<TwoScaleResult> {
    if !(cfg.tol > 0.0) || cfg.realizations == 0 || cfg.deltas.is_empty() {
        return Err(HomError::Config("two-scale run needs tol > 0, realizations >= 1 and at least one delta".into()));
    }
    if !(cfg.q > 1.0) {
        return Err(HomError::Config(format!("q={} must exceed 1", cfg.q)));
    }
    if let MacroLoad::Bump { amplitude, radius } = &cfg.load {
        if amplitude.len() != d || !(*radius > 0.0) {
            return Err(HomError::Config("load amplitude must have d entries and a positive radius".into()));
        }
    }
    // guard band: the support stays a quarter torus away from its periodic images
    if cfg.load.support_radius() > cfg.macro_length / 4.0 {
        return Err(HomError::Config(format!("load radius {} exceeds T/4 = {}", cfg.load.support_radius(), cfg.macro_length / 4.0)));
    }
    for &delta in &cfg.deltas {
        lattice_side(cfg.macro_length, delta)?;
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.deltas.len()).flat_map(|t| (0..cfg.realizations).map(move |r| (t, r))).collect();
    let points: Vec<DeltaPoint> = jobs
        .par_iter()
        .map(|&(t, r)| {
            let delta = cfg.deltas[t];
            let seed = derive_seed(cfg.master_seed, "twoscale", (t * cfg.realizations + r) as u64);
            twoscale_point(model, d, cfg, delta, r, seed).or_else(|e| match e {
                HomError::Inconsistent(_) => Err(e),
                other => Ok(DeltaPoint {
                    delta,
                    l: lattice_side(cfg.macro_length, delta).unwrap_or(0),
                    realization: r,
                    seed,
                    energy_error: f64::NAN,
                    term1: f64::NAN,
                    term2: f64::NAN,
                    identity_residual: f64::NAN,
                    r_e_flag: false,
                    error: Some(other.to_string()),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary: Vec<DeltaSummary> = cfg
        .deltas
        .iter()
        .map(|&delta| {
            let e: Vec<f64> = points.iter().filter(|p| p.delta == delta && p.error.is_none()).map(|p| p.energy_error).collect();
            let n = e.len() as f64;
            let mean = e.iter().sum::<f64>() / n;
            let var = if e.len() > 1 { e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            DeltaSummary { delta, mean_error: mean, std_error: (var / n).sqrt(), accepted: e.len() }
        })
        .collect();
    let ds: Vec<f64> = summary.iter().filter(|s| s.accepted > 0).map(|s| s.delta).collect();
    let es: Vec<f64> = summary.iter().filter(|s| s.accepted > 0).map(|s| s.mean_error).collect();
    let max_identity_residual = points.iter().filter(|p| p.error.is_none()).map(|p| p.identity_residual).fold(0.0, f64::max);
    Ok(TwoScaleResult { order: loglog_slope(&ds, &es), summary, points, max_identity_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    fn cfg(load: MacroLoad, deltas: Vec<f64>) -> TwoScaleConfig {
        TwoScaleConfig {
            macro_length: 4.0,
            deltas,
            load,
            tol: 1e-9,
            realizations: 1,
            master_seed: 3,
            q: 4.0,
            regime: RegimeParams { beta: 0.0, eps_d: 4.0 },
        }
    }

    fn bump() -> MacroLoad {
        MacroLoad::Bump { amplitude: vec![1.0, 0.5], radius: 1.0 }
    }

    #[test]
    fn zero_load_gives_zero_error() {
        let r = run_twoscale(&EnsembleModel::identity(), 2, &cfg(MacroLoad::Zero, vec![0.25, 0.125])).unwrap();
        assert!(r.points.iter().all(|p| p.energy_error == 0.0 && p.identity_residual == 0.0));
    }

    #[test]
    fn identity_field_is_mollification_error() {
        let c = cfg(bump(), vec![0.125]);
        let p = twoscale_point(&EnsembleModel::identity(), 2, &c, 0.125, 0, 0).unwrap();
        assert!(p.identity_residual <= 10.0 * c.tol, "{p:?}");
        // direct: grad of u_hom minus its ball average, u_hom by FFT
        let grid = GridSpec::unit(2, 32).unwrap();
        let fft = LatticeFft::new(&grid);
        let op = DiscreteOperator::assemble(&CoefficientField::identity(grid), Default::default()).unwrap();
        let g = sample_load(&c.load, &grid, 0.125);
        let rhs: Vec<f64> = op.grad_transpose(&g).into_iter().map(|v| -v).collect();
        let uh = fft.poisson(&rhs);
        let v = fft.convolve(&uh, &ball_kernel(&grid, 1.0));
        let diff: Vec<f64> = uh.iter().zip(&v).map(|(a, b)| a - b).collect();
        let gd = op.gradient(&diff);
        let direct = dot(&gd, &gd).sqrt();
        assert!((p.energy_error - direct).abs() <= 1e-8 * direct, "{} vs {direct}", p.energy_error);
    }

    #[test]
    fn identity_holds_for_random_field() {
        let m = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: 0.5 }, 4.0, 4.0);
        let c = cfg(bump(), vec![0.25]);
        let p = twoscale_point(&m, 2, &c, 0.25, 0, 11).unwrap();
        assert!(p.identity_residual <= 100.0 * c.tol, "{p:?}");
        assert!(p.energy_error > 0.0);
    }

    #[test]
    fn rejects_bad_scales() {
        assert!(lattice_side(4.0, 0.3).is_err());
        assert_eq!(lattice_side(4.0, 0.125).unwrap(), 32);
        let mut c = cfg(bump(), vec![0.125]);
        c.load = MacroLoad::Bump { amplitude: vec![1.0, 0.0], radius: 1.5 };
        assert!(matches!(run_twoscale(&EnsembleModel::identity(), 2, &c), Err(HomError::Config(_))));
    }

    #[test]
    fn weighted_norm_regimes() {
        let g = GridSpec::unit(2, 32).unwrap();
        let sq: Vec<f64> = (0..g.n_cells()).map(|x| if g.dist2(x) <= 4 { 1.0 } else { 0.0 }).collect();
        let plain = (sq.iter().sum::<f64>() * 0.01).sqrt();
        let flat = RegimeParams { beta: 0.0, eps_d: 4.0 };
        assert!((weighted_norm(&sq, &g, 0.1, &flat) - plain).abs() < 1e-14);
        let power = RegimeParams { beta: 0.5, eps_d: 1.0 };
        assert!(weighted_norm(&sq, &g, 0.1, &power) >= power.mu(0.0) * plain);
    }
}
