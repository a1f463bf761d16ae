//! Ellipticity radius, minimal radius, excess and hole-filling diagnostics.
//!
//! All radii are in cell units and scanned over the integers `1..=L/2`;
//! `B_rho` is the discrete torus ball around the origin cell.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::field::{mu_lambda, CoefficientField};
use crate::grid::{Balls, GridSpec};
use crate::solver::{solve_divergence_rhs, CorrectorSolution, DiscreteOperator};

pub const DEFAULT_C0: f64 = 16.0;
pub const DEFAULT_M0: f64 = 8.0;

/// Scanned radii `1..=L/2`.
pub fn scan_radii(grid: &GridSpec) -> Vec<usize> {
    (1..=grid.max_radius()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityScan {
    pub rho: Vec<usize>,
    /// `(avg_{B_rho} mu^p)^(1/p)`.
    pub mu_avg: Vec<f64>,
    /// `(avg_{B_rho} lambda^-q)^(1/q)`.
    pub lambda_avg: Vec<f64>,
    pub r_e: f64,
    pub truncated: bool,
}

/// Smallest scanned `r` such that `pred` holds at every scanned radius above it,
/// with the floor `lo`; `None` when it fails at the largest radius.
fn smallest_radius(rho: &[usize], lo: f64, pred: impl Fn(usize) -> bool) -> Option<f64> {
    let last_fail = (0..rho.len()).rev().find(|&t| (rho[t] as f64) > lo && !pred(t));
    match last_fail {
        Some(t) if t + 1 == rho.len() => None,
        Some(t) => Some((rho[t] as f64).max(lo)),
        None => Some(lo),
    }
}

pub fn ellipticity_radius(field: &CoefficientField, p: f64, q: f64, k: f64) -> Result<EllipticityScan> {
    if !(k > 0.0) || !(p > 1.0) || !(q > 1.0) {
        return Err(HomError::InvalidArgument(format!("need K > 0, p, q > 1 (K={k}, p={p}, q={q})")));
    }
    let grid = field.grid;
    let el = mu_lambda(field)?;
    let balls = Balls::new(&grid);
    let rho = scan_radii(&grid);
    let order = balls.all();
    let mut mu_avg = Vec::with_capacity(rho.len());
    let mut lambda_avg = Vec::with_capacity(rho.len());
    let (mut smu, mut slam, mut count) = (0.0, 0.0, 0usize);
    for &r in &rho {
        let target = balls.count(r as f64);
        while count < target {
            let x = order[count];
            smu += el.mu[x].powf(p);
            slam += el.lambda[x].powf(-q);
            count += 1;
        }
        mu_avg.push((smu / count as f64).powf(1.0 / p));
        lambda_avg.push((slam / count as f64).powf(1.0 / q));
    }
    let holds = |t: usize| mu_avg[t] + lambda_avg[t] <= 4.0 * k;
    let (r_e, truncated) = match smallest_radius(&rho, 1.0, holds) {
        Some(r) => (r, false),
        None => (grid.max_radius() as f64, true),
    };
    Ok(EllipticityScan { rho, mu_avg, lambda_avg, r_e, truncated })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Sublinearity {
    pub phi: f64,
    pub sigma: f64,
}

impl Sublinearity {
    pub fn x(&self) -> f64 {
        self.phi.max(self.sigma)
    }
}

/// `(avg_B |v - avg_B v|^s)^(1/s)` for a vector-valued field given as component slices.
fn oscillation(components: &[&[f64]], cells: &[usize], s: f64) -> f64 {
    let m = cells.len() as f64;
    let means: Vec<f64> = components.iter().map(|c| cells.iter().map(|&x| c[x]).sum::<f64>() / m).collect();
    let total: f64 = cells
        .iter()
        .map(|&x| {
            let n2: f64 = components.iter().zip(&means).map(|(c, mu)| (c[x] - mu).powi(2)).sum();
            n2.powf(s / 2.0)
        })
        .sum();
    (total / m).powf(1.0 / s)
}

fn sigma_components(sol: &CorrectorSolution) -> Vec<Vec<f64>> {
    // every (i, j, k) with j != k, so |sigma| is the full Frobenius norm
    let d = sol.d();
    let n = sol.op.n();
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                if j != k {
                    out.push((0..n).map(|x| sol.sigma_at(i, j, k, x)).collect());
                }
            }
        }
    }
    out
}

/// The two normalized oscillation terms of `X(rho)` with the ball and exponents given.
pub fn sublinearity_functional(sol: &CorrectorSolution, balls: &Balls, rho: f64, p: f64, q: f64) -> Sublinearity {
    let sig = sigma_components(sol);
    sublinearity_with(sol, &sig, balls, rho, p, q)
}

fn sublinearity_with(sol: &CorrectorSolution, sig: &[Vec<f64>], balls: &Balls, rho: f64, p: f64, q: f64) -> Sublinearity {
    let cells = balls.cells(rho);
    let phi: Vec<&[f64]> = sol.phi.iter().map(|v| v.as_slice()).collect();
    let sg: Vec<&[f64]> = sig.iter().map(|v| v.as_slice()).collect();
    Sublinearity { phi: oscillation(&phi, cells, 2.0 * p / (p - 1.0)) / rho, sigma: oscillation(&sg, cells, 2.0 * q / (q - 1.0)) / rho }
}

/// `X(rho)` for every scanned radius.
pub fn sublinearity_scan(sol: &CorrectorSolution, p: f64, q: f64) -> Vec<Sublinearity> {
    let grid = *sol.grid();
    let balls = Balls::new(&grid);
    let sig = sigma_components(sol);
    scan_radii(&grid).par_iter().map(|&r| sublinearity_with(sol, &sig, &balls, r as f64, p, q)).collect()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MinimalRadius {
    pub r_star: f64,
    pub truncated: bool,
}

/// Smallest scanned `r >= m0 r_e` with `X(rho) <= 1/c0` for all scanned `rho > r`.
pub fn minimal_radius(rho: &[usize], x: &[f64], r_e: f64, c0: f64, m0: f64) -> MinimalRadius {
    let cap = rho.last().copied().unwrap_or(1) as f64;
    let floor = m0 * r_e;
    if floor > cap {
        return MinimalRadius { r_star: cap, truncated: true };
    }
    match smallest_radius(rho, floor, |t| x[t] <= 1.0 / c0) {
        Some(r) => MinimalRadius { r_star: r, truncated: false },
        None => MinimalRadius { r_star: cap, truncated: true },
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiusConfig {
    pub p: f64,
    pub q: f64,
    pub k: f64,
    pub c0: f64,
    pub m0: f64,
}

/// One realization's radii with the tables that determine them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiusReport {
    pub seed: u64,
    pub model_id: String,
    pub k: f64,
    pub c0: f64,
    pub m0: f64,
    pub p: f64,
    pub q: f64,
    pub r_e: f64,
    pub r_star: f64,
    pub r_e_truncated: bool,
    pub r_star_truncated: bool,
    pub rho: Vec<usize>,
    pub mu_avg: Vec<f64>,
    pub lambda_avg: Vec<f64>,
    pub x_phi: Vec<f64>,
    pub x_sigma: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn radius_report(field: &CoefficientField, sol: &CorrectorSolution, cfg: &RadiusConfig) -> Result<RadiusReport> {
    let el = ellipticity_radius(field, cfg.p, cfg.q, cfg.k)?;
    let xs = sublinearity_scan(sol, cfg.p, cfg.q);
    let x: Vec<f64> = xs.iter().map(|s| s.x()).collect();
    let mr = minimal_radius(&el.rho, &x, el.r_e, cfg.c0, cfg.m0);
    Ok(RadiusReport {
        seed: field.seed,
        model_id: field.model_id.clone(),
        k: cfg.k,
        c0: cfg.c0,
        m0: cfg.m0,
        p: cfg.p,
        q: cfg.q,
        r_e: el.r_e,
        r_star: mr.r_star,
        r_e_truncated: el.truncated,
        r_star_truncated: mr.truncated || el.truncated,
        rho: el.rho,
        mu_avg: el.mu_avg,
        lambda_avg: el.lambda_avg,
        x_phi: xs.iter().map(|s| s.phi).collect(),
        x_sigma: xs.iter().map(|s| s.sigma).collect(),
        x,
    })
}

impl RadiusReport {
    /// Re-evaluates the defining predicates on the stored tables.
    pub fn recheck(&self) -> Result<()> {
        for (t, &r) in self.rho.iter().enumerate() {
            let r = r as f64;
            if !self.r_e_truncated && r > self.r_e && self.mu_avg[t] + self.lambda_avg[t] > 4.0 * self.k {
                return Err(HomError::Inconsistent(format!("ellipticity bound fails at rho={r} > r_e={}", self.r_e)));
            }
            if !self.r_star_truncated && r > self.r_star && self.x[t] > 1.0 / self.c0 {
                return Err(HomError::Inconsistent(format!("X({r}) > 1/C0 above r_star={}", self.r_star)));
            }
        }
        let cap = self.rho.last().copied().unwrap_or(1) as f64;
        if !self.r_star_truncated && (self.r_star < self.m0 * self.r_e || self.r_star > cap) {
            return Err(HomError::Inconsistent("r_star outside [M0 r_e, L/2]".into()));
        }
        if !self.r_e_truncated && self.r_e > 1.0 {
            let t = self.rho.iter().position(|&r| r as f64 == self.r_e).unwrap_or(0);
            if self.mu_avg[t] + self.lambda_avg[t] <= 4.0 * self.k {
                return Err(HomError::Inconsistent(format!("r_e={} is not minimal", self.r_e)));
            }
        }
        Ok(())
    }
}

/// `|v|_a^2` per cell for an edge field.
pub fn energy_density(op: &DiscreteOperator, v: &[f64]) -> Vec<f64> {
    let d = op.d();
    let av = op.apply_blocks(v);
    (0..op.n()).map(|x| (0..d).map(|k| v[x * d + k] * av[x * d + k]).sum()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Excess {
    pub value: f64,
    pub xi: Vec<f64>,
    /// Condition number of the non-degeneracy Gram matrix.
    pub gram_condition: f64,
    pub ill_conditioned: bool,
}

/// `inf_xi avg_{B_rho} |grad u - (xi + grad phi_xi)|_a^2` for an edge field `u_grad`.
pub fn excess(u_grad: &[f64], sol: &CorrectorSolution, balls: &Balls, rho: f64) -> Excess {
    let d = sol.d();
    let op = &sol.op;
    let cells = balls.cells(rho);
    let m = cells.len() as f64;
    // psi_i = e_i + G phi_i restricted to the ball
    let psi = |i: usize, x: usize, k: usize| sol.grad_phi[i][x * d + k] + if i == k { 1.0 } else { 0.0 };
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for &x in cells {
        let b = op.block(x);
        for i in 0..d {
            let bpsi: Vec<f64> = (0..d).map(|r| (0..d).map(|c| b[r][c] * psi(i, x, c)).sum()).collect();
            for j in 0..d {
                gram[(i, j)] += (0..d).map(|k| psi(j, x, k) * bpsi[k]).sum::<f64>() / m;
            }
            rhs[i] += (0..d).map(|k| u_grad[x * d + k] * bpsi[k]).sum::<f64>() / m;
        }
    }
    let svd = gram.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let ill = !(cond < 1e12);
    let xi = svd.solve(&rhs, smax * 1e-14).unwrap_or_else(|_| DVector::zeros(d));
    let xi: Vec<f64> = xi.iter().copied().collect();
    Excess { value: excess_at(u_grad, sol, cells, &xi), xi, gram_condition: cond, ill_conditioned: ill }
}

/// `avg_cells |u_grad - (xi + grad phi_xi)|_a^2` for a fixed `xi`.
pub fn excess_at(u_grad: &[f64], sol: &CorrectorSolution, cells: &[usize], xi: &[f64]) -> f64 {
    let d = sol.d();
    let total: f64 = cells
        .iter()
        .map(|&x| {
            let b = sol.op.block(x);
            let r: Vec<f64> =
                (0..d).map(|k| u_grad[x * d + k] - xi[k] - (0..d).map(|i| xi[i] * sol.grad_phi[i][x * d + k]).sum::<f64>()).collect();
            (0..d).map(|i| (0..d).map(|j| r[i] * b[i][j] * r[j]).sum::<f64>()).sum::<f64>()
        })
        .sum();
    total / cells.len() as f64
}

/// `Exc(r) (R/r)^(2 alpha) / Exc(R)`.
pub fn excess_decay_ratio(u_grad: &[f64], sol: &CorrectorSolution, balls: &Balls, r: f64, big_r: f64, alpha: f64) -> Result<f64> {
    if !(r > 0.0 && r < big_r) {
        return Err(HomError::InvalidArgument(format!("need 0 < r < R, got r={r}, R={big_r}")));
    }
    let small = excess(u_grad, sol, balls, r).value;
    let large = excess(u_grad, sol, balls, big_r).value;
    if large < 1e-14 {
        return Err(HomError::Rejected(format!("Exc({big_r}) = {large:e}: exact degeneracy, ratio undefined")));
    }
    Ok(small * (big_r / r).powf(2.0 * alpha) / large)
}

/// Gradient of `xi . x + w` where `w` cancels the affine drive outside `B_inner`,
/// so the result is a-harmonic on `B_inner` but not a corrected affine function.
pub fn harmonic_probe(op: &DiscreteOperator, xi: &[f64], inner: f64, tol: f64) -> Result<Vec<f64>> {
    let d = op.d();
    let grid = op.grid;
    let zero = vec![0.0; op.n()];
    let mut drive = op.flux(xi, &zero);
    let cut = (inner + 2.0).powi(2);
    for x in 0..op.n() {
        if grid.dist2(x) as f64 > cut {
            drive[x * d..(x + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let w = solve_divergence_rhs(op, &drive, tol)?;
    if !w.stats.converged {
        return Err(HomError::NotConverged { iterations: w.stats.iterations, residual: w.stats.relative_residual });
    }
    let mut g = op.gradient(&w.x);
    g.chunks_mut(d).for_each(|gx| gx.iter_mut().zip(xi).for_each(|(v, s)| *v += s));
    Ok(g)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HoleFilling {
    /// Pooled slope of `log int_{B_r} |grad u|_a^2` against `log r`.
    pub eps_d: f64,
    pub eps: f64,
    /// 95% interval for `eps_d`.
    pub ci: (f64, f64),
    pub per_sample: Vec<f64>,
}

/// Ball energies `int_{B_r} |v|_a^2` (sums, not averages) for each radius.
pub fn ball_energies(op: &DiscreteOperator, balls: &Balls, v: &[f64], radii: &[f64]) -> Vec<f64> {
    let e = energy_density(op, v);
    radii.iter().map(|&r| balls.cells(r).iter().map(|&x| e[x]).sum()).collect()
}

fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

/// Measures the hole-filling exponent from a-harmonic gradient samples.
pub fn hole_filling_exponent(op: &DiscreteOperator, samples: &[Vec<f64>], radii: &[f64]) -> Result<HoleFilling> {
    if radii.len() < 3 {
        return Err(HomError::InvalidArgument("hole filling needs at least 3 radii".into()));
    }
    if samples.is_empty() {
        return Err(HomError::InvalidArgument("hole filling needs at least one sample".into()));
    }
    let balls = Balls::new(&op.grid);
    let lr: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut per_sample = Vec::new();
    let mut pooled_se = f64::NAN;
    for v in samples {
        let e = ball_energies(op, &balls, v, radii);
        let le: Vec<f64> = e.iter().map(|v| v.max(1e-300).ln()).collect();
        let (s, se) = ols_slope(&lr, &le);
        per_sample.push(s);
        pooled_se = se;
        xs.extend_from_slice(&lr);
        ys.extend_from_slice(&le);
    }
    let d = op.d() as f64;
    let eps_d = if samples.len() == 1 { per_sample[0] } else { ols_slope(&xs, &ys).0 };
    let half = if per_sample.len() >= 2 {
        let m = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let var = per_sample.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (per_sample.len() - 1) as f64;
        1.96 * (var / per_sample.len() as f64).sqrt()
    } else {
        1.96 * pooled_se
    };
    Ok(HoleFilling { eps_d, eps: eps_d / d, ci: (eps_d - half, eps_d + half), per_sample })
}
