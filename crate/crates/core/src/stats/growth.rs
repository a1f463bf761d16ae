//! Corrector growth curves, averaged gradients and the averaged-oscillation inequality.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fft::LatticeFft;
use crate::field::{mu_lambda, CoefficientField};
use crate::grid::{ball_kernel, Balls};
use crate::radii::{sublinearity_functional, Sublinearity};
use crate::solver::CorrectorSolution;

/// Test density `m` on `B_r`, normalized to `avg_{B_r} |m|^2 = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestDensity {
    /// Constant unit vector along an axis.
    Constant { axis: usize },
    /// Unit radial field `y / |y|` (zero at the center cell).
    Radial,
}

impl TestDensity {
    /// Values of `m` on the cells of `B_r`, `d` entries per cell.
    pub fn sample(&self, grid: &crate::grid::GridSpec, cells: &[usize]) -> Vec<f64> {
        let d = grid.d;
        let mut m = vec![0.0; cells.len() * d];
        for (t, &x) in cells.iter().enumerate() {
            match *self {
                TestDensity::Constant { axis } => m[t * d + axis.min(d - 1)] = 1.0,
                TestDensity::Radial => {
                    let c = grid.signed_coords(x);
                    let r = (grid.dist2(x) as f64).sqrt();
                    if r > 0.0 {
                        for k in 0..d {
                            m[t * d + k] = c[k] as f64 / r;
                        }
                    }
                }
            }
        }
        let norm = (m.iter().map(|v| v * v).sum::<f64>() / cells.len() as f64).sqrt();
        if norm > 0.0 {
            m.iter_mut().for_each(|v| *v /= norm);
        }
        m
    }
}

/// Gradient fields of every extended-corrector component: `grad phi_i`, then `grad sigma_ijk` for `j < k`.
pub fn corrector_gradients(sol: &CorrectorSolution) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = sol.d();
    let phi = sol.grad_phi.clone();
    let mut sigma = Vec::new();
    for i in 0..d {
        for j in 0..d {
            for k in (j + 1)..d {
                sigma.push(sol.grad_sigma(i, j, k));
            }
        }
    }
    (phi, sigma)
}

/// `|avg_{B_r} grad psi . m|` aggregated as a Euclidean norm over the components `psi`.
pub fn averaged_gradient(grads: &[Vec<f64>], grid: &crate::grid::GridSpec, balls: &Balls, r: f64, m: &TestDensity) -> f64 {
    let d = grid.d;
    let cells = balls.cells(r);
    let dens = m.sample(grid, cells);
    let n = cells.len() as f64;
    grads
        .iter()
        .map(|g| {
            let s: f64 = cells.iter().enumerate().map(|(t, &x)| (0..d).map(|k| g[x * d + k] * dens[t * d + k]).sum::<f64>()).sum();
            (s / n).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Slope {
    pub slope: f64,
    /// 95% interval from the regression standard error.
    pub ci: (f64, f64),
}

/// Log-log least-squares slope; `None` when fewer than 3 positive values.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<Slope> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Some(Slope { slope, ci: (slope - 1.96 * se, slope + 1.96 * se) })
}

/// Growth regime of the corrector bound `mu(r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    Bounded,
    Logarithmic,
    Power { exponent: f64 },
}

/// Parameters `(beta, eps d)` selecting the regime of `mu(r)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RegimeParams {
    pub beta: f64,
    pub eps_d: f64,
}

impl RegimeParams {
    pub fn regime(&self) -> Regime {
        let threshold = 1.0 - 2.0 / self.eps_d;
        if (self.beta - threshold).abs() <= 1e-12 {
            Regime::Logarithmic
        } else if self.beta < threshold {
            Regime::Bounded
        } else {
            Regime::Power { exponent: 0.5 * self.eps_d * (2.0 / self.eps_d - 1.0 + self.beta) }
        }
    }

    /// `mu(r)`.
    pub fn mu(&self, r: f64) -> f64 {
        match self.regime() {
            Regime::Bounded => 1.0,
            Regime::Logarithmic => (1.0 + r).ln(),
            Regime::Power { exponent } => r.powf(exponent),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub radii: Vec<f64>,
    /// `r X_phi(r)`: un-normalized oscillation of `phi` on `B_r`.
    pub osc_phi: Vec<f64>,
    pub osc_sigma: Vec<f64>,
    pub densities: Vec<TestDensity>,
    /// `averaged[m][t]` for density `m` at radius `radii[t]`.
    pub averaged: Vec<Vec<f64>>,
    pub slope_phi: Option<Slope>,
    pub slope_sigma: Option<Slope>,
    pub slope_averaged: Vec<Option<Slope>>,
    pub regime: Regime,
}

pub fn corrector_growth_curve(
    sol: &CorrectorSolution,
    radii: &[f64],
    densities: &[TestDensity],
    p: f64,
    q: f64,
    regime: RegimeParams,
) -> GrowthCurve {
    let grid = *sol.grid();
    let balls = Balls::new(&grid);
    let osc: Vec<Sublinearity> = radii.iter().map(|&r| sublinearity_functional(sol, &balls, r, p, q)).collect();
    let osc_phi: Vec<f64> = osc.iter().zip(radii).map(|(s, r)| s.phi * r).collect();
    let osc_sigma: Vec<f64> = osc.iter().zip(radii).map(|(s, r)| s.sigma * r).collect();
    let (gp, gs) = corrector_gradients(sol);
    let all: Vec<Vec<f64>> = gp.into_iter().chain(gs).collect();
    let averaged: Vec<Vec<f64>> =
        densities.iter().map(|m| radii.iter().map(|&r| averaged_gradient(&all, &grid, &balls, r, m)).collect()).collect();
    GrowthCurve {
        radii: radii.to_vec(),
        slope_phi: loglog_slope(radii, &osc_phi),
        slope_sigma: loglog_slope(radii, &osc_sigma),
        slope_averaged: averaged.iter().map(|a| loglog_slope(radii, a)).collect(),
        osc_phi,
        osc_sigma,
        densities: densities.to_vec(),
        averaged,
        regime: regime.regime(),
    }
}

/// Both sides of the averaged-oscillation inequality at one radius.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Coravg {
    pub r: f64,
    pub l_avg: f64,
    pub lhs: f64,
    /// Averaged `grad phi` term at scale `l_avg`.
    pub term_phi: f64,
    /// Averaged `grad sigma` term at scale `l_avg`.
    pub term_sigma: f64,
    /// `K_bar^(1/2) (l_avg/r)^(1-theta) (1 + oscillations on B_8r)`.
    pub term_k: f64,
    pub k_bar: f64,
    pub theta: f64,
    pub ratio: f64,
}

fn smoothed_norm_avg(
    grads: &[Vec<f64>],
    fft: &LatticeFft,
    kernel_hat: &[rustfft::num_complex::Complex64],
    cells: &[usize],
    d: usize,
    s: f64,
) -> f64 {
    // (avg_{B_r} |(grad psi)_L|^s)^(1/s) with |.| the Frobenius norm over components and axes
    let n = fft.grid().n_cells();
    let mut norm2 = vec![0.0; n];
    for g in grads {
        for k in 0..d {
            let comp: Vec<f64> = (0..n).map(|x| g[x * d + k]).collect();
            let sm = fft.convolve_hat(&comp, kernel_hat);
            for x in 0..n {
                norm2[x] += sm[x] * sm[x];
            }
        }
    }
    let total: f64 = cells.iter().map(|&x| norm2[x].powf(s / 2.0)).sum();
    (total / cells.len() as f64).powf(1.0 / s)
}

pub fn coravg_diagnostic(field: &CoefficientField, sol: &CorrectorSolution, r: f64, l_avg: f64, p: f64, q: f64) -> Result<Coravg> {
    let grid = *sol.grid();
    let d = grid.d;
    if !(l_avg > 0.0 && l_avg < r && 16.0 * r <= grid.l as f64) {
        return Err(HomError::InvalidArgument(format!("need 0 < L_avg < r <= L/16 (L_avg={l_avg}, r={r}, L={})", grid.l)));
    }
    let balls = Balls::new(&grid);
    let near = sublinearity_functional(sol, &balls, r, p, q);
    let far = sublinearity_functional(sol, &balls, 8.0 * r, p, q);
    let lhs = near.phi + near.sigma;
    let fft = LatticeFft::new(&grid);
    let kernel_hat = fft.forward_real(&ball_kernel(&grid, l_avg));
    let (gp, gs) = corrector_gradients(sol);
    let cells = balls.cells(r);
    let term_phi = smoothed_norm_avg(&gp, &fft, &kernel_hat, cells, d, 2.0 * q / (q + 1.0));
    let term_sigma = smoothed_norm_avg(&gs, &fft, &kernel_hat, cells, d, 2.0 * p / (p + 1.0));
    let el = mu_lambda(field)?;
    let mut k_bar = 0.0f64;
    let order = balls.all();
    let (mut smu, mut slam, mut count) = (0.0, 0.0, 0usize);
    for rr in 1..=grid.max_radius() {
        let target = balls.count(rr as f64);
        while count < target {
            smu += el.mu[order[count]].powf(p);
            slam += el.lambda[order[count]].powf(-q);
            count += 1;
        }
        if rr as f64 >= r {
            k_bar = k_bar.max((smu / count as f64).powf(1.0 / p) + (slam / count as f64).powf(1.0 / q));
        }
    }
    let theta = 0.5 * d as f64 * (1.0 / p + 1.0 / q);
    // (1/r) osc on B_8r equals 8 X(8r)
    let term_k = k_bar.sqrt() * (l_avg / r).powf(1.0 - theta) * (1.0 + 8.0 * far.phi + 8.0 * far.sigma);
    let rhs = term_phi + term_sigma + term_k;
    Ok(Coravg { r, l_avg, lhs, term_phi, term_sigma, term_k, k_bar, theta, ratio: lhs / rhs })
}
