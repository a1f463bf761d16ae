//! Finite-difference vertical derivatives of averaged corrector gradients.
//!
//! The coefficient is perturbed on one partition block `D` as
//! `a + t a^(1/2) b a^(1/2)` with `b` a constant symmetric matrix of unit
//! operator norm. The change of the corrector is re-solved exactly on the
//! perturbed operator, so the difference quotient carries no cancellation.
//! The direction dictionary is finite and only lower-bounds the supremum
//! over all admissible `b`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fft::LatticeFft;
use crate::field::{mat_inverse, mat_mul, mat_sqrt, sym_eigenvalues, CoefficientField, Mat};
use crate::grid::Balls;
use crate::models::block_rng;
use crate::partition::Partition;
use crate::solver::cg;
use crate::solver::corrector::{n_pairs, solve_flux_corrector};
use crate::solver::{DiscreteOperator, Scheme};

use super::growth::{loglog_slope, Slope, TestDensity};

pub const MAX_SIDE: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityConfig {
    /// Corrector index `i` of `phi_i` and `sigma_i`.
    pub component: usize,
    pub radii: Vec<f64>,
    pub density: TestDensity,
    pub step: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { component: 0, radii: vec![2.0, 4.0], density: TestDensity::Constant { axis: 0 }, step: 1e-4, tol: 1e-13, seed: 0 }
    }
}

/// Coordinate matrices `E_kk`, `E_kl + E_lk`, then random symmetric matrices,
/// all of operator norm one; `2 d^2` in total.
pub fn direction_dictionary(d: usize, seed: u64) -> Vec<Mat> {
    let mut dirs = Vec::new();
    for k in 0..d {
        let mut m = [[0.0; 3]; 3];
        m[k][k] = 1.0;
        dirs.push(m);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let mut m = [[0.0; 3]; 3];
            m[k][l] = 1.0;
            m[l][k] = 1.0;
            dirs.push(m);
        }
    }
    let mut rng = block_rng(seed, 0x5E75);
    while dirs.len() < 2 * d * d {
        let mut m = [[0.0; 3]; 3];
        for k in 0..d {
            for l in k..d {
                let v: f64 = rng.sample(StandardNormal);
                m[k][l] = v;
                m[l][k] = v;
            }
        }
        let ev = sym_eigenvalues(d, &m);
        let norm = ev[0].abs().max(ev[d - 1].abs());
        for row in m.iter_mut().take(d) {
            for v in row.iter_mut().take(d) {
                *v /= norm;
            }
        }
        dirs.push(m);
    }
    dirs
}

/// `a + t a^(1/2) b a^(1/2)` on `cells`.
pub fn perturb_field(field: &CoefficientField, cells: &[usize], b: &Mat, t: f64) -> CoefficientField {
    let d = field.grid.d;
    let mut out = field.clone();
    for &x in cells {
        let a = field.cell(x);
        let s = mat_sqrt(d, &a);
        let sbs = mat_mul(d, &mat_mul(d, &s, b), &s);
        let mut m = a;
        for i in 0..d {
            for j in 0..d {
                m[i][j] += t * sbs[i][j];
            }
        }
        out.set_cell(x, &m);
    }
    out
}

/// Base state shared by every perturbation of one realization.
pub struct SensitivityBase {
    pub field: CoefficientField,
    pub op: DiscreteOperator,
    pub fft: LatticeFft,
    /// `e_i + G phi_i` on edges.
    pub grad_total: Vec<f64>,
    /// `g = r^(-d) m` with `avg_{B_r} m . a^(-1) m = 1`, per radius, on the cells of `B_r`.
    pub weights: Vec<(Vec<usize>, Vec<f64>)>,
    pub cfg: SensitivityConfig,
}

impl SensitivityBase {
    pub fn new(field: &CoefficientField, cfg: &SensitivityConfig) -> Result<Self> {
        let grid = field.grid;
        let d = grid.d;
        if grid.l > MAX_SIDE {
            return Err(HomError::InvalidArgument(format!("sensitivity probe needs L <= {MAX_SIDE}, got {}", grid.l)));
        }
        if cfg.component >= d || !(cfg.step > 0.0) || !(cfg.tol > 0.0) || cfg.radii.is_empty() {
            return Err(HomError::InvalidArgument("bad sensitivity configuration".into()));
        }
        let op = DiscreteOperator::assemble(field, Scheme::CellTensor)?;
        let phi = crate::solver::solve_corrector(&op, cfg.component, cfg.tol);
        if !phi.stats.converged {
            return Err(HomError::NotConverged { iterations: phi.stats.iterations, residual: phi.stats.relative_residual });
        }
        let mut grad_total = op.gradient(&phi.phi);
        for x in 0..grid.n_cells() {
            grad_total[x * d + cfg.component] += 1.0;
        }
        let balls = Balls::new(&grid);
        let weights = cfg
            .radii
            .iter()
            .map(|&r| {
                let cells = balls.cells(r).to_vec();
                let m = cfg.density.sample(&grid, &cells);
                let mut norm = 0.0;
                for (t, &x) in cells.iter().enumerate() {
                    let inv = mat_inverse(d, &field.cell(x));
                    for k in 0..d {
                        for l in 0..d {
                            norm += m[t * d + k] * inv[k][l] * m[t * d + l];
                        }
                    }
                }
                let scale = (norm / cells.len() as f64).sqrt();
                let g: Vec<f64> = m.iter().map(|v| v / scale / r.powi(d as i32)).collect();
                (cells, g)
            })
            .collect();
        Ok(Self { field: field.clone(), fft: LatticeFft::new(&grid), op, grad_total, weights, cfg: cfg.clone() })
    }

    pub fn n_functionals(&self) -> usize {
        self.weights.len() * (1 + n_pairs(self.op.d()))
    }

    /// `sum_{B_r} g . grad psi` for every radius, `psi` running over `phi_i` then `sigma_ijk`.
    pub fn functionals(&self, dphi: &[f64], dsigma: &[Vec<f64>]) -> Vec<f64> {
        let d = self.op.d();
        let gphi = self.op.gradient(dphi);
        let gs: Vec<Vec<f64>> = dsigma.iter().map(|s| self.op.gradient(s)).collect();
        let pair = |grad: &[f64], cells: &[usize], g: &[f64]| -> f64 {
            cells.iter().enumerate().map(|(t, &x)| (0..d).map(|k| g[t * d + k] * grad[x * d + k]).sum::<f64>()).sum()
        };
        let mut out = Vec::with_capacity(self.n_functionals());
        for (cells, g) in &self.weights {
            out.push(pair(&gphi, cells, g));
            for s in &gs {
                out.push(pair(s, cells, g));
            }
        }
        out
    }

    /// Exact change of `(phi_i, sigma_i)` under the perturbed field.
    pub fn response(&self, perturbed: &CoefficientField, cells: &[usize]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let d = self.op.d();
        let op_t = DiscreteOperator::assemble(perturbed, Scheme::CellTensor)?;
        // delta A (e_i + G phi_i), nonzero only on the perturbed cells
        let mut da = zero_edges(&self.op);
        for &x in cells {
            let a0 = self.field.cell(x);
            let a1 = perturbed.cell(x);
            for k in 0..d {
                da[x * d + k] = (0..d).map(|l| (a1[k][l] - a0[k][l]) * self.grad_total[x * d + l]).sum();
            }
        }
        let b: Vec<f64> = op_t.grad_transpose(&da).into_iter().map(|v| -v).collect();
        let out = cg::solve(&op_t, &b, self.cfg.tol, cg::default_max_iterations(&op_t));
        if !out.stats.converged {
            return Err(HomError::NotConverged { iterations: out.stats.iterations, residual: out.stats.relative_residual });
        }
        let mut dq = op_t.apply_blocks(&op_t.gradient(&out.x));
        dq.iter_mut().zip(&da).for_each(|(q, a)| *q += a);
        let fc = solve_flux_corrector(&op_t, &self.fft, &dq, 1e-6)?;
        Ok((out.x, fc.pairs))
    }

    pub fn difference_quotient(&self, cells: &[usize], b: &Mat, t: f64) -> Result<Vec<f64>> {
        let perturbed = perturb_field(&self.field, cells, b, t);
        let (dphi, dsigma) = self.response(&perturbed, cells)?;
        Ok(self.functionals(&dphi, &dsigma).into_iter().map(|v| v / t).collect())
    }

    /// Richardson-checked derivative along `b` on `cells`.
    pub fn derivative(&self, cells: &[usize], b: &Mat) -> Result<Derivative> {
        let mut t = self.cfg.step;
        let mut coarse = self.difference_quotient(cells, b, t)?;
        let mut retried = false;
        loop {
            let fine = self.difference_quotient(cells, b, t / 2.0)?;
            let floor = 1e3 * self.cfg.tol / t;
            let accepted = coarse.iter().zip(&fine).all(|(c, f)| (c - f).abs() <= 0.1 * c.abs().max(f.abs()) + floor);
            if accepted || retried {
                let value = coarse.iter().zip(&fine).map(|(c, f)| 2.0 * f - c).collect();
                return Ok(Derivative { value, coarse, fine, step: t, accepted, retried });
            }
            retried = true;
            t /= 2.0;
            coarse = fine;
        }
    }
}

fn zero_edges(op: &DiscreteOperator) -> Vec<f64> {
    vec![0.0; op.n() * op.d()]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Derivative {
    /// Extrapolated `2 D_(t/2) - D_t` per functional.
    pub value: Vec<f64>,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub step: f64,
    pub accepted: bool,
    pub retried: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockSensitivity {
    pub block: usize,
    pub dist: f64,
    pub diam: f64,
    /// `sup_b |dF|` over the dictionary, per functional.
    pub sup: Vec<f64>,
    /// Nuclear norm of the derivative matrix reconstructed from the coordinate directions, per functional.
    pub nuclear: Vec<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub radii: Vec<f64>,
    pub component: usize,
    pub directions: usize,
    /// `sum_D (sup_b |dF_phi|)^2 + sum_(j<k) sum_D (sup_b |dF_sigma_ijk|)^2` per radius.
    pub aggregate: Vec<f64>,
    /// Same with the reconstructed nuclear norms in place of the dictionary supremum.
    pub aggregate_nuclear: Vec<f64>,
    pub slope: Option<Slope>,
    pub blocks: Vec<BlockSensitivity>,
    pub flagged: usize,
    pub caveat: String,
}

pub fn sensitivity_probe(field: &CoefficientField, partition: &Partition, cfg: &SensitivityConfig) -> Result<SensitivityReport> {
    let base = SensitivityBase::new(field, cfg)?;
    let d = field.grid.d;
    let dirs = direction_dictionary(d, cfg.seed);
    let nf = base.n_functionals();
    let per_radius = 1 + n_pairs(d);
    let mut blocks = Vec::with_capacity(partition.blocks.len());
    for (bi, blk) in partition.blocks.iter().enumerate() {
        let ders: Vec<Derivative> = dirs.iter().map(|b| base.derivative(&blk.cells, b)).collect::<Result<_>>()?;
        let sup: Vec<f64> = (0..nf).map(|f| ders.iter().map(|r| r.value[f].abs()).fold(0.0, f64::max)).collect();
        let nuclear: Vec<f64> = (0..nf)
            .map(|f| {
                let mut m = [[0.0; 3]; 3];
                let mut c = d;
                for k in 0..d {
                    m[k][k] = ders[k].value[f];
                    for l in (k + 1)..d {
                        m[k][l] = 0.5 * ders[c].value[f];
                        m[l][k] = m[k][l];
                        c += 1;
                    }
                }
                sym_eigenvalues(d, &m).iter().take(d).map(|v| v.abs()).sum()
            })
            .collect();
        blocks.push(BlockSensitivity {
            block: bi,
            dist: blk.dist,
            diam: blk.diam,
            sup,
            nuclear,
            flagged: ders.iter().any(|r| !r.accepted),
        });
    }
    let sum_sq = |pick: &dyn Fn(&BlockSensitivity) -> &Vec<f64>| -> Vec<f64> {
        (0..cfg.radii.len())
            .map(|r| blocks.iter().map(|b| pick(b)[r * per_radius..(r + 1) * per_radius].iter().map(|v| v * v).sum::<f64>()).sum())
            .collect()
    };
    let aggregate = sum_sq(&|b| &b.sup);
    let aggregate_nuclear = sum_sq(&|b| &b.nuclear);
    Ok(SensitivityReport {
        slope: loglog_slope(&cfg.radii, &aggregate),
        radii: cfg.radii.clone(),
        component: cfg.component,
        directions: dirs.len(),
        aggregate,
        aggregate_nuclear,
        flagged: blocks.iter().filter(|b| b.flagged).count(),
        blocks,
        caveat: format!("supremum over {} constant directions per block; a lower bound for the supremum over all admissible b", dirs.len()),
    })
}

/// Predicted shape `((r + r_*)^(1 - eps (1 - beta)) / r)^d` and the least-squares constant in log space.
pub fn fit_prediction(radii: &[f64], aggregate: &[f64], r_star: f64, eps: f64, beta: f64, d: usize) -> (f64, Vec<f64>) {
    let shape: Vec<f64> = radii.iter().map(|r| ((r + r_star).powf(1.0 - eps * (1.0 - beta)) / r).powi(d as i32)).collect();
    let logs: Vec<f64> = aggregate.iter().zip(&shape).filter(|(a, _)| **a > 0.0).map(|(a, s)| (a / s).ln()).collect();
    let c = if logs.is_empty() { 0.0 } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
    (c, shape)
}
