//! Self-check suite on tiny grids: iterative solves against dense LU and the
//! structural identities of the extended corrector.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fft::LatticeFft;
use crate::field::{empirical_k, CoefficientField};
use crate::grid::GridSpec;
use crate::models::{sample_field, EnsembleModel, ModelKind};
use crate::radii::{radius_report, RadiusConfig, DEFAULT_C0, DEFAULT_M0};
use crate::solver::dense::solve_mean_zero;
use crate::solver::operator::{dot, mean};
use crate::solver::{homogenized_matrix, solve_corrector, solve_divergence_rhs, solve_extended_corrector, CorrectorSolution, SolverConfig};
use crate::stats::seeds::derive_seed;
use crate::twoscale::{sample_load, twoscale_identity_residual, MacroLoad};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Lattice sides of the random fields.
    pub sides: Vec<usize>,
    pub seeds: usize,
    /// Relative agreement demanded between iterative and dense solves.
    pub dense_tol: f64,
    /// Tolerance of the corrector identities.
    pub tol: f64,
    /// Adds a symmetric part to sigma before the sigma checks.
    pub fault_sigma: bool,
    pub master_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { sides: vec![4, 6], seeds: 20, dense_tol: 1e-10, tol: 1e-9, fault_sigma: false, master_seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed defect over all cases.
    pub worst: f64,
    pub threshold: f64,
    pub cases: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

struct Acc {
    name: &'static str,
    worst: f64,
    threshold: f64,
    cases: usize,
}

impl Acc {
    fn new(name: &'static str, threshold: f64) -> Self {
        Self { name, worst: 0.0, threshold, cases: 0 }
    }

    fn push(&mut self, v: f64) {
        // NaN must fail
        self.worst = if v.is_nan() || self.worst.is_nan() { f64::NAN } else { self.worst.max(v) };
        self.cases += 1;
    }

    fn finish(self) -> Check {
        Check {
            name: self.name.into(),
            passed: self.worst <= self.threshold,
            worst: self.worst,
            threshold: self.threshold,
            cases: self.cases,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&diff) / max_abs(b).max(f64::MIN_POSITIVE)
}

/// Full `sigma[i][j][k][x]`, optionally with a symmetric fault added.
fn full_sigma(sol: &CorrectorSolution, fault: bool) -> Vec<Vec<Vec<Vec<f64>>>> {
    let d = sol.d();
    let n = sol.op.n();
    (0..d)
        .map(|i| {
            let qmax = max_abs(&sol.flux[i]);
            (0..d)
                .map(|j| {
                    (0..d)
                        .map(|k| {
                            (0..n)
                                .map(|x| {
                                    let s = sol.sigma_at(i, j, k, x);
                                    if fault && j != k {
                                        s + 0.05 * qmax * (1.0 + (x as f64).sin())
                                    } else {
                                        s
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn random_field(grid: &GridSpec, seed: u64) -> Result<CoefficientField> {
    let m = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: 1.0 }, 4.0, 4.0);
    sample_field(&m, grid, seed)
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let tol = cfg.tol;
    let mut identity = Acc::new("identity.exact", 1e-10);
    let mut laminate = Acc::new("laminate.closed_form", 1e-8);
    let mut dense_phi = Acc::new("dense.corrector", cfg.dense_tol);
    let mut dense_rhs = Acc::new("dense.divergence_rhs", cfg.dense_tol);
    let mut flux_div = Acc::new("flux.divergence_free", 1e-8);
    let mut ortho = Acc::new("flux.orthogonality", 1e-8);
    let mut bounds = Acc::new("ahom.voigt_reuss", 1e-8);
    let mut radii = Acc::new("radii.definition", 0.0);
    let mut skew = Acc::new("sigma.skew", 1e-12);
    let mut sdiv = Acc::new("sigma.divergence", 1e-8);
    let mut twoscale = Acc::new("sigma.twoscale_identity", 100.0 * tol);

    // constant coefficients
    let g = GridSpec::unit(2, 8)?;
    let sol = solve_extended_corrector(&CoefficientField::identity(g), &SolverConfig::with_tol(tol))?;
    let mut defect = sol.phi.iter().map(|p| max_abs(p)).fold(0.0, f64::max);
    for i in 0..2 {
        defect = defect.max(sol.sigma[i].iter().map(|p| max_abs(p)).fold(0.0, f64::max));
        for j in 0..2 {
            defect = defect.max((sol.a_hom[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    identity.push(defect);

    // laminate {1, 4}: harmonic mean across the layers, arithmetic along them
    let lam = EnsembleModel::new(ModelKind::Laminate { profile: vec![1.0, 4.0], width: 1 }, 4.0, 4.0);
    let sol = solve_extended_corrector(&sample_field(&lam, &g, 0)?, &SolverConfig::with_tol(1e-12))?;
    let want = [[1.6, 0.0], [0.0, 2.5]];
    laminate.push((0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (sol.a_hom[i][j] - want[i][j]).abs()).fold(0.0, f64::max));

    for &side in &cfg.sides {
        let grid = GridSpec::unit(2, side)?;
        let d = grid.d;
        let n = grid.n_cells();
        for s in 0..cfg.seeds {
            let seed = derive_seed(cfg.master_seed, "verify", (side * 1000 + s) as u64);
            let field = random_field(&grid, seed)?;
            let sol = solve_extended_corrector(&field, &SolverConfig::with_tol(tol))?;
            let op = &sol.op;
            for i in 0..d {
                let mut e = vec![0.0; n * d];
                for x in 0..n {
                    e[x * d + i] = 1.0;
                }
                let b: Vec<f64> = op.grad_transpose(&op.apply_blocks(&e)).into_iter().map(|v| -v).collect();
                let exact = solve_mean_zero(op, &b)?;
                dense_phi.push(rel_diff(&solve_corrector(op, i, 1e-14).phi, &exact));

                let q = &sol.flux[i];
                let qmax = max_abs(q);
                flux_div.push(max_abs(&op.grad_transpose(q)) / qmax);
                for j in 0..d {
                    // <q_j . grad phi_i> vanishes for periodic phi_i; scaled by the energy
                    let c = dot(&sol.flux[j], &sol.grad_phi[i]) / n as f64;
                    let scale = (sol.a_hom[j][j] * sol.a_hom[i][i]).abs().sqrt().max(f64::MIN_POSITIVE);
                    ortho.push(c.abs() / scale);
                }
            }
            let gr: Vec<f64> = (0..n * d).map(|e| ((e * 7 + s) as f64).cos()).collect();
            let u = solve_divergence_rhs(op, &gr, 1e-14)?;
            let b: Vec<f64> = op.grad_transpose(&gr).into_iter().map(|v| -v).collect();
            dense_rhs.push(rel_diff(&u.x, &solve_mean_zero(op, &b)?));

            let hm = homogenized_matrix(&sol);
            bounds.push((-hm.lower_margin).max(-hm.upper_margin).max(hm.symmetry_defect).max(0.0));

            let k = empirical_k(std::slice::from_ref(&field), 4.0, 4.0)?;
            let rc = RadiusConfig { p: 4.0, q: 4.0, k, c0: DEFAULT_C0, m0: DEFAULT_M0 };
            radii.push(if radius_report(&field, &sol, &rc)?.recheck().is_ok() { 0.0 } else { 1.0 });

            let sig = full_sigma(&sol, cfg.fault_sigma);
            for i in 0..d {
                let q = &sol.flux[i];
                let qmax = max_abs(q);
                let mut sk = 0.0f64;
                let mut dv = 0.0f64;
                for x in 0..n {
                    for j in 0..d {
                        for k in 0..d {
                            sk = sk.max((sig[i][j][k][x] + sig[i][k][j][x]).abs());
                        }
                        let div: f64 = (0..d).map(|k| sig[i][j][k][x] - sig[i][j][k][op.nb.down(x, k)]).sum();
                        let qj: Vec<f64> = q.iter().skip(j).step_by(d).copied().collect();
                        dv = dv.max((div - (q[x * d + j] - mean(&qj))).abs());
                    }
                }
                skew.push(sk / qmax);
                sdiv.push(dv / qmax);
            }
        }
    }

    // two-scale identity on a small random torus
    let grid = GridSpec::unit(2, 16)?;
    for s in 0..cfg.seeds.min(4) {
        let field = random_field(&grid, derive_seed(cfg.master_seed, "verify-twoscale", s as u64))?;
        let sol = solve_extended_corrector(&field, &SolverConfig::with_tol(tol))?;
        let op = &sol.op;
        let fft = LatticeFft::new(&grid);
        let load = MacroLoad::Bump { amplitude: vec![1.0, 0.5], radius: 1.0 };
        let gl = sample_load(&load, &grid, 0.25);
        let u = solve_divergence_rhs(op, &gl, tol)?;
        let rhs: Vec<f64> = op.grad_transpose(&gl).into_iter().map(|v| -v).collect();
        let u_hom = fft.solve_constant(&sol.a_hom, &rhs);
        let sig = full_sigma(&sol, cfg.fault_sigma);
        let sigma = |i: usize, j: usize, k: usize, x: usize| sig[i][j][k][x];
        twoscale.push(twoscale_identity_residual(op, &fft, &gl, &u.x, &u_hom, &sol.phi, &sigma));
    }

    let checks: Vec<Check> = [identity, laminate, dense_phi, dense_rhs, flux_div, ortho, bounds, radii, skew, sdiv, twoscale]
        .into_iter()
        .map(Acc::finish)
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, passed })
}
