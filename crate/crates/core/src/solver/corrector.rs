//! Extended corrector `(phi, sigma)`, fluxes and the homogenized matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cg::{self, CgOutcome, SolveStats};
use super::operator::{mean, DiscreteOperator, Scheme, MIN_LEN};
use crate::error::{HomError, Result};
use crate::fft::LatticeFft;
use crate::field::{mat_inverse, sym_eigenvalues, CoefficientField, Mat};
use crate::grid::GridSpec;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Relative residual target for every linear solve.
    pub tol: f64,
    pub max_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { scheme: Scheme::CellTensor, tol: DEFAULT_TOL, max_iterations: None }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Index of the pair `(j, k)`, `j < k`, among the `d(d-1)/2` skew components.
pub fn pair_index(d: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < d);
    match (d, j, k) {
        (2, _, _) => 0,
        (_, 0, 1) => 0,
        (_, 0, 2) => 1,
        _ => 2,
    }
}

pub fn n_pairs(d: usize) -> usize {
    d * (d - 1) / 2
}

/// One corrector component.
#[derive(Clone, Debug)]
pub struct CorrectorComponent {
    pub phi: Vec<f64>,
    pub grad_phi: Vec<f64>,
    pub stats: SolveStats,
}

/// Solves `G^T A G phi_i = -G^T A e_i` with `phi_i` mean-zero.
pub fn solve_corrector(op: &DiscreteOperator, i: usize, tol: f64) -> CorrectorComponent {
    solve_corrector_capped(op, i, tol, cg::default_max_iterations(op))
}

pub fn solve_corrector_capped(op: &DiscreteOperator, i: usize, tol: f64, max_iterations: usize) -> CorrectorComponent {
    let d = op.d();
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    let zero = vec![0.0; op.n()];
    let ae = op.flux(&e, &zero);
    let b: Vec<f64> = op.grad_transpose(&ae).into_iter().map(|v| -v).collect();
    let CgOutcome { x, stats } = cg::solve(op, &b, tol, max_iterations);
    let grad_phi = op.gradient(&x);
    CorrectorComponent { phi: x, grad_phi, stats }
}

/// `q_i = A (e_i + G phi_i)` on edges.
pub fn compute_flux(op: &DiscreteOperator, phi: &[f64], i: usize) -> Vec<f64> {
    let mut e = vec![0.0; op.d()];
    e[i] = 1.0;
    op.flux(&e, phi)
}

/// `max |G^T q|`.
pub fn divergence_max(op: &DiscreteOperator, q: &[f64]) -> f64 {
    op.grad_transpose(q).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Skew flux corrector `sigma_i`, stored as its `j < k` components.
#[derive(Clone, Debug)]
pub struct FluxCorrector {
    pub pairs: Vec<Vec<f64>>,
    /// `max |div sigma_i - (q_i - <q_i>)| / max |q_i|`.
    pub identity_residual: f64,
}

/// Divergence of a skew tensor along its last index: `(div sigma)_j(x) = sum_k sigma_jk(x) - sigma_jk(x - e_k)`.
pub fn skew_divergence(grid: &GridSpec, nb: &crate::grid::Neighbors, pairs: &[Vec<f64>]) -> Vec<f64> {
    let d = grid.d;
    let n = grid.n_cells();
    let comp = |j: usize, k: usize, x: usize| -> f64 {
        if j == k {
            0.0
        } else if j < k {
            pairs[pair_index(d, j, k)][x]
        } else {
            -pairs[pair_index(d, k, j)][x]
        }
    };
    let mut out = vec![0.0; n * d];
    out.par_chunks_mut(d).enumerate().with_min_len(MIN_LEN).for_each(|(x, ox)| {
        for (j, o) in ox.iter_mut().enumerate() {
            *o = (0..d).map(|k| comp(j, k, x) - comp(j, k, nb.down(x, k))).sum();
        }
    });
    out
}

/// Solves `-Delta sigma_ijk = D_j q_ik - D_k q_ij` by FFT in the zero-mean gauge.
pub fn solve_flux_corrector(op: &DiscreteOperator, fft: &LatticeFft, q: &[f64], tol: f64) -> Result<FluxCorrector> {
    let d = op.d();
    let n = op.n();
    let mut pairs = vec![Vec::new(); n_pairs(d)];
    for j in 0..d {
        for k in (j + 1)..d {
            let rhs: Vec<f64> =
                (0..n).map(|x| (q[op.nb.up(x, j) * d + k] - q[x * d + k]) - (q[op.nb.up(x, k) * d + j] - q[x * d + j])).collect();
            pairs[pair_index(d, j, k)] = fft.poisson(&rhs);
        }
    }
    let div = skew_divergence(&op.grid, &op.nb, &pairs);
    let qmean: Vec<f64> = (0..d).map(|k| (0..n).map(|x| q[x * d + k]).sum::<f64>() / n as f64).collect();
    let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let viol = (0..n * d).map(|e| (div[e] - (q[e] - qmean[e % d])).abs()).fold(0.0f64, f64::max) / qmax;
    if viol > 100.0 * tol {
        return Err(HomError::Inconsistent(format!("flux corrector divergence misses q - <q> by {viol:e} (tolerance {tol:e})")));
    }
    Ok(FluxCorrector { pairs, identity_residual: viol })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Residuals {
    /// Relative residual of each corrector solve.
    pub phi: Vec<f64>,
    /// `max |G^T q_i| / max |q_i|`.
    pub divergence: Vec<f64>,
    /// Relative violation of `div sigma_i = q_i - <q_i>`.
    pub sigma: Vec<f64>,
}

/// Correctors, fluxes, flux correctors and the homogenized matrix of one realization.
pub struct CorrectorSolution {
    pub op: DiscreteOperator,
    pub phi: Vec<Vec<f64>>,
    pub grad_phi: Vec<Vec<f64>>,
    pub flux: Vec<Vec<f64>>,
    /// `sigma[i][pair]` for `j < k`.
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub a_hom: Mat,
    pub residuals: Residuals,
    pub stats: Vec<SolveStats>,
    pub tol: f64,
}

impl CorrectorSolution {
    pub fn grid(&self) -> &GridSpec {
        &self.op.grid
    }

    pub fn d(&self) -> usize {
        self.op.d()
    }

    pub fn converged(&self) -> bool {
        self.stats.iter().all(|s| s.converged)
    }

    /// `sigma_ijk(x)` with skew-symmetry in `(j, k)`.
    pub fn sigma_at(&self, i: usize, j: usize, k: usize, x: usize) -> f64 {
        let d = self.d();
        match j.cmp(&k) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.sigma[i][pair_index(d, j, k)][x],
            std::cmp::Ordering::Greater => -self.sigma[i][pair_index(d, k, j)][x],
        }
    }

    /// Forward-difference gradient of `sigma_ijk`.
    pub fn grad_sigma(&self, i: usize, j: usize, k: usize) -> Vec<f64> {
        let n = self.op.n();
        let s: Vec<f64> = (0..n).map(|x| self.sigma_at(i, j, k, x)).collect();
        self.op.gradient(&s)
    }

    /// Flux correction of `phi_xi = xi_i phi_i`, by linearity.
    pub fn phi_xi(&self, xi: &[f64]) -> Vec<f64> {
        let n = self.op.n();
        (0..n).map(|x| (0..self.d()).map(|i| xi[i] * self.phi[i][x]).sum()).collect()
    }
}

/// Solves all d corrector and flux-corrector problems.
pub fn solve_extended_corrector(field: &CoefficientField, cfg: &SolverConfig) -> Result<CorrectorSolution> {
    let op = DiscreteOperator::assemble(field, cfg.scheme)?;
    extended_corrector_from_operator(op, cfg)
}

pub fn extended_corrector_from_operator(op: DiscreteOperator, cfg: &SolverConfig) -> Result<CorrectorSolution> {
    if !(cfg.tol > 0.0) {
        return Err(HomError::InvalidArgument(format!("tolerance {} must be positive", cfg.tol)));
    }
    let d = op.d();
    let grid = op.grid;
    let fft = LatticeFft::new(&grid);
    // the flux-corrector identity amplifies the divergence residual by up to L / (2 pi)
    let amplification = (grid.l as f64 / (2.0 * std::f64::consts::PI)).max(1.0);
    let cg_tol = cfg.tol / amplification;
    let cap = cfg.max_iterations.unwrap_or_else(|| cg::default_max_iterations(&op));
    let comps: Vec<CorrectorComponent> = (0..d).map(|i| solve_corrector_capped(&op, i, cg_tol, cap)).collect();
    let mut phi = Vec::with_capacity(d);
    let mut grad_phi = Vec::with_capacity(d);
    let mut flux = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    let mut residuals = Residuals { phi: vec![], divergence: vec![], sigma: vec![] };
    let mut a_hom = [[0.0; 3]; 3];
    for (i, c) in comps.into_iter().enumerate() {
        let q = compute_flux(&op, &c.phi, i);
        let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        residuals.divergence.push(divergence_max(&op, &q) / qmax);
        residuals.phi.push(c.stats.relative_residual);
        let fc = solve_flux_corrector(&op, &fft, &q, cfg.tol.max(c.stats.relative_residual * amplification))?;
        residuals.sigma.push(fc.identity_residual);
        for k in 0..d {
            let col: Vec<f64> = q.iter().skip(k).step_by(d).copied().collect();
            a_hom[k][i] = mean(&col);
        }
        phi.push(c.phi);
        grad_phi.push(c.grad_phi);
        flux.push(q);
        sigma.push(fc.pairs);
        stats.push(c.stats);
    }
    Ok(CorrectorSolution { op, phi, grad_phi, flux, sigma, a_hom, residuals, stats, tol: cfg.tol })
}

/// The homogenized matrix with its Voigt and Reuss bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    pub a_hom: Mat,
    /// `max |a_hom - a_hom^T|`.
    pub symmetry_defect: f64,
    /// Harmonic-mean (Reuss) lower bound.
    pub lower: Mat,
    /// Arithmetic-mean (Voigt) upper bound.
    pub upper: Mat,
    /// Smallest eigenvalue of `sym(a_hom) - lower`.
    pub lower_margin: f64,
    /// Smallest eigenvalue of `upper - sym(a_hom)`.
    pub upper_margin: f64,
    pub violation: Option<String>,
}

pub fn homogenized_matrix(sol: &CorrectorSolution) -> HomogenizedMatrix {
    let d = sol.d();
    let n = sol.op.n();
    let mut upper = [[0.0; 3]; 3];
    let mut inv_mean = [[0.0; 3]; 3];
    for x in 0..n {
        let b = sol.op.block(x);
        let bi = mat_inverse(d, &b);
        for i in 0..d {
            for j in 0..d {
                upper[i][j] += b[i][j] / n as f64;
                inv_mean[i][j] += bi[i][j] / n as f64;
            }
        }
    }
    let lower = mat_inverse(d, &inv_mean);
    let a = sol.a_hom;
    let mut sym = [[0.0; 3]; 3];
    let mut defect = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            sym[i][j] = 0.5 * (a[i][j] + a[j][i]);
            defect = defect.max((a[i][j] - a[j][i]).abs());
        }
    }
    let diff = |x: &Mat, y: &Mat| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = x[i][j] - y[i][j];
            }
        }
        m
    };
    let lower_margin = sym_eigenvalues(d, &diff(&sym, &lower))[0];
    let upper_margin = sym_eigenvalues(d, &diff(&upper, &sym))[0];
    let scale = sym_eigenvalues(d, &upper)[d - 1];
    let slack = 10.0 * sol.tol * scale;
    let mut problems = Vec::new();
    if defect > slack {
        problems.push(format!("asymmetry {defect:e}"));
    }
    if lower_margin < -slack {
        problems.push(format!("harmonic-mean bound violated by {:e}", -lower_margin));
    }
    if upper_margin < -slack {
        problems.push(format!("arithmetic-mean bound violated by {:e}", -upper_margin));
    }
    HomogenizedMatrix {
        a_hom: a,
        symmetry_defect: defect,
        lower,
        upper,
        lower_margin,
        upper_margin,
        violation: if problems.is_empty() { None } else { Some(problems.join("; ")) },
    }
}

/// Solves `-div(A grad u) = div g`, i.e. `G^T A G u = -G^T g`, with `u` mean-zero.
pub fn solve_divergence_rhs(op: &DiscreteOperator, g: &[f64], tol: f64) -> Result<CgOutcome> {
    if !(tol > 0.0) {
        return Err(HomError::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    if g.len() != op.n() * op.d() {
        return Err(HomError::InvalidArgument("right-hand side must be an edge field".into()));
    }
    let b: Vec<f64> = op.grad_transpose(g).into_iter().map(|v| -v).collect();
    Ok(cg::solve(op, &b, tol, cg::default_max_iterations(op)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::scalar_mat;
    use crate::models::{sample_field, EnsembleModel, ModelKind};
    use nalgebra::{DMatrix, DVector};

    fn dense_solve(op: &DiscreteOperator, b: &[f64]) -> Vec<f64> {
        // A + 11^T / n is nonsingular and agrees with A on mean-zero vectors
        let n = op.n();
        let a = op.dense();
        let m = DMatrix::from_fn(n, n, |i, j| a[i][j] + 1.0 / n as f64);
        let x = m.lu().solve(&DVector::from_column_slice(b)).unwrap();
        x.iter().copied().collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    fn lognormal(l: usize, seed: u64) -> CoefficientField {
        let model = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: 1.0 }, 4.0, 4.0);
        sample_field(&model, &GridSpec::unit(2, l).unwrap(), seed).unwrap()
    }

    #[test]
    fn identity_field_has_zero_corrector() {
        for d in [2, 3] {
            let f = CoefficientField::identity(GridSpec::unit(d, 8).unwrap());
            let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
            for i in 0..d {
                assert!(sol.phi[i].iter().all(|v| v.abs() < 1e-12));
                assert!(sol.sigma[i].iter().flatten().all(|v| v.abs() < 1e-12));
                for j in 0..d {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((sol.a_hom[i][j] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn laminate_closed_form() {
        let g = GridSpec::unit(2, 16).unwrap();
        let model = EnsembleModel::new(ModelKind::Laminate { profile: vec![1.0, 4.0], width: 4 }, 4.0, 4.0);
        let f = sample_field(&model, &g, 0).unwrap();
        for scheme in [Scheme::CellTensor, Scheme::HarmonicFace] {
            let sol = solve_extended_corrector(&f, &SolverConfig { scheme, ..SolverConfig::default() }).unwrap();
            for x in 0..g.n_cells() {
                assert!((sol.flux[0][x * 2] - 1.6).abs() < 1e-8);
                assert!(sol.flux[0][x * 2 + 1].abs() < 1e-8);
            }
            assert!((sol.a_hom[0][0] - 1.6).abs() < 1e-8);
            assert!((sol.a_hom[1][1] - 2.5).abs() < 1e-8);
            assert!(sol.a_hom[0][1].abs() < 1e-8);
        }
    }

    #[test]
    fn checkerboard_matches_dense_lu() {
        let g = GridSpec::unit(2, 4).unwrap();
        for seed in 0..5u64 {
            let f = CoefficientField::from_fn(g, "cb", seed, |x| {
                let bit = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(seed) >> 63;
                scalar_mat(if bit == 1 { 9.0 } else { 1.0 })
            })
            .unwrap();
            let op = DiscreteOperator::assemble(&f, Scheme::CellTensor).unwrap();
            for i in 0..2 {
                let c = solve_corrector(&op, i, 1e-13);
                let zero = vec![0.0; 16];
                let mut e = [0.0; 2];
                e[i] = 1.0;
                let b: Vec<f64> = op.grad_transpose(&op.flux(&e, &zero)).iter().map(|v| -v).collect();
                let x = dense_solve(&op, &b);
                assert!(rel_err(&c.phi, &x) < 1e-10, "seed {seed}");
            }
        }
    }

    #[test]
    fn extended_corrector_identities() {
        let f = lognormal(16, 11);
        let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
        let d = 2;
        let n = f.n_cells();
        for i in 0..d {
            assert!(sol.residuals.sigma[i] <= 1e-8);
            assert!(sol.residuals.divergence[i] <= 1e-8);
            assert!(mean(&sol.phi[i]).abs() < 1e-12);
            for j in 0..d {
                // flux-gradient orthogonality
                let s: f64 = (0..n * d).map(|e| sol.grad_phi[i][e] * sol.flux[j][e]).sum::<f64>() / n as f64;
                assert!(s.abs() < 1e-8);
                // energy identity
                let mut ei = vec![0.0; n * d];
                let mut ej = vec![0.0; n * d];
                for x in 0..n {
                    ei[x * d + i] = 1.0;
                    ej[x * d + j] = 1.0;
                }
                let gi: Vec<f64> = ei.iter().zip(&sol.grad_phi[i]).map(|(a, b)| a + b).collect();
                let gj: Vec<f64> = ej.iter().zip(&sol.grad_phi[j]).map(|(a, b)| a + b).collect();
                let agj = sol.op.apply_blocks(&gj);
                let energy = gi.iter().zip(&agj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                assert!((energy - sol.a_hom[j][i]).abs() < 1e-8);
            }
        }
        let hm = homogenized_matrix(&sol);
        assert!(hm.violation.is_none(), "{:?}", hm.violation);
        assert!(hm.lower_margin > -1e-8 && hm.upper_margin > -1e-8);
        assert!(hm.symmetry_defect < 1e-8);
    }

    #[test]
    fn three_dimensional_sigma_identity() {
        let model = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 2, log_variance: 0.5 }, 4.0, 4.0);
        let f = sample_field(&model, &GridSpec::unit(3, 8).unwrap(), 5).unwrap();
        let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
        assert!(sol.residuals.sigma.iter().all(|r| *r <= 1e-8));
        for i in 0..3 {
            for x in [0, 17, 200] {
                assert_eq!(sol.sigma_at(i, 0, 2, x), -sol.sigma_at(i, 2, 0, x));
                assert_eq!(sol.sigma_at(i, 1, 1, x), 0.0);
            }
        }
    }

    #[test]
    fn divergence_rhs_matches_dense_and_poisson() {
        let f = lognormal(6, 2);
        let op = DiscreteOperator::assemble(&f, Scheme::CellTensor).unwrap();
        let g: Vec<f64> = (0..72).map(|e| ((e * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let out = solve_divergence_rhs(&op, &g, 1e-13).unwrap();
        let b: Vec<f64> = op.grad_transpose(&g).iter().map(|v| -v).collect();
        assert!(rel_err(&out.x, &dense_solve(&op, &b)) < 1e-10);

        let zero = solve_divergence_rhs(&op, &vec![0.0; 72], 1e-9).unwrap();
        assert!(zero.x.iter().all(|v| *v == 0.0));

        // a = I, g = G chi gives u = -chi up to a constant
        let grid = GridSpec::unit(2, 16).unwrap();
        let id = DiscreteOperator::assemble(&CoefficientField::identity(grid), Scheme::CellTensor).unwrap();
        let chi: Vec<f64> = (0..grid.n_cells()).map(|x| (-(grid.dist2(x) as f64) / 8.0).exp()).collect();
        let u = solve_divergence_rhs(&id, &id.gradient(&chi), 1e-12).unwrap().x;
        let shift = mean(&chi);
        for x in 0..grid.n_cells() {
            assert!((u[x] + chi[x] - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_tolerance() {
        let f = CoefficientField::identity(GridSpec::unit(2, 4).unwrap());
        assert!(solve_extended_corrector(&f, &SolverConfig::with_tol(0.0)).is_err());
    }
}
