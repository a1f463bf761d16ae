use homlab::fft::LatticeFft;
use homlab::field::{CoefficientField, Mat};
use homlab::grid::GridSpec;
use homlab::io::{field_hash, read_solution, write_solution};
use homlab::models::{sample_field, translate, EnsembleModel, ModelKind};
use homlab::radii::{radius_report, RadiusConfig};
use homlab::solver::corrector::{compute_flux, solve_flux_corrector, FluxCorrector};
use homlab::solver::dense::solve_mean_zero;
use homlab::solver::{solve_extended_corrector, DiscreteOperator, Scheme, SolverConfig};
use homlab::stats::growth::RegimeParams;
use homlab::stats::montecarlo::{monte_carlo_radii, KPolicy, MonteCarloConfig};
use homlab::twoscale::{run_twoscale, sample_load, twoscale_identity_residual, MacroLoad, TwoScaleConfig};

fn lognormal(var: f64) -> EnsembleModel {
    EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 1, log_variance: var }, 4.0, 4.0)
}

/// Corrector, flux corrector, solution and homogenized solution from direct solvers only.
struct DenseSetup {
    op: DiscreteOperator,
    fft: LatticeFft,
    g: Vec<f64>,
    u: Vec<f64>,
    u_hom: Vec<f64>,
    phi: Vec<Vec<f64>>,
    sigma: Vec<FluxCorrector>,
}

fn dense_setup(l: usize, seed: u64) -> DenseSetup {
    let grid = GridSpec::unit(2, l).unwrap();
    let field = sample_field(&lognormal(1.0), &grid, seed).unwrap();
    let op = DiscreteOperator::assemble(&field, Scheme::CellTensor).unwrap();
    let fft = LatticeFft::new(&grid);
    let (n, d) = (op.n(), 2);
    let mut phi = Vec::new();
    let mut sigma = Vec::new();
    let mut a_hom: Mat = [[0.0; 3]; 3];
    for i in 0..d {
        let mut e = vec![0.0; n * d];
        (0..n).for_each(|x| e[x * d + i] = 1.0);
        let b: Vec<f64> = op.grad_transpose(&op.apply_blocks(&e)).iter().map(|v| -v).collect();
        let p = solve_mean_zero(&op, &b).unwrap();
        let q = compute_flux(&op, &p, i);
        for k in 0..d {
            a_hom[k][i] = (0..n).map(|x| q[x * d + k]).sum::<f64>() / n as f64;
        }
        sigma.push(solve_flux_corrector(&op, &fft, &q, 1e-12).unwrap());
        phi.push(p);
    }
    let g = sample_load(&MacroLoad::Bump { amplitude: vec![1.0, -0.7], radius: 1.0 }, &grid, 4.0 / l as f64);
    let b: Vec<f64> = op.grad_transpose(&g).iter().map(|v| -v).collect();
    let u = solve_mean_zero(&op, &b).unwrap();
    let u_hom = fft.solve_constant(&a_hom, &b);
    DenseSetup { op, fft, g, u, u_hom, phi, sigma }
}

fn sigma_value(s: &[FluxCorrector], i: usize, j: usize, k: usize, x: usize) -> f64 {
    match j.cmp(&k) {
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => s[i].pairs[0][x],
        std::cmp::Ordering::Greater => -s[i].pairs[0][x],
    }
}

#[test]
fn direct_ingredients_satisfy_the_twoscale_identity() {
    for seed in 0..3 {
        let s = dense_setup(8, seed);
        let sig = |i, j, k, x| sigma_value(&s.sigma, i, j, k, x);
        let res = twoscale_identity_residual(&s.op, &s.fft, &s.g, &s.u, &s.u_hom, &s.phi, &sig);
        assert!(res <= 1e-8, "seed {seed}: {res:e}");
    }
}

#[test]
fn symmetric_sigma_perturbation_breaks_the_identity() {
    let s = dense_setup(8, 1);
    let clean = |i, j, k, x| sigma_value(&s.sigma, i, j, k, x);
    let base = twoscale_identity_residual(&s.op, &s.fft, &s.g, &s.u, &s.u_hom, &s.phi, &clean);
    let scale = s.sigma.iter().flat_map(|f| f.pairs[0].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let bent = |i, j, k, x: usize| {
        let v = sigma_value(&s.sigma, i, j, k, x);
        if j != k {
            v + 0.05 * scale * (1.0 + (x as f64).sin())
        } else {
            v
        }
    };
    let broken = twoscale_identity_residual(&s.op, &s.fft, &s.g, &s.u, &s.u_hom, &s.phi, &bent);
    assert!(broken >= 10.0 * base.max(1e-12), "base {base:e}, broken {broken:e}");
}

#[test]
fn translation_preserves_the_homogenized_matrix() {
    let grid = GridSpec::unit(2, 16).unwrap();
    let f = sample_field(&lognormal(1.0), &grid, 5).unwrap();
    let cfg = SolverConfig::with_tol(1e-11);
    let a = solve_extended_corrector(&f, &cfg).unwrap().a_hom;
    let b = solve_extended_corrector(&translate(&f, &[3, -5]), &cfg).unwrap().a_hom;
    for i in 0..2 {
        for j in 0..2 {
            assert!((a[i][j] - b[i][j]).abs() < 1e-8, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn scaling_the_field_scales_the_homogenized_matrix() {
    let grid = GridSpec::unit(2, 8).unwrap();
    let f = sample_field(&lognormal(0.5), &grid, 2).unwrap();
    let cfg = SolverConfig::with_tol(1e-11);
    let a = solve_extended_corrector(&f, &cfg).unwrap();
    let b = solve_extended_corrector(&f.scaled(3.0), &cfg).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((3.0 * a.a_hom[i][j] - b.a_hom[i][j]).abs() < 1e-8);
        }
        for x in 0..grid.n_cells() {
            assert!((a.phi[i][x] - b.phi[i][x]).abs() < 1e-8);
        }
    }
}

#[test]
fn solution_snapshot_matches_the_solver() {
    let grid = GridSpec::unit(2, 8).unwrap();
    let f = sample_field(&lognormal(1.0), &grid, 9).unwrap();
    let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_solution(&mut buf, &f, &sol, 0.0).unwrap();
    let snap = read_solution(&mut buf.as_slice()).unwrap();
    assert_eq!(snap.field_hash, field_hash(&f));
    assert_eq!(snap.phi, sol.phi);
    assert_eq!(snap.sigma, sol.sigma);
    assert_eq!(snap.flux, sol.flux);
    assert_eq!(snap.a_hom, sol.a_hom);
}

#[test]
fn radius_reports_recheck_on_sampled_fields() {
    let grid = GridSpec::unit(2, 16).unwrap();
    for seed in 0..4 {
        let f = sample_field(&lognormal(1.0), &grid, seed).unwrap();
        let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
        let cfg = RadiusConfig { p: 4.0, q: 4.0, k: 3.0, c0: 4.0, m0: 2.0 };
        let rep = radius_report(&f, &sol, &cfg).unwrap();
        rep.recheck().unwrap();
    }
}

#[test]
fn identity_ensemble_has_trivial_radii() {
    let grid = GridSpec::unit(2, 16).unwrap();
    let cfg = MonteCarloConfig { n: 50, k: KPolicy::Fixed { k: 2.0 }, n_boot: 50, eps_samples: 0, ..Default::default() };
    let mc = monte_carlo_radii(&EnsembleModel::identity(), &grid, &cfg).unwrap();
    for r in &mc.reports {
        assert_eq!(r.r_e, 1.0);
        assert_eq!(r.r_star, cfg.m0);
    }
}

#[test]
fn twoscale_driver_reports_small_identity_residuals() {
    let cfg = TwoScaleConfig {
        macro_length: 4.0,
        deltas: vec![0.25, 0.125],
        load: MacroLoad::Bump { amplitude: vec![1.0, 0.5], radius: 1.0 },
        tol: 1e-9,
        realizations: 2,
        master_seed: 3,
        q: 4.0,
        regime: RegimeParams { beta: 0.0, eps_d: 2.0 },
    };
    let r = run_twoscale(&lognormal(0.5), 2, &cfg).unwrap();
    assert_eq!(r.points.len(), 4);
    assert!(r.max_identity_residual <= 100.0 * cfg.tol, "{:e}", r.max_identity_residual);
    assert!(r.points.iter().all(|p| p.energy_error.is_finite() && p.error.is_none()));
}

#[test]
fn identity_field_needs_no_correction() {
    let f = CoefficientField::identity(GridSpec::unit(3, 4).unwrap());
    let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
    assert!(sol.phi.iter().flatten().all(|v| v.abs() < 1e-12));
    assert!(sol.sigma.iter().flatten().flatten().all(|v| v.abs() < 1e-12));
}
