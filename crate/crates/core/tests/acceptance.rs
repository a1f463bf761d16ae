//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Run with `cargo test -p homlab --test acceptance -- --nocapture` to see them.

use std::time::Instant;

use rayon::prelude::*;

use homlab::field::{mat_inverse, CoefficientField, Mat};
use homlab::grid::{Balls, GridSpec};
use homlab::models::{sample_field, EnsembleModel, ModelKind};
use homlab::partition::build_partition;
use homlab::radii::{radius_report, sublinearity_functional, RadiusConfig};
use homlab::solver::corrector::{n_pairs, solve_corrector};
use homlab::solver::dense::solve_mean_zero;
use homlab::solver::operator::dot;
use homlab::solver::{solve_divergence_rhs, solve_extended_corrector, CorrectorSolution, DiscreteOperator, Scheme, SolverConfig};
use homlab::stats::growth::{RegimeParams, TestDensity};
use homlab::stats::montecarlo::{monte_carlo_radii, target_orders, KPolicy, MonteCarloConfig};
use homlab::stats::seeds::derive_seed;
use homlab::stats::sensitivity::{direction_dictionary, sensitivity_probe, SensitivityBase, SensitivityConfig};
use homlab::stats::sgap::{spectral_gap_check, Functional};
use homlab::twoscale::{run_twoscale, MacroLoad, TwoScaleConfig};

fn verdict(n: usize, name: &str, passed: bool, detail: String) {
    println!("criterion {n} ({name}): {} {detail}", if passed { "PASS" } else { "FAIL" });
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn lognormal(side: usize, var: f64) -> EnsembleModel {
    EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: side, log_variance: var }, 4.0, 4.0)
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
fn eig2(m: [[f64; 2]; 2]) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0]).sqrt();
    [(tr - disc) / 2.0, (tr + disc) / 2.0]
}

#[test]
fn criterion_01_constant_coefficients() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 16).unwrap();
    let field = CoefficientField::identity(grid);
    let sol = solve_extended_corrector(&field, &SolverConfig::default()).unwrap();
    let phi = sol.phi.iter().map(|p| max_abs(p)).fold(0.0, f64::max);
    let sigma_zero = sol.sigma.iter().flatten().flatten().all(|v| *v == 0.0);
    let mut ahom = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            ahom = ahom.max((sol.a_hom[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let cfg = RadiusConfig { p: 4.0, q: 4.0, k: 1.0, c0: 16.0, m0: 8.0 };
    let rep = radius_report(&field, &sol, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let passed = phi <= 1e-10 && sigma_zero && ahom <= 1e-10 && rep.r_e == 1.0 && rep.r_star == cfg.m0 && secs < 1.0;
    verdict(
        1,
        "constant coefficients",
        passed,
        format!("|phi|={phi:e} sigma==0:{sigma_zero} |a_hom-I|={ahom:e} r_e={} r_*={} in {secs:.3}s", rep.r_e, rep.r_star),
    );
    assert!(passed);
}

#[test]
fn criterion_02_laminate() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 64).unwrap();
    let model = EnsembleModel::new(ModelKind::Laminate { profile: vec![1.0, 4.0], width: 1 }, 4.0, 4.0);
    let sol = solve_extended_corrector(&sample_field(&model, &grid, 0).unwrap(), &SolverConfig::with_tol(1e-12)).unwrap();
    // harmonic mean across the layers, arithmetic mean along them
    let want = [[1.6, 0.0], [0.0, 2.5]];
    let err = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (sol.a_hom[i][j] - want[i][j]).abs()).fold(0.0, f64::max);
    let q = &sol.flux[0];
    let spread = (0..2)
        .map(|k| {
            let c: Vec<f64> = q.iter().skip(k).step_by(2).copied().collect();
            let m = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|v| (v - m).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let passed = err <= 1e-6 && spread <= 1e-8 && secs < 10.0;
    verdict(2, "laminate", passed, format!("|a_hom-diag(1.6,2.5)|={err:e} q_1 spread={spread:e} in {secs:.2}s"));
    assert!(passed);
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&d) / max_abs(b).max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_03_dense_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for side in [4, 6] {
        let grid = GridSpec::unit(2, side).unwrap();
        let n = grid.n_cells();
        for s in 0..20u64 {
            let field = sample_field(&lognormal(1, 1.0), &grid, derive_seed(77, "dense", side as u64 * 100 + s)).unwrap();
            let op = DiscreteOperator::assemble(&field, Scheme::CellTensor).unwrap();
            for i in 0..2 {
                let mut e = vec![0.0; n * 2];
                (0..n).for_each(|x| e[x * 2 + i] = 1.0);
                let b: Vec<f64> = op.grad_transpose(&op.apply_blocks(&e)).iter().map(|v| -v).collect();
                let exact = solve_mean_zero(&op, &b).unwrap();
                worst = worst.max(rel(&solve_corrector(&op, i, 1e-14).phi, &exact));
                cases += 1;
            }
            let g: Vec<f64> = (0..n * 2).map(|e| ((e as u64 * 13 + s) as f64).sin()).collect();
            let b: Vec<f64> = op.grad_transpose(&g).iter().map(|v| -v).collect();
            let u = solve_divergence_rhs(&op, &g, 1e-14).unwrap();
            worst = worst.max(rel(&u.x, &solve_mean_zero(&op, &b).unwrap()));
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = worst <= 1e-10 && secs < 30.0;
    verdict(3, "dense equivalence", passed, format!("worst relative difference {worst:e} over {cases} solves in {secs:.2}s"));
    assert!(passed);
}

struct Identities {
    skew: f64,
    divergence: f64,
    orthogonality: f64,
    bounds: f64,
}

fn identities(sol: &CorrectorSolution) -> Identities {
    let op = &sol.op;
    let n = op.n();
    let d = 2;
    let mut out = Identities { skew: 0.0, divergence: 0.0, orthogonality: 0.0, bounds: f64::INFINITY };
    for i in 0..d {
        let q = &sol.flux[i];
        let qmax = max_abs(q);
        let qmean: Vec<f64> = (0..d).map(|j| (0..n).map(|x| q[x * d + j]).sum::<f64>() / n as f64).collect();
        for x in 0..n {
            for j in 0..d {
                let mut div = 0.0;
                for k in 0..d {
                    out.skew = out.skew.max((sol.sigma_at(i, j, k, x) + sol.sigma_at(i, k, j, x)).abs());
                    let c = op.grid.coords(x);
                    let mut back = [c[0], c[1], 0];
                    back[k] = (back[k] + op.grid.l - 1) % op.grid.l;
                    div += sol.sigma_at(i, j, k, x) - sol.sigma_at(i, j, k, op.grid.index(&back[..d]));
                }
                out.divergence = out.divergence.max((div - (q[x * d + j] - qmean[j])).abs() / qmax);
            }
        }
        for j in 0..d {
            let g = op.gradient(&sol.phi[i]);
            let c = dot(&sol.flux[j], &g) / n as f64;
            out.orthogonality = out.orthogonality.max(c.abs() / (sol.a_hom[i][i] * sol.a_hom[j][j]).sqrt());
        }
    }
    let mut arith = [[0.0; 2]; 2];
    let mut inv = [[0.0; 2]; 2];
    for x in 0..n {
        let b = op.block(x);
        let bi = mat_inverse(2, &b);
        for r in 0..2 {
            for c in 0..2 {
                arith[r][c] += b[r][c] / n as f64;
                inv[r][c] += bi[r][c] / n as f64;
            }
        }
    }
    let mut inv3: Mat = [[0.0; 3]; 3];
    for r in 0..2 {
        inv3[r][..2].copy_from_slice(&inv[r]);
    }
    let harm = mat_inverse(2, &inv3);
    let a = sol.a_hom;
    let sym = |r: usize, c: usize| 0.5 * (a[r][c] + a[c][r]);
    let lower = eig2([[sym(0, 0) - harm[0][0], sym(0, 1) - harm[0][1]], [sym(1, 0) - harm[1][0], sym(1, 1) - harm[1][1]]])[0];
    let upper = eig2([[arith[0][0] - sym(0, 0), arith[0][1] - sym(0, 1)], [arith[1][0] - sym(1, 0), arith[1][1] - sym(1, 1)]])[0];
    out.bounds = lower.min(upper);
    out
}

#[test]
fn criterion_04_extended_corrector_identities() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 64).unwrap();
    let all: Vec<Identities> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let field = sample_field(&lognormal(2, 1.0), &grid, derive_seed(4, "realization", s)).unwrap();
            identities(&solve_extended_corrector(&field, &SolverConfig::with_tol(1e-11)).unwrap())
        })
        .collect();
    let skew = all.iter().map(|v| v.skew).fold(0.0, f64::max);
    let div = all.iter().map(|v| v.divergence).fold(0.0, f64::max);
    let ortho = all.iter().map(|v| v.orthogonality).fold(0.0, f64::max);
    let margin = all.iter().map(|v| v.bounds).fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    let passed = skew == 0.0 && div <= 1e-8 && ortho <= 1e-8 && margin >= -1e-8 && secs < 300.0;
    verdict(
        4,
        "extended-corrector identities",
        passed,
        format!("skew={skew:e} div={div:e} orth={ortho:e} min bound margin={margin:e} over 50 fields in {secs:.1}s"),
    );
    assert!(passed);
}

#[test]
fn criterion_05_checkerboard_self_duality() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 256).unwrap();
    // resolved blocks under the two-point harmonic-face flux, which keeps the square symmetry
    let model = EnsembleModel::new(ModelKind::TwoPhaseCheckerboard { block_side: 8, low: 1.0, high: 4.0 }, 4.0, 4.0);
    let solver = SolverConfig { scheme: Scheme::HarmonicFace, ..SolverConfig::default() };
    let n = 50;
    let a: Vec<Mat> = (0..n as u64)
        .into_par_iter()
        .map(|s| {
            let f = sample_field(&model, &grid, derive_seed(5, "realization", s)).unwrap();
            solve_extended_corrector(&f, &solver).unwrap().a_hom
        })
        .collect();
    let det = a.iter().map(|m| m[0][0] * m[1][1] - m[0][1] * m[1][0]).sum::<f64>() / n as f64;
    let mut ok = true;
    let mut detail = String::new();
    for (i, j, want) in [(0, 0, 2.0), (1, 1, 2.0), (0, 1, 0.0)] {
        let v: Vec<f64> = a.iter().map(|m| m[i][j]).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        ok &= (mean - want).abs() <= 3.0 * se;
        detail += &format!("a{}{}={mean:.5}±{se:.1e} ", i + 1, j + 1);
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = ok && secs < 900.0;
    verdict(5, "checkerboard self-duality", passed, format!("{detail}det={det:.4} (block side 8, harmonic face) in {secs:.1}s"));
    assert!(passed);
}

#[test]
fn criterion_06_sublinearity() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 256).unwrap();
    let balls = Balls::new(&grid);
    let x: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let f = sample_field(&lognormal(1, 1.0), &grid, derive_seed(6, "realization", s)).unwrap();
            let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
            (sublinearity_functional(&sol, &balls, 8.0, 4.0, 4.0).x(), sublinearity_functional(&sol, &balls, 64.0, 4.0, 4.0).x())
        })
        .collect();
    let x8 = x.iter().map(|v| v.0).sum::<f64>() / x.len() as f64;
    let x64 = x.iter().map(|v| v.1).sum::<f64>() / x.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let passed = x8 / x64 >= 2.0;
    verdict(6, "sublinearity", passed, format!("mean X(8)={x8:.4e} X(64)={x64:.4e} ratio {:.2} in {secs:.1}s", x8 / x64));
    assert!(passed);
}

#[test]
fn criterion_07_tail_positivity() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 128).unwrap();
    let model = EnsembleModel::new(
        ModelKind::HeavyTailedBlock { block_side: 4, tail_index_mu: 1.0, tail_index_lambda: 8.0, truncation: 1000.0 },
        1.3,
        5.0,
    );
    let cfg = MonteCarloConfig { n: 200, c0: 4.0, m0: 2.0, k: KPolicy::Empirical { pilot: 32 }, master_seed: 2024, ..Default::default() };
    let mc = monte_carlo_radii(&model, &grid, &cfg).unwrap();
    let monotone = |s: &[f64]| s.windows(2).all(|w| w[1] <= w[0]);
    let eps = mc.eps.as_ref().map(|h| h.eps);
    let (order_e, order_star) = target_orders(&model, 2, 0.0, eps);
    let describe = |t: &homlab::stats::survival::TailEstimate| {
        format!("gamma={:.3} ci={:?} censored={}", t.fit.map_or(f64::NAN, |f| f.gamma), t.gamma_ci, t.censored)
    };
    let secs = start.elapsed().as_secs_f64();
    let passed =
        mc.r_e.gamma_positive() && mc.r_star.gamma_positive() && monotone(&mc.r_e.curve.s) && monotone(&mc.r_star.curve.s) && secs < 3600.0;
    verdict(
        7,
        "tail positivity",
        passed,
        format!(
            "r_e: {} (target order {order_e:.3}); r_*: {} (target order {order_star:.3}, eps={:.3}); K={:.3} in {secs:.0}s",
            describe(&mc.r_e),
            describe(&mc.r_star),
            eps.unwrap_or(f64::NAN),
            mc.k
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_08_twoscale() {
    let start = Instant::now();
    let base = TwoScaleConfig {
        macro_length: 4.0,
        deltas: vec![0.125, 0.0625, 0.03125],
        load: MacroLoad::Bump { amplitude: vec![1.0, 0.5], radius: 1.0 },
        tol: 1e-9,
        realizations: 10,
        master_seed: 8,
        q: 4.0,
        regime: RegimeParams { beta: 0.0, eps_d: 2.0 },
    };
    let laminate = EnsembleModel::new(ModelKind::Laminate { profile: vec![1.0, 4.0], width: 1 }, 4.0, 4.0);
    let lam = run_twoscale(&laminate, 2, &base).unwrap();
    let random = run_twoscale(&lognormal(1, 1.0), 2, &TwoScaleConfig { realizations: 3, ..base.clone() }).unwrap();
    let residual = lam.max_identity_residual.max(random.max_identity_residual);
    let every_run = lam.points.iter().chain(&random.points).all(|p| p.error.is_none() && p.identity_residual <= 100.0 * base.tol);
    let order = lam.order.as_ref().map_or(f64::NAN, |s| s.slope);
    let secs = start.elapsed().as_secs_f64();
    let passed = every_run && (0.7..=1.3).contains(&order) && secs < 1800.0;
    let means: Vec<String> = lam.summary.iter().map(|s| format!("{}:{:.3e}", s.delta, s.mean_error)).collect();
    verdict(
        8,
        "two-scale expansion",
        passed,
        format!(
            "max identity residual {residual:e} (bound {:e}); laminate order {order:.3} from [{}] in {secs:.1}s",
            100.0 * base.tol,
            means.join(", ")
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_spectral_gap() {
    let start = Instant::now();
    let functionals = [
        Functional::MuPowerAvg { radius: 2.0 },
        Functional::LambdaPowerAvg { radius: 2.0 },
        Functional::CellEntry { i: 0, j: 1 },
        Functional::AhomEntry { i: 0, j: 0 },
    ];
    let models = [
        (lognormal(2, 0.5), 8usize),
        (EnsembleModel::new(ModelKind::TwoPhaseCheckerboard { block_side: 1, low: 1.0, high: 4.0 }, 4.0, 4.0), 8),
    ];
    let mut passed = true;
    let mut detail = Vec::new();
    for (m, (model, l)) in models.iter().enumerate() {
        let grid = GridSpec::unit(2, *l).unwrap();
        for f in functionals {
            let r = spectral_gap_check(model, f, &grid, 10_000, None, 9 + m as u64).unwrap();
            passed &= r.passed;
            detail.push(format!("{:.3}±{:.3}", r.ratio, r.ratio_se));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 600.0;
    verdict(9, "spectral-gap surrogate", passed, format!("ratios [{}] with N=10000, L=8 in {secs:.1}s", detail.join(", ")));
    assert!(passed);
}

/// First-order response on the identity background: `G^T G phi' = -G^T (b chi_D e_i)`,
/// `q' = b chi_D e_i + G phi'` and `G^T G sigma'_jk = D_j q'_k - D_k q'_j`, all by dense LU.
fn linear_response(op: &DiscreteOperator, cells: &[usize], b: &Mat, i: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = op.n();
    let d = 2;
    let mut f = vec![0.0; n * d];
    for &x in cells {
        for k in 0..d {
            f[x * d + k] = b[k][i];
        }
    }
    let rhs: Vec<f64> = op.grad_transpose(&f).iter().map(|v| -v).collect();
    let phi = solve_mean_zero(op, &rhs).unwrap();
    let g = op.gradient(&phi);
    let q: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
    let grid = op.grid;
    let up = |x: usize, k: usize| {
        let mut c = grid.coords(x);
        c[k] = (c[k] + 1) % grid.l;
        grid.index(&c[..d])
    };
    let curl: Vec<f64> = (0..n).map(|x| (q[up(x, 0) * d + 1] - q[x * d + 1]) - (q[up(x, 1) * d] - q[x * d])).collect();
    let sigma = solve_mean_zero(op, &curl).unwrap();
    assert_eq!(n_pairs(d), 1);
    (phi, vec![sigma])
}

#[test]
fn criterion_10_sensitivity() {
    let start = Instant::now();
    let grid = GridSpec::unit(2, 16).unwrap();
    let partition = build_partition(&grid, 0.5).unwrap();

    // finite differences against the linear response on the identity background
    let identity = CoefficientField::identity(grid);
    let cfg = SensitivityConfig { radii: vec![1.0, 2.0, 4.0, 8.0], density: TestDensity::Constant { axis: 0 }, ..Default::default() };
    let base = SensitivityBase::new(&identity, &cfg).unwrap();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for blk in partition.blocks.iter().step_by(3) {
        for b in direction_dictionary(2, 0) {
            let fd = base.derivative(&blk.cells, &b).unwrap();
            let (phi, sigma) = linear_response(&base.op, &blk.cells, &b, cfg.component);
            let oracle = base.functionals(&phi, &sigma);
            let scale = max_abs(&oracle);
            for (v, o) in fd.value.iter().zip(&oracle) {
                worst = worst.max((v - o).abs() / o.abs().max(1e-3 * scale).max(1e-300));
                compared += 1;
            }
        }
    }

    // decay of the aggregate over random backgrounds
    let slopes: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let f = sample_field(&lognormal(1, 1.0), &grid, derive_seed(10, "realization", s)).unwrap();
            sensitivity_probe(&f, &partition, &cfg).unwrap().slope.map_or(f64::NAN, |sl| sl.slope)
        })
        .collect();
    let negative = slopes.iter().filter(|s| **s < 0.0).count();
    // one-sided sign test at 5%: P(Bin(50, 1/2) >= 32) < 0.05
    let secs = start.elapsed().as_secs_f64();
    let passed = worst <= 0.01 && negative >= 32 && secs < 1200.0;
    let mean_slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    verdict(
        10,
        "sensitivity probe",
        passed,
        format!("worst FD/oracle relative gap {worst:e} over {compared} values; {negative}/50 negative slopes (mean {mean_slope:.3}) in {secs:.1}s"),
    );
    assert!(passed);
}
