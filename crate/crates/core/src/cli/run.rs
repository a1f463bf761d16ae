//! Experiment drivers behind the subcommands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use homlab::error::{HomError, Result};
use homlab::field::Mat;
use homlab::grid::GridSpec;
use homlab::io::{field_hash, save_field, write_solution};
use homlab::models::sample_field;
use homlab::partition::build_partition;
use homlab::radii::{radius_report, RadiusConfig, RadiusReport};
use homlab::solver::corrector::Residuals;
use homlab::solver::{homogenized_matrix, solve_extended_corrector, CorrectorSolution, HomogenizedMatrix, SolveStats};
use homlab::stats::growth::{corrector_growth_curve, GrowthCurve, RegimeParams, TestDensity};
use homlab::stats::montecarlo::{monte_carlo_radii, resolve_k, target_orders, MonteCarloConfig};
use homlab::stats::seeds::derive_seed;
use homlab::stats::sgap::spectral_gap_check;
use homlab::stats::survival::SurvivalCurve;
use homlab::twoscale::{run_twoscale, TwoScaleConfig};
use homlab::verify::{run_verify, VerifyConfig};

use super::config::{Experiment, ExperimentConfig};
use super::output::{num, OutputDir};

/// What an experiment reports back to the manifest.
pub struct Outcome {
    pub seeds: Vec<u64>,
    /// False when a self-check failed.
    pub passed: bool,
}

fn realization_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| derive_seed(master, "realization", i as u64)).collect()
}

fn ensure_converged(sol: &CorrectorSolution) -> Result<()> {
    match sol.stats.iter().find(|s| !s.converged) {
        Some(s) => Err(HomError::NotConverged { iterations: s.iterations, residual: s.relative_residual }),
        None => Ok(()),
    }
}

fn mat_rows(m: &Mat, d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| m[i][..d].to_vec()).collect()
}

fn survival_rows(c: &SurvivalCurve) -> Vec<Vec<String>> {
    (0..c.radii.len()).map(|t| vec![num(c.radii[t]), num(c.s[t]), num(c.ci_lo[t]), num(c.ci_hi[t])]).collect()
}

pub fn run(exp: Experiment, cfg: Option<&ExperimentConfig>, verify: &VerifyConfig, out: &mut OutputDir) -> Result<Outcome> {
    if exp == Experiment::Verify {
        let report = run_verify(verify)?;
        out.jsonl("records.jsonl", &report.checks)?;
        out.json("summary.json", &json!({ "experiment": "verify", "passed": report.passed, "failed": report.failed() }))?;
        return Ok(Outcome { seeds: vec![verify.master_seed], passed: report.passed });
    }
    let cfg = cfg.ok_or_else(|| HomError::Config(format!("{} needs --config", exp.name())))?;
    let grid = cfg.grid()?;
    match exp {
        Experiment::Gen => gen(cfg, &grid, out),
        Experiment::Corrector => corrector(cfg, &grid, out),
        Experiment::Radii => radii(cfg, &grid, out),
        Experiment::Tails => tails(cfg, &grid, out),
        Experiment::Twoscale => twoscale(cfg, out),
        Experiment::Sgcheck => sgcheck(cfg, &grid, out),
        Experiment::Verify => unreachable!(),
    }
}

fn gen(cfg: &ExperimentConfig, grid: &GridSpec, out: &mut OutputDir) -> Result<Outcome> {
    let seeds = realization_seeds(cfg.seed, cfg.n);
    let model = &cfg.model.model;
    let fields = seeds.par_iter().map(|&s| sample_field(model, grid, s)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out.root.join("fields"))?;
    let mut records = Vec::new();
    for (i, f) in fields.iter().enumerate() {
        let name = format!("fields/field_{i:04}_{}.dghm", out.hash);
        save_field(&out.path(&name), f)?;
        records.push(json!({ "index": i, "seed": f.seed, "model_id": f.model_id, "field_hash": field_hash(f), "file": name }));
    }
    out.jsonl("records.jsonl", &records)?;
    out.json("summary.json", &json!({ "experiment": "gen", "n": cfg.n, "model_id": model.id(), "grid": grid }))?;
    Ok(Outcome { seeds, passed: true })
}

#[derive(Serialize)]
struct CorrectorRecord {
    index: usize,
    seed: u64,
    a_hom: Vec<Vec<f64>>,
    bounds: HomogenizedMatrix,
    residuals: Residuals,
    solves: Vec<SolveStats>,
    growth: GrowthCurve,
    snapshot: String,
}

fn growth_radii(grid: &GridSpec) -> Vec<f64> {
    std::iter::successors(Some(1.0), |r| Some(r * 2.0)).take_while(|r| *r <= (grid.l / 4) as f64).collect()
}

fn corrector(cfg: &ExperimentConfig, grid: &GridSpec, out: &mut OutputDir) -> Result<Outcome> {
    let seeds = realization_seeds(cfg.seed, cfg.n);
    let model = &cfg.model.model;
    let d = grid.d;
    let radii = growth_radii(grid);
    let densities = [TestDensity::Constant { axis: 0 }, TestDensity::Radial];
    let regime = RegimeParams { beta: cfg.model.beta, eps_d: d as f64 };
    fs::create_dir_all(out.root.join("solutions"))?;
    let names: Vec<String> = (0..cfg.n).map(|i| format!("solutions/solution_{i:04}_{}.dghs", out.hash)).collect();
    let paths: Vec<_> = names.iter().map(|n| out.path(n)).collect();
    let deterministic = cfg.deterministic;
    let records = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| -> Result<CorrectorRecord> {
            let t = Instant::now();
            let field = sample_field(model, grid, seed)?;
            let sol = solve_extended_corrector(&field, &cfg.solver)?;
            ensure_converged(&sol)?;
            let wall = if deterministic { 0.0 } else { t.elapsed().as_secs_f64() };
            write_solution(&mut BufWriter::new(File::create(&paths[i])?), &field, &sol, wall)?;
            let growth = corrector_growth_curve(&sol, &radii, &densities, model.p, model.q, regime);
            Ok(CorrectorRecord {
                index: i,
                seed,
                a_hom: mat_rows(&sol.a_hom, d),
                bounds: homogenized_matrix(&sol),
                residuals: sol.residuals.clone(),
                solves: sol.stats.clone(),
                growth,
                snapshot: names[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.jsonl("records.jsonl", &records)?;

    let nf = records.len() as f64;
    let mut mean = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let v: Vec<f64> = records.iter().map(|r| r.a_hom[i][j]).collect();
            let m = v.iter().sum::<f64>() / nf;
            mean[i][j] = m;
            if records.len() > 1 {
                se[i][j] = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
            }
        }
    }
    let rows: Vec<Vec<String>> = (0..radii.len())
        .map(|t| {
            let phi = records.iter().map(|r| r.growth.osc_phi[t]).sum::<f64>() / nf;
            let sigma = records.iter().map(|r| r.growth.osc_sigma[t]).sum::<f64>() / nf;
            vec![num(radii[t]), num(phi), num(sigma)]
        })
        .collect();
    out.csv("growth.csv", &["r", "osc_phi", "osc_sigma"], &rows)?;
    out.json("summary.json", &json!({ "experiment": "corrector", "n": cfg.n, "a_hom_mean": mean, "a_hom_se": se }))?;
    Ok(Outcome { seeds, passed: true })
}

fn radii(cfg: &ExperimentConfig, grid: &GridSpec, out: &mut OutputDir) -> Result<Outcome> {
    let seeds = realization_seeds(cfg.seed, cfg.n);
    let model = &cfg.model.model;
    let k = resolve_k(model, grid, cfg.radii.k, cfg.seed)?;
    let rc = RadiusConfig { p: model.p, q: model.q, k, c0: cfg.radii.c0, m0: cfg.radii.m0 };
    let reports = seeds
        .par_iter()
        .map(|&seed| -> Result<RadiusReport> {
            let field = sample_field(model, grid, seed)?;
            let sol = solve_extended_corrector(&field, &cfg.solver)?;
            ensure_converged(&sol)?;
            let r = radius_report(&field, &sol, &rc)?;
            r.recheck()?;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    out.jsonl("records.jsonl", &reports)?;
    let r_e: Vec<f64> = reports.iter().map(|r| r.r_e).collect();
    let r_star: Vec<f64> = reports.iter().map(|r| r.r_star).collect();
    out.json(
        "summary.json",
        &json!({
            "experiment": "radii",
            "k": k,
            "c0": cfg.radii.c0,
            "m0": cfg.radii.m0,
            "r_e": r_e,
            "r_star": r_star,
            "r_e_truncated": reports.iter().filter(|r| r.r_e_truncated).count(),
            "r_star_truncated": reports.iter().filter(|r| r.r_star_truncated).count(),
        }),
    )?;
    Ok(Outcome { seeds, passed: true })
}

fn tails(cfg: &ExperimentConfig, grid: &GridSpec, out: &mut OutputDir) -> Result<Outcome> {
    let model = &cfg.model.model;
    let mc_cfg = MonteCarloConfig {
        n: cfg.n,
        c0: cfg.radii.c0,
        m0: cfg.radii.m0,
        k: cfg.radii.k,
        solver: cfg.solver,
        beta: cfg.model.beta,
        n_boot: cfg.radii.n_boot,
        eps_samples: cfg.radii.eps_samples,
        master_seed: cfg.seed,
    };
    let mc = monte_carlo_radii(model, grid, &mc_cfg)?;
    out.jsonl("records.jsonl", &mc.reports)?;
    out.csv("survival_r_e.csv", &["r", "S", "ci_lo", "ci_hi"], &survival_rows(&mc.r_e.curve))?;
    out.csv("survival_r_star.csv", &["r", "S", "ci_lo", "ci_hi"], &survival_rows(&mc.r_star.curve))?;
    let (order_e, order_star) = target_orders(model, grid.d, cfg.model.beta, mc.eps.as_ref().map(|e| e.eps));
    out.json(
        "summary.json",
        &json!({
            "experiment": "tails",
            "k": mc.k,
            "r_e": { "fit": mc.r_e.fit, "gamma_ci": mc.r_e.gamma_ci, "censored": mc.r_e.censored, "target_order": order_e, "gamma_positive": mc.r_e.gamma_positive() },
            "r_star": { "fit": mc.r_star.fit, "gamma_ci": mc.r_star.gamma_ci, "censored": mc.r_star.censored, "target_order": order_star, "gamma_positive": mc.r_star.gamma_positive() },
            "eps": mc.eps,
            "warnings": mc.warnings,
        }),
    )?;
    Ok(Outcome { seeds: realization_seeds(cfg.seed, cfg.n), passed: true })
}

fn twoscale(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome> {
    let t = cfg.twoscale.as_ref().ok_or_else(|| HomError::Config("missing [twoscale] section".into()))?;
    let d = cfg.grid.d;
    let ts = TwoScaleConfig {
        macro_length: t.macro_length,
        deltas: t.deltas.clone(),
        load: t.load.clone(),
        tol: cfg.solver.tol,
        realizations: t.realizations,
        master_seed: cfg.seed,
        q: cfg.model.model.q,
        regime: RegimeParams { beta: cfg.model.beta, eps_d: t.eps_d.unwrap_or(d as f64) },
    };
    let res = run_twoscale(&cfg.model.model, d, &ts)?;
    out.jsonl("records.jsonl", &res.points)?;
    let rows: Vec<Vec<String>> = res
        .points
        .iter()
        .map(|p| vec![num(p.delta), num(p.energy_error), num(p.term1), num(p.term2), num(p.identity_residual), p.seed.to_string()])
        .collect();
    out.csv("twoscale.csv", &["delta", "energy_error", "term1", "term2", "identity_residual", "seed"], &rows)?;
    out.json(
        "summary.json",
        &json!({ "experiment": "twoscale", "summary": res.summary, "order": res.order, "max_identity_residual": res.max_identity_residual }),
    )?;
    Ok(Outcome { seeds: res.points.iter().map(|p| p.seed).collect(), passed: true })
}

fn sgcheck(cfg: &ExperimentConfig, grid: &GridSpec, out: &mut OutputDir) -> Result<Outcome> {
    let s = cfg.sgcheck.as_ref().ok_or_else(|| HomError::Config("missing [sgcheck] section".into()))?;
    let partition = s.partition_beta.map(|b| build_partition(grid, b)).transpose()?;
    let reports = s
        .functionals
        .iter()
        .map(|f| spectral_gap_check(&cfg.model.model, *f, grid, cfg.n, partition.as_ref(), cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    out.jsonl("records.jsonl", &reports)?;
    let all = reports.iter().all(|r| r.passed);
    out.json("summary.json", &json!({ "experiment": "sgcheck", "samples": cfg.n, "all_passed": all }))?;
    Ok(Outcome { seeds: (0..cfg.n).map(|i| derive_seed(cfg.seed, "sgap", i as u64)).collect(), passed: true })
}
