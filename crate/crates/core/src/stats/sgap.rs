//! Efron–Stein check of the spectral gap inequality on independent-block models.
//!
//! For independent units `D`, `Var X <= (1/2) sum_D <(X - X^D)^2>` where `X^D`
//! is `X` evaluated after redrawing `D`. Units are the blocks of an optional
//! coarsening partition, merged whenever two of them share a model block.

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::field::{mu_lambda, CoefficientField};
use crate::grid::{Balls, GridSpec};
use crate::models::{block_of, block_value, n_blocks, sample_field, EnsembleModel};
use crate::partition::Partition;
use crate::solver::operator::mean;
use crate::solver::{compute_flux, solve_corrector, DiscreteOperator, Scheme};

use super::seeds::derive_seed;

/// Largest torus side accepted.
pub const MAX_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `avg_{B_R} mu^p`.
    MuPowerAvg { radius: f64 },
    /// `avg_{B_R} lambda^(-q)`.
    LambdaPowerAvg { radius: f64 },
    /// Entry `(i, j)` of the torus homogenized matrix.
    AhomEntry { i: usize, j: usize },
    /// Entry `(i, j)` of the coefficient at the origin cell.
    CellEntry { i: usize, j: usize },
}

impl Functional {
    pub fn evaluate(&self, field: &CoefficientField, p: f64, q: f64) -> Result<f64> {
        let grid = field.grid;
        match *self {
            Functional::MuPowerAvg { radius } => {
                let e = mu_lambda(field)?;
                let cells = Balls::new(&grid).cells(radius).to_vec();
                Ok(cells.iter().map(|&x| e.mu[x].powf(p)).sum::<f64>() / cells.len() as f64)
            }
            Functional::LambdaPowerAvg { radius } => {
                let e = mu_lambda(field)?;
                let cells = Balls::new(&grid).cells(radius).to_vec();
                Ok(cells.iter().map(|&x| e.lambda[x].powf(-q)).sum::<f64>() / cells.len() as f64)
            }
            Functional::AhomEntry { i, j } => {
                let d = grid.d;
                let op = DiscreteOperator::assemble(field, Scheme::CellTensor)?;
                let c = solve_corrector(&op, j, 1e-11);
                if !c.stats.converged {
                    return Err(HomError::NotConverged { iterations: c.stats.iterations, residual: c.stats.relative_residual });
                }
                let flux = compute_flux(&op, &c.phi, j);
                let col: Vec<f64> = flux.iter().skip(i).step_by(d).copied().collect();
                Ok(mean(&col))
            }
            Functional::CellEntry { i, j } => Ok(field.cell(0)[i][j]),
        }
    }

    /// Cells on which the functional depends; `None` means everywhere.
    pub fn support(&self, grid: &GridSpec) -> Option<Vec<usize>> {
        match *self {
            Functional::MuPowerAvg { radius } | Functional::LambdaPowerAvg { radius } => Some(Balls::new(grid).cells(radius).to_vec()),
            Functional::CellEntry { .. } => Some(vec![0]),
            Functional::AhomEntry { .. } => None,
        }
    }
}

/// Resampling units as lists of model blocks.
pub fn resampling_units(grid: &GridSpec, side: usize, partition: Option<&Partition>) -> Vec<Vec<usize>> {
    let nb = n_blocks(grid, side);
    let Some(part) = partition else {
        return (0..nb).map(|b| vec![b]).collect();
    };
    // union-find over model blocks, linked through shared partition blocks
    let mut uf = UnionFind::<usize>::new(nb);
    for pb in &part.blocks {
        let first = block_of(grid, side, pb.cells[0]);
        for &x in &pb.cells[1..] {
            uf.union(first, block_of(grid, side, x));
        }
    }
    let labels = uf.into_labeling();
    let mut roots: Vec<usize> = labels.clone();
    roots.sort_unstable();
    roots.dedup();
    roots.iter().map(|r| (0..nb).filter(|&b| labels[b] == *r).collect()).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerGap {
    pub power: u32,
    /// `<|X - <X>|^(2P)>^(1/P)`.
    pub lhs: f64,
    /// `P^2 <(ES_n)^P>^(1/P)` with `ES_n` the per-sample Efron–Stein sum.
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralGapReport {
    pub functional: Functional,
    pub samples: usize,
    pub units: usize,
    pub active_units: usize,
    pub mean: f64,
    pub variance: f64,
    pub surrogate: f64,
    pub ratio: f64,
    /// Delta-method standard error of `ratio`.
    pub ratio_se: f64,
    pub powers: Vec<PowerGap>,
    pub passed: bool,
}

impl SpectralGapReport {
    fn zero(functional: Functional, samples: usize) -> Self {
        SpectralGapReport {
            functional,
            samples,
            units: 0,
            active_units: 0,
            mean: 0.0,
            variance: 0.0,
            surrogate: 0.0,
            ratio: 0.0,
            ratio_se: 0.0,
            powers: vec![],
            passed: true,
        }
    }
}

pub fn spectral_gap_check(
    model: &EnsembleModel,
    functional: Functional,
    grid: &GridSpec,
    n: usize,
    partition: Option<&Partition>,
    master_seed: u64,
) -> Result<SpectralGapReport> {
    if grid.l > MAX_SIDE {
        return Err(HomError::InvalidArgument(format!("spectral gap check needs L <= {MAX_SIDE}, got {}", grid.l)));
    }
    if n < 2 {
        return Err(HomError::InvalidArgument("need at least two samples".into()));
    }
    if model.is_deterministic() {
        return Ok(SpectralGapReport::zero(functional, n));
    }
    let side = model.block_side().ok_or_else(|| HomError::Rejected(format!("{} is not an independent-block model", model.id())))?;
    if !grid.l.is_multiple_of(side) {
        return Err(HomError::InvalidModel(format!("block side {side} does not divide L={}", grid.l)));
    }
    let units = resampling_units(grid, side, partition);
    let active: Vec<usize> = match functional.support(grid) {
        None => (0..units.len()).collect(),
        Some(cells) => {
            let touched: std::collections::BTreeSet<usize> = cells.iter().map(|&x| block_of(grid, side, x)).collect();
            (0..units.len()).filter(|&u| units[u].iter().any(|b| touched.contains(b))).collect()
        }
    };
    let (p, q) = (model.p, model.q);
    let d = grid.d;

    let per_sample: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<(f64, f64)> {
            let seed = derive_seed(master_seed, "sgap", s as u64);
            let field = sample_field(model, grid, seed)?;
            let x = functional.evaluate(&field, p, q)?;
            let mut es = 0.0;
            for &u in &active {
                let fresh = derive_seed(seed, "resample", u as u64);
                let mut alt = field.clone();
                for &b in &units[u] {
                    let v = block_value(model, d, fresh, b);
                    for c in 0..grid.n_cells() {
                        if block_of(grid, side, c) == b {
                            alt.set_cell(c, &v);
                        }
                    }
                }
                let xd = functional.evaluate(&alt, p, q)?;
                es += 0.5 * (x - xd).powi(2);
            }
            Ok((x, es))
        })
        .collect::<Result<Vec<_>>>()?;

    let nf = n as f64;
    let xbar = per_sample.iter().map(|v| v.0).sum::<f64>() / nf;
    let y: Vec<f64> = per_sample.iter().map(|v| (v.0 - xbar).powi(2) * nf / (nf - 1.0)).collect();
    let s: Vec<f64> = per_sample.iter().map(|v| v.1).collect();
    let a = y.iter().sum::<f64>() / nf;
    let b = s.iter().sum::<f64>() / nf;
    let (ratio, ratio_se) = if b > 0.0 {
        let var_y = y.iter().map(|v| (v - a).powi(2)).sum::<f64>() / (nf - 1.0);
        let var_s = s.iter().map(|v| (v - b).powi(2)).sum::<f64>() / (nf - 1.0);
        let cov = y.iter().zip(&s).map(|(u, v)| (u - a) * (v - b)).sum::<f64>() / (nf - 1.0);
        let var_r = (var_y / (b * b) + a * a * var_s / b.powi(4) - 2.0 * a * cov / b.powi(3)) / nf;
        (a / b, var_r.max(0.0).sqrt())
    } else {
        (0.0, 0.0)
    };
    let powers = [2u32, 3]
        .iter()
        .map(|&pw| {
            let pf = pw as f64;
            let lhs = (per_sample.iter().map(|v| (v.0 - xbar).abs().powf(2.0 * pf)).sum::<f64>() / nf).powf(1.0 / pf);
            let rhs = pf * pf * (s.iter().map(|v| v.powf(pf)).sum::<f64>() / nf).powf(1.0 / pf);
            PowerGap { power: pw, lhs, rhs, ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 } }
        })
        .collect();
    Ok(SpectralGapReport {
        functional,
        samples: n,
        units: units.len(),
        active_units: active.len(),
        mean: xbar,
        variance: a,
        surrogate: b,
        ratio,
        ratio_se,
        powers,
        passed: ratio <= 1.0 + 3.0 * ratio_se,
    })
}
