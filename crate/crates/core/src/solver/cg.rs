//! Jacobi-preconditioned conjugate gradients on the mean-zero subspace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operator::{dot, remove_mean, DiscreteOperator, MIN_LEN};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Achieved `||b - A x|| / ||b||`.
    pub relative_residual: f64,
    pub converged: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub stats: SolveStats,
}

/// Iteration cap scaled with grid size and the diagonal condition estimate.
pub fn default_max_iterations(op: &DiscreteOperator) -> usize {
    let l = op.grid.l as f64;
    let cap = 100.0 * l * op.condition_estimate().sqrt().max(1.0);
    (cap as usize).clamp(2_000, 2_000_000)
}

/// Solves `op x = b` for mean-zero `b`; the constant mode is projected out every iteration.
pub fn solve(op: &DiscreteOperator, b: &[f64], tol: f64, max_iterations: usize) -> CgOutcome {
    let n = b.len();
    let mut rhs = b.to_vec();
    remove_mean(&mut rhs);
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return CgOutcome {
            x,
            stats: SolveStats { iterations: 0, relative_residual: 0.0, converged: true, tolerance: tol, max_iterations },
        };
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|&v| 1.0 / v.max(1e-300)).collect();
    let precondition = |r: &[f64]| {
        let mut z: Vec<f64> = r.par_iter().zip(&inv_diag).with_min_len(MIN_LEN).map(|(a, b)| a * b).collect();
        remove_mean(&mut z);
        z
    };

    let mut r = rhs.clone();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = (f64::INFINITY, 0usize);
    let mut best_x = x.clone();
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iterations {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).with_min_len(MIN_LEN).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).with_min_len(MIN_LEN).for_each(|(ri, api)| *ri -= alpha * api);
        iterations += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel < best.0 {
            best = (rel, iterations);
        }
        if rel <= tol {
            break;
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).with_min_len(MIN_LEN).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        if iterations % 50 == 0 && rel <= best.0 {
            best_x.copy_from_slice(&x);
        }
    }
    remove_mean(&mut x);
    // recompute the true residual to guard against recurrence drift
    let ax = op.apply(&x);
    let true_res: f64 = {
        let diff: Vec<f64> = rhs.iter().zip(&ax).map(|(a, b)| a - b).collect();
        dot(&diff, &diff).sqrt() / bnorm
    };
    let converged = rel <= tol && true_res <= 10.0 * tol;
    if !converged && best.0 < rel {
        remove_mean(&mut best_x);
        let ax = op.apply(&best_x);
        let diff: Vec<f64> = rhs.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let best_res = dot(&diff, &diff).sqrt() / bnorm;
        if best_res < true_res {
            return CgOutcome {
                x: best_x,
                stats: SolveStats { iterations, relative_residual: best_res, converged: false, tolerance: tol, max_iterations },
            };
        }
    }
    CgOutcome { x, stats: SolveStats { iterations, relative_residual: true_res, converged, tolerance: tol, max_iterations } }
}
