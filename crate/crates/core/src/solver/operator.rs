//! Conservative discretization of `-div(a grad u)` on the torus.
//!
//! The discrete gradient is the forward difference `(G u)_k(x) = u(x + e_k) - u(x)`,
//! living on the edge from `x` to `x + e_k`. The operator is `G^T A G` where `A`
//! is a symmetric positive definite d×d block per cell acting on the d forward
//! edges of that cell. Fluxes `A G u` live on edges, so the discrete divergence
//! `-G^T` is exact and constants span the kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::field::{mat_inverse, sym_eigenvalues, CoefficientField, Mat};
use crate::grid::{GridSpec, Neighbors};

/// Choice of per-cell edge coupling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// The block is the cell matrix `a(x)` itself.
    #[default]
    CellTensor,
    /// Normal couplings are `e_k . H e_k` with `H` the matrix harmonic mean of
    /// `a(x)` and `a(x + e_k)`; tangential couplings are arithmetic means of
    /// `a_kl` over the four cells sharing the corner.
    HarmonicFace,
}

#[derive(Clone)]
pub struct DiscreteOperator {
    pub grid: GridSpec,
    pub scheme: Scheme,
    pub nb: Neighbors,
    /// Full symmetric d×d block per cell, row-major, `n * d * d` entries.
    blocks: Vec<f64>,
    /// Diagonal of `G^T A G`.
    diag: Vec<f64>,
}

const CHUNK: usize = 4096;
/// Smallest work unit handed to the thread pool; tiny grids run single-threaded.
pub const MIN_LEN: usize = 4096;

/// Deterministic parallel dot product: fixed chunking, ordered final sum.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> =
        a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>()).collect();
    partial.iter().sum()
}

pub fn mean(a: &[f64]) -> f64 {
    let partial: Vec<f64> = a.par_chunks(CHUNK).map(|x| x.iter().sum::<f64>()).collect();
    partial.iter().sum::<f64>() / a.len() as f64
}

pub fn remove_mean(a: &mut [f64]) {
    let m = mean(a);
    a.par_iter_mut().with_min_len(MIN_LEN).for_each(|v| *v -= m);
}

impl DiscreteOperator {
    pub fn assemble(field: &CoefficientField, scheme: Scheme) -> Result<Self> {
        let grid = field.grid;
        let d = grid.d;
        let n = grid.n_cells();
        let nb = Neighbors::new(&grid);
        let mut blocks = vec![0.0; n * d * d];
        match scheme {
            Scheme::CellTensor => {
                for x in 0..n {
                    let m = field.cell(x);
                    for i in 0..d {
                        for j in 0..d {
                            blocks[x * d * d + i * d + j] = m[i][j];
                        }
                    }
                }
            }
            Scheme::HarmonicFace => {
                let inv: Vec<Mat> = (0..n).map(|x| mat_inverse(d, &field.cell(x))).collect();
                for x in 0..n {
                    for k in 0..d {
                        let y = nb.up(x, k);
                        let mut s = [[0.0; 3]; 3];
                        for i in 0..d {
                            for j in 0..d {
                                s[i][j] = 0.5 * (inv[x][i][j] + inv[y][i][j]);
                            }
                        }
                        let h = mat_inverse(d, &s);
                        let hk = h[k][k];
                        if !(hk.is_finite() && hk > 0.0) {
                            return Err(HomError::SingularFace { left: x, right: y });
                        }
                        blocks[x * d * d + k * d + k] = hk;
                    }
                    for k in 0..d {
                        for l in (k + 1)..d {
                            let corner = [x, nb.up(x, k), nb.up(x, l), nb.up(nb.up(x, k), l)];
                            let avg = corner.iter().map(|&c| field.cell(c)[k][l]).sum::<f64>() / 4.0;
                            blocks[x * d * d + k * d + l] = avg;
                            blocks[x * d * d + l * d + k] = avg;
                        }
                    }
                    let mut m = [[0.0; 3]; 3];
                    for i in 0..d {
                        for j in 0..d {
                            m[i][j] = blocks[x * d * d + i * d + j];
                        }
                    }
                    let ev = sym_eigenvalues(d, &m);
                    if !(ev[0] > 0.0) {
                        return Err(HomError::InvalidArgument(format!(
                            "harmonic-face coupling at cell {x} is not positive definite; use the cell-tensor scheme"
                        )));
                    }
                }
            }
        }
        let mut diag = vec![0.0; n];
        for x in 0..n {
            diag[x] = (0..d).map(|k| blocks[x * d * d + k * d + k] + blocks[nb.down(x, k) * d * d + k * d + k]).sum();
        }
        Ok(Self { grid, scheme, nb, blocks, diag })
    }

    pub fn d(&self) -> usize {
        self.grid.d
    }

    pub fn n(&self) -> usize {
        self.grid.n_cells()
    }

    /// The edge-coupling block at cell `x`.
    pub fn block(&self, x: usize) -> Mat {
        let d = self.d();
        let mut m = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = self.blocks[x * d * d + i * d + j];
            }
        }
        m
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Ratio of the largest to the smallest operator diagonal entry.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = self.diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi / lo.max(1e-300)
    }

    /// Forward-difference gradient, `n * d` entries.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut g = vec![0.0; u.len() * d];
        g.par_chunks_mut(d).enumerate().with_min_len(MIN_LEN).for_each(|(x, gx)| {
            for (k, v) in gx.iter_mut().enumerate() {
                *v = u[self.nb.up(x, k)] - u[x];
            }
        });
        g
    }

    /// `G^T f` for an edge field `f`: `sum_k f_k(x - e_k) - f_k(x)`.
    pub fn grad_transpose(&self, f: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut out = vec![0.0; self.n()];
        out.par_iter_mut().enumerate().with_min_len(MIN_LEN).for_each(|(x, o)| {
            *o = (0..d).map(|k| f[self.nb.down(x, k) * d + k] - f[x * d + k]).sum();
        });
        out
    }

    /// Applies the coupling blocks to an edge field.
    pub fn apply_blocks(&self, g: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut f = vec![0.0; g.len()];
        f.par_chunks_mut(d).enumerate().with_min_len(MIN_LEN).for_each(|(x, fx)| {
            let b = &self.blocks[x * d * d..(x + 1) * d * d];
            let gx = &g[x * d..(x + 1) * d];
            for i in 0..d {
                fx[i] = (0..d).map(|j| b[i * d + j] * gx[j]).sum();
            }
        });
        f
    }

    /// `out = G^T A G u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.grad_transpose(&self.apply_blocks(&self.gradient(u)))
    }

    /// Flux `A (xi + G u)` for a constant vector `xi`.
    pub fn flux(&self, xi: &[f64], u: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mut g = self.gradient(u);
        g.par_chunks_mut(d).with_min_len(MIN_LEN).for_each(|gx| {
            for k in 0..d {
                gx[k] += xi[k];
            }
        });
        self.apply_blocks(&g)
    }

    /// Dense matrix of `G^T A G` (test and oracle use on tiny grids only).
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut m = vec![vec![0.0; n]; n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..n {
                m[i][j] = col[i];
            }
            e[j] = 0.0;
        }
        m
    }
}
