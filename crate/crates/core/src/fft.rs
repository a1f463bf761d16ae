//! d-dimensional periodic FFT helpers.
//!
//! All operators are expressed in lattice units. The forward difference
//! `D_k u(x) = u(x + e_k) - u(x)` has symbol `z_k = exp(2 pi i m_k / L) - 1`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::Mat;
use crate::grid::GridSpec;

pub struct LatticeFft {
    grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Symbols `z_k` per mode, `n * d` entries.
    symbols: Vec<Complex64>,
}

impl LatticeFft {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.l);
        let inv = planner.plan_fft_inverse(grid.l);
        let n = grid.n_cells();
        let d = grid.d;
        let mut symbols = vec![Complex64::new(0.0, 0.0); n * d];
        for m in 0..n {
            let c = grid.coords(m);
            for k in 0..d {
                let theta = 2.0 * std::f64::consts::PI * c[k] as f64 / grid.l as f64;
                symbols[m * d + k] = Complex64::new(theta.cos() - 1.0, theta.sin());
            }
        }
        Self { grid: *grid, fwd, inv, symbols }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn symbol(&self, mode: usize, k: usize) -> Complex64 {
        self.symbols[mode * self.grid.d + k]
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let l = self.grid.l;
        let n = data.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.grid.d {
            let stride = self.grid.stride(axis);
            // line j starts at the j-th cell whose coordinate along `axis` is 0
            let bases: Vec<usize> = (0..n / l).map(|j| (j / stride) * stride * l + j % stride).collect();
            buf.par_chunks_mut(l).zip(bases.par_iter()).for_each(|(line, &b)| {
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[b + t * stride];
                }
                plan.process(line);
            });
            for (line, &b) in buf.chunks(l).zip(bases.iter()) {
                for (t, v) in line.iter().enumerate() {
                    data[b + t * stride] = *v;
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    /// Normalized inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let scale = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut data);
        data.into_iter().map(|v| v.re).collect()
    }

    /// `-Delta` symbol at a mode.
    pub fn neg_laplacian_symbol(&self, mode: usize) -> f64 {
        (0..self.grid.d).map(|k| self.symbol(mode, k).norm_sqr()).sum()
    }

    /// Solves `-Delta u = rhs` in the zero-mean gauge; the mean of `rhs` is discarded.
    pub fn poisson(&self, rhs: &[f64]) -> Vec<f64> {
        let mut hat = self.forward_real(rhs);
        hat[0] = Complex64::new(0.0, 0.0);
        for (m, v) in hat.iter_mut().enumerate().skip(1) {
            *v /= self.neg_laplacian_symbol(m);
        }
        self.inverse_real(hat)
    }

    /// Solves `-div(A grad u) = rhs` for a constant symmetric matrix `A`,
    /// where the discrete operator is `G^T A G` with forward differences `G`.
    pub fn solve_constant(&self, a: &Mat, rhs: &[f64]) -> Vec<f64> {
        let d = self.grid.d;
        let mut hat = self.forward_real(rhs);
        hat[0] = Complex64::new(0.0, 0.0);
        for (m, v) in hat.iter_mut().enumerate().skip(1) {
            let mut s = 0.0;
            for j in 0..d {
                for k in 0..d {
                    s += (self.symbol(m, j).conj() * a[j][k] * self.symbol(m, k)).re;
                }
            }
            *v /= s;
        }
        self.inverse_real(hat)
    }

    /// Periodic convolution `(f * kernel)(x) = sum_y f(x - y) kernel(y)`.
    pub fn convolve(&self, f: &[f64], kernel: &[f64]) -> Vec<f64> {
        let kh = self.forward_real(kernel);
        let mut fh = self.forward_real(f);
        fh.iter_mut().zip(&kh).for_each(|(a, b)| *a *= b);
        self.inverse_real(fh)
    }

    /// Convolution with a kernel already in Fourier space.
    pub fn convolve_hat(&self, f: &[f64], kernel_hat: &[Complex64]) -> Vec<f64> {
        let mut fh = self.forward_real(f);
        fh.iter_mut().zip(kernel_hat).for_each(|(a, b)| *a *= b);
        self.inverse_real(fh)
    }
}
