//! Symmetric coefficient fields and pointwise ellipticity scalars.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{HomError, Result};
use crate::grid::GridSpec;

/// Dense 3×3 storage; only the leading d×d block is meaningful.
pub type Mat = [[f64; 3]; 3];

/// Position of entry `(i, j)`, `i <= j`, in packed upper-triangular row-major order.
#[inline]
pub fn sym_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // row i starts after sum_{r<i} (d - r) entries
    i * d - i * i.saturating_sub(1) / 2 + (j - i)
}

pub fn unpack(d: usize, packed: &[f64]) -> Mat {
    let mut m = [[0.0; 3]; 3];
    for i in 0..d {
        for j in i..d {
            let v = packed[sym_index(d, i, j)];
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn pack(d: usize, m: &Mat, out: &mut [f64]) {
    for i in 0..d {
        for j in i..d {
            out[sym_index(d, i, j)] = m[i][j];
        }
    }
}

/// Eigenvalues of the leading d×d block in ascending order.
pub fn sym_eigenvalues(d: usize, m: &Mat) -> [f64; 3] {
    match d {
        2 => {
            let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            // the smaller root via the product avoids cancellation
            let hi = mean + rad;
            let det = a * c - b * b;
            let lo = if hi > 0.0 { (det / hi).min(hi) } else { mean - rad };
            [lo, hi, 0.0]
        }
        _ => {
            let mat = Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]);
            let eig = SymmetricEigen::new(mat);
            let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
            ev.sort_by(|a, b| a.total_cmp(b));
            ev
        }
    }
}

pub fn mat_inverse(d: usize, m: &Mat) -> Mat {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        out[0][0] = m[1][1] / det;
        out[1][1] = m[0][0] / det;
        out[0][1] = -m[0][1] / det;
        out[1][0] = -m[1][0] / det;
    } else {
        let mat = Matrix3::from_fn(|i, j| m[i][j]);
        let inv = mat.try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::NAN));
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = inv[(i, j)];
            }
        }
    }
    out
}

/// Symmetric square root of a positive definite matrix.
pub fn mat_sqrt(d: usize, m: &Mat) -> Mat {
    let mat = Matrix3::from_fn(|i, j| {
        if i < d && j < d {
            m[i][j]
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(mat);
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (0..3).map(|k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt() * eig.eigenvectors[(j, k)]).sum();
        }
    }
    out
}

pub fn mat_mul(d: usize, a: &Mat, b: &Mat) -> Mat {
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (0..d).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// A lattice of symmetric positive definite d×d matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub grid: GridSpec,
    /// `d(d+1)/2` packed values per cell.
    pub entries: Vec<f64>,
    pub model_id: String,
    pub seed: u64,
}

impl CoefficientField {
    /// Builds a field from a per-cell matrix function and validates it.
    pub fn from_fn(grid: GridSpec, model_id: impl Into<String>, seed: u64, f: impl Fn(usize) -> Mat) -> Result<Self> {
        let ns = grid.n_sym();
        let mut entries = vec![0.0; grid.n_cells() * ns];
        for (x, chunk) in entries.chunks_mut(ns).enumerate() {
            pack(grid.d, &f(x), chunk);
        }
        let field = Self { grid, entries, model_id: model_id.into(), seed };
        field.validate()?;
        Ok(field)
    }

    pub fn identity(grid: GridSpec) -> Self {
        Self::from_fn(grid, "identity", 0, |_| scalar_mat(1.0)).expect("identity is valid")
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn cell(&self, x: usize) -> Mat {
        let ns = self.grid.n_sym();
        unpack(self.grid.d, &self.entries[x * ns..(x + 1) * ns])
    }

    pub fn set_cell(&mut self, x: usize, m: &Mat) {
        let ns = self.grid.n_sym();
        pack(self.grid.d, m, &mut self.entries[x * ns..(x + 1) * ns]);
    }

    /// Checks finiteness and positive definiteness of every cell.
    pub fn validate(&self) -> Result<()> {
        let expected = self.grid.n_cells() * self.grid.n_sym();
        if self.entries.len() != expected {
            return Err(HomError::InvalidArgument(format!("field has {} entries, expected {expected}", self.entries.len())));
        }
        for x in 0..self.n_cells() {
            let m = self.cell(x);
            if (0..self.grid.d).any(|i| (0..self.grid.d).any(|j| !m[i][j].is_finite())) {
                return Err(HomError::NonFinite { cell: x });
            }
            let ev = sym_eigenvalues(self.grid.d, &m);
            if !(ev[0] > 0.0) {
                return Err(HomError::NotPositiveDefinite { cell: x, lambda: ev[0] });
            }
        }
        Ok(())
    }

    /// Multiplies every cell by `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|v| *v *= s);
        out
    }
}

pub fn scalar_mat(c: f64) -> Mat {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = c;
    }
    m
}

/// Pointwise `mu = |a|` (largest eigenvalue) and `lambda = |a^{-1}|^{-1}` (smallest eigenvalue).
#[derive(Clone, Debug)]
pub struct Ellipticity {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub fn mu_lambda(field: &CoefficientField) -> Result<Ellipticity> {
    let d = field.grid.d;
    let n = field.n_cells();
    let mut mu = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    for x in 0..n {
        let ev = sym_eigenvalues(d, &field.cell(x));
        let (lo, hi) = (ev[0], ev[d - 1]);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(HomError::NonFinite { cell: x });
        }
        if lo <= 0.0 {
            return Err(HomError::NotPositiveDefinite { cell: x, lambda: lo });
        }
        mu.push(hi);
        lambda.push(lo);
    }
    Ok(Ellipticity { mu, lambda })
}

/// Empirical moment constant `<mu^p>^{1/p} + <lambda^{-q}>^{1/q}` pooled over
/// all cells of all samples.
pub fn empirical_k(fields: &[CoefficientField], p: f64, q: f64) -> Result<f64> {
    if fields.is_empty() {
        return Err(HomError::InvalidArgument("empty sample list".into()));
    }
    if !(p > 1.0 && q > 1.0) {
        return Err(HomError::InvalidArgument(format!("exponents p={p}, q={q} must exceed 1")));
    }
    let mut sum_mu = 0.0;
    let mut sum_lam = 0.0;
    let mut count = 0usize;
    for f in fields {
        let e = mu_lambda(f)?;
        sum_mu += e.mu.iter().map(|m| m.powf(p)).sum::<f64>();
        sum_lam += e.lambda.iter().map(|l| l.powf(-q)).sum::<f64>();
        count += e.mu.len();
    }
    let k = (sum_mu / count as f64).powf(1.0 / p) + (sum_lam / count as f64).powf(1.0 / q);
    if !k.is_finite() {
        return Err(HomError::NonFiniteMoment { model: fields[0].model_id.clone() });
    }
    Ok(k)
}

/// `1/p + 1/q < 2/d` (strict) or `<=` (non-strict).
pub fn check_moment_condition(p: f64, q: f64, d: usize, strict: bool) -> bool {
    let lhs = 1.0 / p + 1.0 / q;
    let rhs = 2.0 / d as f64;
    if strict {
        lhs < rhs
    } else {
        lhs <= rhs
    }
}
