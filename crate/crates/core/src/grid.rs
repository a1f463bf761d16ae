//! Periodic lattice geometry.
//!
//! Cells are addressed in row-major order: the coordinate along axis 0 varies
//! slowest. The origin cell has index 0 and distances are measured in the
//! torus metric between cell centers, in cell units.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

/// Discretized periodic domain `[0, L h)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub l: usize,
    pub h: f64,
}

impl GridSpec {
    pub fn new(d: usize, l: usize, h: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(HomError::InvalidGrid(format!("dimension {d} not in {{2, 3}}")));
        }
        if l < 4 {
            return Err(HomError::InvalidGrid(format!("side {l} < 4")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(HomError::InvalidGrid(format!("cell width {h} must be positive")));
        }
        l.checked_pow(d as u32)
            .and_then(|n| n.checked_mul(d * (d + 1) / 2 * 8))
            .ok_or_else(|| HomError::InvalidGrid("cell count overflows".into()))?;
        Ok(Self { d, l, h })
    }

    /// Unit cell width.
    pub fn unit(d: usize, l: usize) -> Result<Self> {
        Self::new(d, l, 1.0)
    }

    pub fn n_cells(&self) -> usize {
        self.l.pow(self.d as u32)
    }

    /// Number of stored entries of a symmetric d×d matrix.
    pub fn n_sym(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.l.pow((self.d - 1 - axis) as u32)
    }

    pub fn coords(&self, mut idx: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        for axis in (0..self.d).rev() {
            c[axis] = idx % self.l;
            idx /= self.l;
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().take(self.d).fold(0, |acc, &x| acc * self.l + x % self.l)
    }

    /// Signed torus coordinates of a cell relative to the origin, in `[-L/2, L/2)`.
    pub fn signed_coords(&self, idx: usize) -> [i64; 3] {
        let c = self.coords(idx);
        let mut s = [0i64; 3];
        let l = self.l as i64;
        for axis in 0..self.d {
            let v = c[axis] as i64;
            s[axis] = if v >= (l + 1) / 2 { v - l } else { v };
        }
        s
    }

    /// Squared torus distance of a cell center from the origin cell center.
    pub fn dist2(&self, idx: usize) -> i64 {
        let s = self.signed_coords(idx);
        s.iter().take(self.d).map(|v| v * v).sum()
    }

    /// Index of the cell displaced by `offset` (periodic).
    pub fn offset(&self, idx: usize, offset: &[i64]) -> usize {
        let c = self.coords(idx);
        let l = self.l as i64;
        let mut out = [0usize; 3];
        for axis in 0..self.d {
            out[axis] = (c[axis] as i64 + offset[axis]).rem_euclid(l) as usize;
        }
        self.index(&out[..self.d])
    }

    /// Largest radius of the scan grid, `L/2`.
    pub fn max_radius(&self) -> usize {
        self.l / 2
    }
}

/// Precomputed periodic neighbor tables: `plus[x * d + k]` is `x + e_k`.
#[derive(Clone, Debug)]
pub struct Neighbors {
    pub d: usize,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

impl Neighbors {
    pub fn new(grid: &GridSpec) -> Self {
        let d = grid.d;
        let n = grid.n_cells();
        let mut plus = vec![0; n * d];
        let mut minus = vec![0; n * d];
        for x in 0..n {
            let c = grid.coords(x);
            for k in 0..d {
                let stride = grid.stride(k);
                let ck = c[k];
                plus[x * d + k] = if ck + 1 == grid.l { x + stride - grid.l * stride } else { x + stride };
                minus[x * d + k] = if ck == 0 { x + (grid.l - 1) * stride } else { x - stride };
            }
        }
        Self { d, plus, minus }
    }

    #[inline]
    pub fn up(&self, x: usize, k: usize) -> usize {
        self.plus[x * self.d + k]
    }

    #[inline]
    pub fn down(&self, x: usize, k: usize) -> usize {
        self.minus[x * self.d + k]
    }
}

/// Cells sorted by torus distance from the origin; discrete balls are prefixes.
///
/// `B_rho` holds the cells whose centers lie within Euclidean distance `rho`
/// of the origin cell center.
#[derive(Clone, Debug)]
pub struct Balls {
    order: Vec<usize>,
    dist2: Vec<i64>,
}

impl Balls {
    pub fn new(grid: &GridSpec) -> Self {
        let mut cells: Vec<(i64, usize)> = (0..grid.n_cells()).map(|x| (grid.dist2(x), x)).collect();
        cells.sort_unstable();
        Self { order: cells.iter().map(|c| c.1).collect(), dist2: cells.iter().map(|c| c.0).collect() }
    }

    /// Number of cells in the closed ball of radius `rho`.
    pub fn count(&self, rho: f64) -> usize {
        let r2 = rho * rho;
        self.dist2.partition_point(|&d2| (d2 as f64) <= r2 + 1e-9)
    }

    pub fn cells(&self, rho: f64) -> &[usize] {
        &self.order[..self.count(rho)]
    }

    pub fn all(&self) -> &[usize] {
        &self.order
    }
}

/// Unit-mass indicator kernel of the discrete ball of radius `rho`, centered at
/// the origin cell and wrapped periodically.
pub fn ball_kernel(grid: &GridSpec, rho: f64) -> Vec<f64> {
    let n = grid.n_cells();
    let r2 = rho * rho;
    let mut k: Vec<f64> = (0..n).map(|x| if (grid.dist2(x) as f64) <= r2 + 1e-9 { 1.0 } else { 0.0 }).collect();
    let mass: f64 = k.iter().sum();
    for v in &mut k {
        *v /= mass;
    }
    k
}
