//! Coarsening partitions whose block size grows with the distance to the origin.
//!
//! Cells are mirrored into the positive orthant (`t = c` for `c >= 0`,
//! `t = -c - 1` otherwise) and grouped into dyadic shells `max_k t_k in [2^(m-1), 2^m)`.
//! Shell `m` is tiled by aligned cubes whose side is the largest power of two
//! not exceeding `(2^(m-1) + 1)^beta`, so no block is ever clipped.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::grid::GridSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub cells: Vec<usize>,
    /// Edge length in cells (the ℓ∞ diameter of the closed cube).
    pub diam: f64,
    /// Euclidean torus distance from the origin cell center to the nearest cell center.
    pub dist: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Partition {
    pub beta: f64,
    pub blocks: Vec<Block>,
    /// Achieved `max (dist + 1)^beta / diam`.
    pub c_d: f64,
    /// Block index of every cell.
    pub owner: Vec<usize>,
}

fn shell(t: usize) -> u32 {
    if t == 0 {
        0
    } else {
        usize::BITS - t.leading_zeros()
    }
}

pub fn shell_side(m: u32, beta: f64) -> usize {
    if m == 0 {
        return 1;
    }
    let r_min = (1usize << (m - 1)) as f64;
    let target = (r_min + 1.0).powf(beta);
    let mut s = 1usize;
    while ((2 * s) as f64) <= target + 1e-12 {
        s *= 2;
    }
    s
}

pub fn build_partition(grid: &GridSpec, beta: f64) -> Result<Partition> {
    if !(0.0..1.0).contains(&beta) {
        return Err(HomError::InvalidArgument(format!("beta {beta} outside [0, 1)")));
    }
    if !grid.l.is_power_of_two() {
        return Err(HomError::InvalidGrid(format!("partition needs L a power of two, got {}", grid.l)));
    }
    let d = grid.d;
    let n = grid.n_cells();
    let mut keys: Vec<(Vec<i64>, usize)> = Vec::with_capacity(n);
    for x in 0..n {
        let c = grid.signed_coords(x);
        let t: Vec<usize> = (0..d).map(|k| if c[k] >= 0 { c[k] as usize } else { (-c[k] - 1) as usize }).collect();
        let m = shell(*t.iter().max().unwrap());
        let s = shell_side(m, beta);
        // key: shell, then per-axis (sign, cube index)
        let mut key = vec![m as i64];
        for k in 0..d {
            key.push(if c[k] >= 0 { 1 } else { -1 });
            key.push((t[k] / s) as i64);
        }
        keys.push((key, x));
    }
    keys.sort();
    let mut blocks: Vec<Block> = Vec::new();
    let mut owner = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && keys[end].0 == keys[start].0 {
            end += 1;
        }
        let cells: Vec<usize> = keys[start..end].iter().map(|k| k.1).collect();
        let m = keys[start].0[0] as u32;
        let side = shell_side(m, beta);
        let dist = cells.iter().map(|&x| (grid.dist2(x) as f64).sqrt()).fold(f64::INFINITY, f64::min);
        for &x in &cells {
            owner[x] = blocks.len();
        }
        blocks.push(Block { cells, diam: side as f64, dist });
        start = end;
    }
    let c_d = blocks.iter().map(|b| (b.dist + 1.0).powf(beta) / b.diam).fold(0.0, f64::max);
    Ok(Partition { beta, blocks, c_d, owner })
}

impl Partition {
    /// Checks disjointness, coverage and the two-sided size condition with the recorded constant.
    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let mut seen = vec![false; grid.n_cells()];
        for (i, b) in self.blocks.iter().enumerate() {
            let lhs = (b.dist + 1.0).powf(self.beta);
            if b.diam > lhs + 1e-12 || lhs > self.c_d * b.diam + 1e-12 {
                return Err(HomError::Inconsistent(format!("block {i} violates the size condition")));
            }
            for &x in &b.cells {
                if std::mem::replace(&mut seen[x], true) {
                    return Err(HomError::Inconsistent(format!("cell {x} lies in two blocks")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(HomError::Inconsistent("partition does not cover the grid".into()));
        }
        Ok(())
    }
}
