//! Binary snapshots of coefficient fields and corrector solutions.
//!
//! Field layout (`DGHM`, little endian): magic, version `u32`, `d: u32`, `L: u32`,
//! `h: f64`, model id length `u32` and UTF-8 bytes, `seed: u64`, then `L^d`
//! records of `d(d+1)/2` `f64` in row-major cell order, upper triangle row by row.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HomError, Result};
use crate::field::{CoefficientField, Mat};
use crate::grid::GridSpec;
use crate::solver::corrector::n_pairs;
use crate::solver::{CorrectorSolution, SolveStats};

pub const FIELD_MAGIC: &[u8; 4] = b"DGHM";
pub const SOLUTION_MAGIC: &[u8; 4] = b"DGHS";
pub const VERSION: u32 = 1;

fn check_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(HomError::Format(format!("bad magic {:?}, expected {:?}", m, magic)));
    }
    let v = r.read_u32::<LittleEndian>()?;
    if v != VERSION {
        return Err(HomError::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn write_grid(w: &mut impl Write, g: &GridSpec) -> Result<()> {
    w.write_u32::<LittleEndian>(g.d as u32)?;
    w.write_u32::<LittleEndian>(g.l as u32)?;
    w.write_f64::<LittleEndian>(g.h)?;
    Ok(())
}

fn read_grid(r: &mut impl Read) -> Result<GridSpec> {
    let d = r.read_u32::<LittleEndian>()? as usize;
    let l = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_f64::<LittleEndian>()?;
    GridSpec::new(d, l, h).map_err(|e| HomError::Format(e.to_string()))
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

pub fn write_field(w: &mut impl Write, field: &CoefficientField) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_grid(w, &field.grid)?;
    let id = field.model_id.as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32)?;
    w.write_all(id)?;
    w.write_u64::<LittleEndian>(field.seed)?;
    write_f64s(w, &field.entries)
}

pub fn read_field(r: &mut impl Read) -> Result<CoefficientField> {
    check_magic(r, FIELD_MAGIC)?;
    let grid = read_grid(r)?;
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut id = vec![0u8; len];
    r.read_exact(&mut id)?;
    let model_id = String::from_utf8(id).map_err(|e| HomError::Format(e.to_string()))?;
    let seed = r.read_u64::<LittleEndian>()?;
    let entries = read_f64s(r, grid.n_cells() * grid.n_sym())?;
    let field = CoefficientField { grid, entries, model_id, seed };
    field.validate()?;
    Ok(field)
}

pub fn field_bytes(field: &CoefficientField) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + field.entries.len() * 8);
    write_field(&mut buf, field).expect("writing to memory");
    buf
}

/// SHA-256 of the field's snapshot encoding, hex.
pub fn field_hash(field: &CoefficientField) -> String {
    hex::encode(Sha256::digest(field_bytes(field)))
}

pub fn save_field(path: &Path, field: &CoefficientField) -> Result<()> {
    std::fs::write(path, field_bytes(field))?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<CoefficientField> {
    let bytes = std::fs::read(path)?;
    read_field(&mut bytes.as_slice())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionStats {
    pub scheme: crate::solver::Scheme,
    pub tol: f64,
    pub solves: Vec<SolveStats>,
    pub residual_phi: Vec<f64>,
    pub residual_divergence: Vec<f64>,
    pub residual_sigma: Vec<f64>,
    pub wall_seconds: f64,
}

/// Decoded solution snapshot.
#[derive(Clone, Debug)]
pub struct SolutionSnapshot {
    pub field_hash: String,
    pub grid: GridSpec,
    pub phi: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub flux: Vec<Vec<f64>>,
    pub a_hom: Mat,
    pub stats: SolutionStats,
}

/// Layout (`DGHS`): magic, version, 32-byte field hash, grid, then `phi_i`,
/// `sigma_i` (`j < k` pairs), `q_i` (`d` values per cell), `a_hom` row-major
/// `d x d`, and a length-prefixed JSON stats block.
pub fn write_solution(w: &mut impl Write, field: &CoefficientField, sol: &CorrectorSolution, wall_seconds: f64) -> Result<()> {
    let d = sol.d();
    w.write_all(SOLUTION_MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_all(&Sha256::digest(field_bytes(field)))?;
    write_grid(w, sol.grid())?;
    for i in 0..d {
        write_f64s(w, &sol.phi[i])?;
    }
    for i in 0..d {
        for p in &sol.sigma[i] {
            write_f64s(w, p)?;
        }
    }
    for i in 0..d {
        write_f64s(w, &sol.flux[i])?;
    }
    for i in 0..d {
        write_f64s(w, &sol.a_hom[i][..d])?;
    }
    let stats = SolutionStats {
        scheme: sol.op.scheme,
        tol: sol.tol,
        solves: sol.stats.clone(),
        residual_phi: sol.residuals.phi.clone(),
        residual_divergence: sol.residuals.divergence.clone(),
        residual_sigma: sol.residuals.sigma.clone(),
        wall_seconds,
    };
    let json = serde_json::to_vec(&stats)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    Ok(())
}

pub fn read_solution(r: &mut impl Read) -> Result<SolutionSnapshot> {
    check_magic(r, SOLUTION_MAGIC)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let grid = read_grid(r)?;
    let d = grid.d;
    let n = grid.n_cells();
    let phi = (0..d).map(|_| read_f64s(r, n)).collect::<Result<Vec<_>>>()?;
    let sigma = (0..d).map(|_| (0..n_pairs(d)).map(|_| read_f64s(r, n)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
    let flux = (0..d).map(|_| read_f64s(r, n * d)).collect::<Result<Vec<_>>>()?;
    let mut a_hom = [[0.0; 3]; 3];
    for row in a_hom.iter_mut().take(d) {
        let v = read_f64s(r, d)?;
        row[..d].copy_from_slice(&v);
    }
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let stats = serde_json::from_slice(&json)?;
    Ok(SolutionSnapshot { field_hash: hex::encode(hash), grid, phi, sigma, flux, a_hom, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_field, EnsembleModel, ModelKind};
    use crate::solver::{solve_extended_corrector, SolverConfig};

    fn sample() -> CoefficientField {
        let model = EnsembleModel::new(ModelKind::IndependentBlockLogNormal { block_side: 2, log_variance: 1.0 }, 4.0, 4.0);
        sample_field(&model, &GridSpec::unit(2, 8).unwrap(), 42).unwrap()
    }

    #[test]
    fn field_roundtrip_is_bitwise() {
        let f = sample();
        let bytes = field_bytes(&f);
        let back = read_field(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.entries.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), f.entries.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.model_id, f.model_id);
        assert_eq!(back.seed, 42);
        assert_eq!(&bytes[..4], b"DGHM");
        // header: magic 4 + version 4 + d 4 + L 4 + h 8 + id len 4 + id + seed 8
        assert_eq!(bytes.len(), 36 + f.model_id.len() + 64 * 3 * 8);
    }

    #[test]
    fn rejects_unknown_version() {
        let mut bytes = field_bytes(&sample());
        bytes[4] = 2;
        assert!(matches!(read_field(&mut bytes.as_slice()), Err(HomError::Format(_))));
        bytes[0] = b'X';
        assert!(read_field(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn solution_roundtrip() {
        let f = sample();
        let sol = solve_extended_corrector(&f, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_solution(&mut buf, &f, &sol, 0.5).unwrap();
        let snap = read_solution(&mut buf.as_slice()).unwrap();
        assert_eq!(snap.field_hash, field_hash(&f));
        assert_eq!(snap.phi, sol.phi);
        assert_eq!(snap.sigma, sol.sigma);
        assert_eq!(snap.flux, sol.flux);
        assert_eq!(snap.a_hom[1][0], sol.a_hom[1][0]);
        assert_eq!(snap.stats.solves.len(), 2);
    }
}
