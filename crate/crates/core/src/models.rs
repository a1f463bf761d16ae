//! Stationary ensembles of coefficient fields.
//!
//! Block models draw every block from its own counter-based RNG stream keyed
//! by `(seed, block index)`, so regenerating one block never disturbs the
//! others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fft::LatticeFft;
use crate::field::{scalar_mat, CoefficientField, Mat};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    ConstantIdentity,
    /// Isotropic slabs stacked along axis 1; `profile[j]` fills `width` consecutive layers.
    Laminate {
        profile: Vec<f64>,
        width: usize,
    },
    /// Per-block `a = R diag(exp(g)) R^T` with `g_k ~ N(0, log_variance)` and a uniform random rotation.
    IndependentBlockLogNormal {
        block_side: usize,
        log_variance: f64,
    },
    /// Per-block scalar conductance with Pareto tails at both ends, clipped to `[1/truncation, truncation]`.
    HeavyTailedBlock {
        block_side: usize,
        tail_index_mu: f64,
        tail_index_lambda: f64,
        truncation: f64,
    },
    /// Scalar `exp(g)` for a periodized Gaussian field with Gaussian covariance.
    SmoothLogNormal {
        correlation_length: f64,
        log_variance: f64,
    },
    /// Two-phase isotropic blocks, each phase with probability 1/2.
    TwoPhaseCheckerboard {
        block_side: usize,
        low: f64,
        high: f64,
    },
}

/// Ensemble descriptor: the generating law plus the moment metadata it is meant to satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub p: f64,
    pub q: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    1.0
}

impl EnsembleModel {
    pub fn new(kind: ModelKind, p: f64, q: f64) -> Self {
        Self { kind, p, q, kappa: 1.0, alpha: 1.0 }
    }

    pub fn identity() -> Self {
        Self::new(ModelKind::ConstantIdentity, 4.0, 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HomError::InvalidModel(m));
        if !(self.p > 1.0 && self.p.is_finite() && self.q > 1.0 && self.q.is_finite()) {
            return bad(format!("p={}, q={} must lie in (1, inf)", self.p, self.q));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad(format!("kappa={} must lie in (0, 1]", self.kappa));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha={} must be positive", self.alpha));
        }
        match &self.kind {
            ModelKind::ConstantIdentity => Ok(()),
            ModelKind::Laminate { profile, width } => {
                if profile.is_empty() || *width == 0 {
                    return bad("laminate needs a nonempty profile and positive width".into());
                }
                if profile.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("laminate values must be positive and finite".into());
                }
                Ok(())
            }
            ModelKind::IndependentBlockLogNormal { block_side, log_variance } => {
                if *block_side == 0 || !(*log_variance >= 0.0 && log_variance.is_finite()) {
                    return bad("log-normal needs block_side >= 1 and log_variance >= 0".into());
                }
                Ok(())
            }
            ModelKind::HeavyTailedBlock { block_side, tail_index_mu, tail_index_lambda, truncation } => {
                if *block_side == 0 {
                    return bad("block_side must be positive".into());
                }
                if !(*tail_index_mu > 0.0 && *tail_index_lambda > 0.0) {
                    return bad(format!("tail indices {tail_index_mu}, {tail_index_lambda} must be positive"));
                }
                if !(*truncation >= 1.0 && truncation.is_finite()) {
                    return bad(format!("truncation {truncation} must be finite and >= 1"));
                }
                Ok(())
            }
            ModelKind::SmoothLogNormal { correlation_length, log_variance } => {
                if !(*correlation_length > 0.0) || !(*log_variance >= 0.0 && log_variance.is_finite()) {
                    return bad("smooth log-normal needs correlation_length > 0 and log_variance >= 0".into());
                }
                Ok(())
            }
            ModelKind::TwoPhaseCheckerboard { block_side, low, high } => {
                if *block_side == 0 || !(*low > 0.0 && *high > 0.0 && low.is_finite() && high.is_finite()) {
                    return bad("checkerboard needs block_side >= 1 and positive phases".into());
                }
                Ok(())
            }
        }
    }

    pub fn block_side(&self) -> Option<usize> {
        match self.kind {
            ModelKind::IndependentBlockLogNormal { block_side, .. }
            | ModelKind::HeavyTailedBlock { block_side, .. }
            | ModelKind::TwoPhaseCheckerboard { block_side, .. } => Some(block_side),
            _ => None,
        }
    }

    /// True for models whose cells are deterministic.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, ModelKind::ConstantIdentity | ModelKind::Laminate { .. })
    }

    pub fn id(&self) -> String {
        match &self.kind {
            ModelKind::ConstantIdentity => "identity".into(),
            ModelKind::Laminate { profile, width } => format!("laminate(profile={profile:?},width={width})"),
            ModelKind::IndependentBlockLogNormal { block_side, log_variance } => {
                format!("block-lognormal(side={block_side},var={log_variance})")
            }
            ModelKind::HeavyTailedBlock { block_side, tail_index_mu, tail_index_lambda, truncation } => {
                format!("heavy-tailed(side={block_side},tail_mu={tail_index_mu},tail_lambda={tail_index_lambda},trunc={truncation})")
            }
            ModelKind::SmoothLogNormal { correlation_length, log_variance } => {
                format!("smooth-lognormal(ell={correlation_length},var={log_variance})")
            }
            ModelKind::TwoPhaseCheckerboard { block_side, low, high } => {
                format!("checkerboard(side={block_side},low={low},high={high})")
            }
        }
    }
}

/// Independent RNG stream for one block (or cell) of one realization.
pub fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-major index of the block containing cell `x`.
pub fn block_of(grid: &GridSpec, side: usize, x: usize) -> usize {
    let c = grid.coords(x);
    let nb = grid.l / side;
    (0..grid.d).fold(0, |acc, k| acc * nb + c[k] / side)
}

pub fn n_blocks(grid: &GridSpec, side: usize) -> usize {
    (grid.l / side).pow(grid.d as u32)
}

/// The cell value of a block model for block `b`, drawn from stream `(seed, b)`.
pub fn block_value(model: &EnsembleModel, d: usize, seed: u64, b: usize) -> Mat {
    let mut rng = block_rng(seed, b as u64);
    match model.kind {
        ModelKind::IndependentBlockLogNormal { log_variance, .. } => {
            let sd = log_variance.sqrt();
            let mut g = [0.0; 3];
            for v in g.iter_mut().take(d) {
                let z: f64 = rng.sample(StandardNormal);
                *v = (sd * z).exp();
            }
            let r = random_rotation(d, &mut rng);
            let mut m = [[0.0; 3]; 3];
            for i in 0..d {
                for j in 0..d {
                    m[i][j] = (0..d).map(|k| r[i][k] * g[k] * r[j][k]).sum();
                }
            }
            // exact symmetry is restored by packing the upper triangle
            m
        }
        ModelKind::HeavyTailedBlock { tail_index_mu, tail_index_lambda, truncation, .. } => {
            let upper: bool = rng.random_bool(0.5);
            let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            let c =
                if upper { u.powf(-1.0 / tail_index_mu).min(truncation) } else { u.powf(1.0 / tail_index_lambda).max(1.0 / truncation) };
            scalar_mat(c)
        }
        ModelKind::TwoPhaseCheckerboard { low, high, .. } => scalar_mat(if rng.random_bool(0.5) { high } else { low }),
        _ => scalar_mat(1.0),
    }
}

fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Mat {
    let mut r = [[0.0; 3]; 3];
    if d == 2 {
        let t = rng.random::<f64>() * std::f64::consts::PI;
        let (s, c) = t.sin_cos();
        r[0][0] = c;
        r[0][1] = -s;
        r[1][0] = s;
        r[1][1] = c;
    } else {
        // uniform unit quaternion
        let mut qv = [0.0f64; 4];
        for v in qv.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let nrm = qv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = qv.map(|v| v / nrm);
        r = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
    }
    r
}

/// Draws one realization. Deterministic in `(model, grid, seed)`.
pub fn sample_field(model: &EnsembleModel, grid: &GridSpec, seed: u64) -> Result<CoefficientField> {
    model.validate()?;
    let d = grid.d;
    let id = model.id();
    match &model.kind {
        ModelKind::ConstantIdentity => CoefficientField::from_fn(*grid, id, seed, |_| scalar_mat(1.0)),
        ModelKind::Laminate { profile, width } => {
            let period = profile.len() * width;
            if !grid.l.is_multiple_of(period) {
                return Err(HomError::InvalidModel(format!("laminate period {period} does not divide L={}", grid.l)));
            }
            CoefficientField::from_fn(*grid, id, seed, |x| {
                let c0 = grid.coords(x)[0];
                scalar_mat(profile[(c0 / width) % profile.len()])
            })
        }
        ModelKind::SmoothLogNormal { correlation_length, log_variance } => {
            let g = smooth_gaussian(grid, *correlation_length, seed);
            let sd = log_variance.sqrt();
            CoefficientField::from_fn(*grid, id, seed, |x| scalar_mat((sd * g[x]).exp()))
        }
        _ => {
            let side = model.block_side().expect("block model");
            if !grid.l.is_multiple_of(side) {
                return Err(HomError::InvalidModel(format!("block side {side} does not divide L={}", grid.l)));
            }
            let values: Vec<Mat> = (0..n_blocks(grid, side)).map(|b| block_value(model, d, seed, b)).collect();
            CoefficientField::from_fn(*grid, id, seed, |x| values[block_of(grid, side, x)])
        }
    }
}

/// Replaces block `b` of a block-model realization by an independent redraw keyed by `fresh_seed`.
pub fn resample_block(model: &EnsembleModel, field: &CoefficientField, b: usize, fresh_seed: u64) -> Result<CoefficientField> {
    let side = model.block_side().ok_or_else(|| HomError::InvalidModel(format!("{} has no independent blocks", model.id())))?;
    let grid = field.grid;
    let value = block_value(model, grid.d, fresh_seed, b);
    let mut out = field.clone();
    for x in 0..grid.n_cells() {
        if block_of(&grid, side, x) == b {
            out.set_cell(x, &value);
        }
    }
    Ok(out)
}

/// Unit-variance periodized Gaussian field with covariance `exp(-|x|^2 / (2 ell^2))`,
/// synthesized by circulant embedding on the torus.
fn smooth_gaussian(grid: &GridSpec, ell: f64, seed: u64) -> Vec<f64> {
    let n = grid.n_cells();
    let plan = LatticeFft::new(grid);
    let cov: Vec<f64> = (0..n).map(|x| (-(grid.dist2(x) as f64) / (2.0 * ell * ell)).exp()).collect();
    let spec = plan.forward_real(&cov);
    let noise: Vec<f64> = (0..n)
        .map(|x| {
            let mut rng = block_rng(seed, x as u64);
            rng.sample(StandardNormal)
        })
        .collect();
    let mut hat = plan.forward_real(&noise);
    for (h, s) in hat.iter_mut().zip(&spec) {
        *h *= Complex64::new(s.re.max(0.0).sqrt(), 0.0);
    }
    let g = plan.inverse_real(hat);
    // normalize by the realized circulant variance, sum(spec)/n
    let var: f64 = spec.iter().map(|s| s.re.max(0.0)).sum::<f64>() / n as f64;
    g.into_iter().map(|v| v / var.sqrt()).collect()
}

/// Cyclic translation: the output at `x` is the input at `x + shift`.
pub fn translate(field: &CoefficientField, shift: &[i64]) -> CoefficientField {
    let grid = field.grid;
    let mut out = field.clone();
    for x in 0..grid.n_cells() {
        out.set_cell(x, &field.cell(grid.offset(x, shift)));
    }
    out
}
