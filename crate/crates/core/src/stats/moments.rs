//! Polynomial against exponential moments of a nonnegative random variable.
//!
//! A nonnegative `F` has `<exp(F/C)> < 2` for some `C` exactly when
//! `<F^p>^(1/p) <= C' p` for all `p`. Both sides are estimated from samples
//! and classified separately.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

pub const MIN_SAMPLES: usize = 1000;
/// Effective sample size required for a moment of order `p` to count as supported.
pub const MIN_TAIL_SUPPORT: f64 = 30.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentEquivalence {
    pub p: Vec<f64>,
    /// `<F^p>^(1/p) / p` for each supported order.
    pub moment_ratio: Vec<f64>,
    pub p_max: f64,
    pub c_grid: Vec<f64>,
    /// `<exp(F/C)>` on `c_grid`.
    pub exp_moment: Vec<f64>,
    /// Smallest grid value with `<exp(F/C)> < 2`.
    pub c_star: Option<f64>,
    /// Relative curvature of the upper quantile function in `-log S`.
    pub tail_curvature: f64,
    pub moments_bounded: bool,
    pub exp_bounded: bool,
    pub agree: bool,
    pub exponential: bool,
    pub notes: Vec<String>,
}

fn ess(w: impl Iterator<Item = f64> + Clone) -> f64 {
    let s: f64 = w.clone().sum();
    let s2: f64 = w.map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

pub fn moment_equivalence_check(samples: &[f64], p_cap: usize) -> Result<MomentEquivalence> {
    if samples.len() < MIN_SAMPLES {
        return Err(HomError::InvalidArgument(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(HomError::InvalidArgument("samples must be finite and nonnegative".into()));
    }
    let n = samples.len() as f64;
    let scale = samples.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut notes = Vec::new();

    let mut p = Vec::new();
    let mut ratio = Vec::new();
    for order in 2..=p_cap.max(2) {
        let o = order as f64;
        // rescale to avoid overflow; ESS is scale-free
        let w = samples.iter().map(move |v| (v / scale).powf(o));
        let support = ess(w.clone());
        if support < MIN_TAIL_SUPPORT {
            notes.push(format!("p_max reduced to {}: effective tail support {support:.1} at p={order}", order - 1));
            break;
        }
        let m = scale * (w.sum::<f64>() / n).powf(1.0 / o);
        p.push(o);
        ratio.push(m / o);
    }
    let p_max = p.last().copied().unwrap_or(1.0);
    // bounded when m_p / p does not grow across the supported orders
    let moments_bounded = p.len() >= 2 && ratio.windows(2).all(|w| w[1] <= 1.1 * w[0]);

    let mean = samples.iter().sum::<f64>() / n;
    let base = mean.max(f64::MIN_POSITIVE);
    let c_grid: Vec<f64> = (-4..=8).map(|k| base * 2f64.powf(k as f64 / 2.0)).collect();
    let exp_moment: Vec<f64> = c_grid.iter().map(|c| samples.iter().map(|v| (v / c).exp()).sum::<f64>() / n).collect();
    let c_star = c_grid.iter().zip(&exp_moment).find(|(_, m)| **m < 2.0).map(|(c, _)| *c);

    // upper quantiles Q(u) at u = -log S = 1, 2, ..., log(n / 10)
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let u_max = (n / 10.0).ln().floor() as usize;
    let q: Vec<f64> = (1..=u_max)
        .map(|u| {
            let s = (-(u as f64)).exp();
            let idx = (((1.0 - s) * n).floor() as usize).min(sorted.len() - 1);
            sorted[idx]
        })
        .collect();
    let spread = q.last().unwrap_or(&0.0) - q.first().unwrap_or(&0.0);
    let tail_curvature = if q.len() >= 3 && spread > 1e-12 * scale {
        let k = q.len();
        let first = q[1] - q[0];
        let last = q[k - 1] - q[k - 2];
        // exponential tails have equal increments; heavier tails accelerate
        (last - first) / (spread / (k - 1) as f64)
    } else {
        0.0
    };
    let exp_bounded = c_star.is_some() && tail_curvature <= 0.5;
    let agree = moments_bounded == exp_bounded;
    if !agree {
        notes.push("moment growth and exponential-moment diagnostics disagree".into());
    }
    Ok(MomentEquivalence {
        p,
        moment_ratio: ratio,
        p_max,
        c_grid,
        exp_moment,
        c_star,
        tail_curvature,
        moments_bounded,
        exp_bounded,
        agree,
        exponential: moments_bounded && exp_bounded,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_variable() {
        let r = moment_equivalence_check(&vec![1.0; 2000], 12).unwrap();
        for (p, m) in r.p.iter().zip(&r.moment_ratio) {
            assert!((m - 1.0 / p).abs() < 1e-12);
        }
        for (c, e) in r.c_grid.iter().zip(&r.exp_moment) {
            if *c > 1.0 / std::f64::consts::LN_2 {
                assert!(*e < 2.0);
            }
        }
        assert!(r.exponential && r.agree);
    }

    #[test]
    fn needs_enough_samples() {
        assert!(moment_equivalence_check(&[1.0; 10], 4).is_err());
        assert!(moment_equivalence_check(&vec![-1.0; 2000], 4).is_err());
    }

    #[test]
    fn exponential_and_pareto() {
        let mut rng = crate::models::block_rng(5, 0);
        let n = 20_000;
        let exp: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let r = moment_equivalence_check(&exp, 12).unwrap();
        // Gamma moments: <F^p> = p!
        let fact = |p: usize| (1..=p).map(|v| v as f64).product::<f64>();
        assert!((r.moment_ratio[0] * 2.0 / fact(2).sqrt() - 1.0).abs() < 0.05);
        assert!(r.exponential, "{r:?}");

        let pareto: Vec<f64> = (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 3.0)).collect();
        let r = moment_equivalence_check(&pareto, 12).unwrap();
        // <F^2> = 3 / (3 - 2)
        assert!((r.moment_ratio[0] * 2.0 / 3f64.sqrt() - 1.0).abs() < 0.1);
        assert!(!r.exponential, "{r:?}");
    }
}
