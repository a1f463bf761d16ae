//! Survival curves, Wilson intervals and stretched-exponential tail fits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::models::block_rng;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub radii: Vec<f64>,
    /// Fraction of samples strictly above each radius.
    pub s: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n: usize,
}

pub fn survival_curve(values: &[f64], radii: &[f64]) -> SurvivalCurve {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut s = Vec::with_capacity(radii.len());
    let mut lo = Vec::with_capacity(radii.len());
    let mut hi = Vec::with_capacity(radii.len());
    for &r in radii {
        let above = n - sorted.partition_point(|&v| v <= r);
        let (a, b) = wilson(above, n, Z95);
        s.push(if n == 0 { 0.0 } else { above as f64 / n as f64 });
        lo.push(a);
        hi.push(b);
    }
    SurvivalCurve { radii: radii.to_vec(), s, ci_lo: lo, ci_hi: hi, n }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StretchedFit {
    /// Stretch exponent: slope of `log(-log S)` against `log r`.
    pub gamma: f64,
    /// Rate in `S ~ exp(-c r^gamma)`.
    pub c: f64,
    pub points: usize,
}

/// Least-squares fit of `log(-log S) = log c + gamma log r` on the resolvable
/// window `S in [3/n, 0.5]`.
pub fn fit_stretched_exponential(radii: &[f64], s: &[f64], n: usize) -> Result<StretchedFit> {
    if radii.len() != s.len() {
        return Err(HomError::InvalidArgument("radii and survival values differ in length".into()));
    }
    let slack: Vec<f64> = s.iter().map(|&v| if n > 0 { Z95 * (v * (1.0 - v) / n as f64).sqrt() + 1e-12 } else { 1e-12 }).collect();
    for t in 1..s.len() {
        if s[t] > s[t - 1] + slack[t].max(slack[t - 1]) {
            return Err(HomError::Rejected(format!("survival curve increases at r={}", radii[t])));
        }
    }
    let floor = if n > 0 { 3.0 / n as f64 } else { 0.0 };
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(s)
        .filter(|(r, &v)| **r > 0.0 && v >= floor && v <= 0.5 && v > 0.0 && v < 1.0)
        .map(|(r, &v)| (r.ln(), (-v.ln()).ln()))
        .collect();
    if pts.len() < 4 {
        return Err(HomError::Rejected(format!("only {} resolvable tail points, need 4", pts.len())));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(HomError::Rejected("tail points share one radius".into()));
    }
    let gamma = sxy / sxx;
    Ok(StretchedFit { gamma, c: (my - gamma * mx).exp(), points: pts.len() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailEstimate {
    pub curve: SurvivalCurve,
    pub censored: usize,
    pub fit: Option<StretchedFit>,
    /// Percentile bootstrap 95% interval for `gamma`.
    pub gamma_ci: Option<(f64, f64)>,
    pub bootstrap_successes: usize,
    /// Predicted stretch order, reported alongside the fit.
    pub target_order: f64,
    pub warnings: Vec<String>,
}

impl TailEstimate {
    pub fn gamma_positive(&self) -> bool {
        matches!((self.fit, self.gamma_ci), (Some(f), Some((lo, _))) if f.gamma > 0.0 && lo > 0.0)
    }
}

/// Survival curve plus bootstrap-validated stretched-exponential fit.
///
/// Censored samples (radius capped at `cap`) count in `S(r)` for `r < cap`
/// and the fit uses only radii below `cap`.
pub fn tail_estimate(
    values: &[f64],
    censored: &[bool],
    radii: &[f64],
    cap: f64,
    target_order: f64,
    n_boot: usize,
    boot_seed: u64,
) -> TailEstimate {
    let n = values.len();
    let curve = survival_curve(values, radii);
    let n_cens = censored.iter().filter(|c| **c).count();
    let mut warnings = Vec::new();
    if n > 0 && n_cens as f64 >= 0.2 * n as f64 {
        warnings.push(format!("{n_cens} of {n} realizations hit the radius cap {cap}; the fit is censored"));
    }
    let keep: Vec<usize> = (0..radii.len()).filter(|&t| radii[t] < cap).collect();
    let fit_on = |c: &SurvivalCurve| {
        let r: Vec<f64> = keep.iter().map(|&t| c.radii[t]).collect();
        let s: Vec<f64> = keep.iter().map(|&t| c.s[t]).collect();
        fit_stretched_exponential(&r, &s, c.n)
    };
    let fit = match fit_on(&curve) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("no fit: {e}"));
            None
        }
    };
    let mut gammas = Vec::new();
    if fit.is_some() && n > 0 {
        let mut rng = block_rng(boot_seed, 0xB007);
        let mut resample = vec![0.0; n];
        for _ in 0..n_boot {
            for v in resample.iter_mut() {
                *v = values[rng.random_range(0..n)];
            }
            if let Ok(f) = fit_on(&survival_curve(&resample, radii)) {
                gammas.push(f.gamma);
            }
        }
    }
    let successes = gammas.len();
    let gamma_ci = if n_boot > 0 && successes * 2 >= n_boot {
        gammas.sort_by(f64::total_cmp);
        Some((percentile(&gammas, 0.025), percentile(&gammas, 0.975)))
    } else {
        if fit.is_some() {
            warnings.push(format!("only {successes} of {n_boot} bootstrap fits succeeded"));
        }
        None
    };
    TailEstimate { curve, censored: n_cens, fit, gamma_ci, bootstrap_successes: successes, target_order, warnings }
}

/// Linear-interpolated percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponentials() {
        let r: Vec<f64> = (1..40).map(|v| v as f64 * 0.25).collect();
        for gamma in [1.0, 0.5] {
            let s: Vec<f64> = r.iter().map(|x: &f64| (-x.powf(gamma)).exp()).collect();
            let f = fit_stretched_exponential(&r, &s, 1_000_000).unwrap();
            assert!((f.gamma - gamma).abs() < 1e-6);
            assert!((f.c - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson(30, 100, Z95);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
        assert_eq!(wilson(0, 10, Z95).0, 0.0);
    }

    #[test]
    fn step_function_for_constant_samples() {
        let c = survival_curve(&[1.0; 50], &[1.0, 2.0, 3.0]);
        assert_eq!(c.s, vec![0.0, 0.0, 0.0]);
        let c = survival_curve(&[1.0; 50], &[0.999]);
        assert_eq!(c.s, vec![1.0]);
        assert!(fit_stretched_exponential(&c.radii, &c.s, 50).is_err());
    }

    #[test]
    fn rejects_increasing_curve() {
        let r = [1.0, 2.0, 3.0, 4.0, 5.0];
        let s = [0.4, 0.1, 0.3, 0.05, 0.02];
        assert!(matches!(fit_stretched_exponential(&r, &s, 10_000), Err(HomError::Rejected(_))));
    }
}
