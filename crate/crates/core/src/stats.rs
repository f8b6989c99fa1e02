//! Small descriptive-statistics helpers shared by the analysis modules.

use serde::Serialize;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sum of squared deviations, shifted by the first value so that constant
/// input gives exactly zero.
fn centered_ss(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return 0.0 };
    let m = xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - x0 - m).powi(2)).sum()
}

/// Sample variance with denominator `n - 1`.
pub fn variance(xs: &[f64]) -> f64 {
    centered_ss(xs) / (xs.len() as f64 - 1.0)
}

/// Variance with denominator `n` (the mean squared deviation).
pub fn variance_mle(xs: &[f64]) -> f64 {
    centered_ss(xs) / xs.len() as f64
}

pub fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Median; the mean of the two middle order statistics for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile of sorted data (Hyndman & Fan type 7).
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Inverse of the empirical CDF: the `ceil(n p)`-th order statistic.
///
/// Bootstrap percentile bounds use this so that every bound is an observed
/// replicate value.
pub fn percentile_order_stat(v: &[f64], p: f64) -> f64 {
    let n = v.len();
    let k = ((n as f64 * p).ceil() as usize).clamp(1, n);
    v[k - 1]
}

/// Ranks starting at 1, ties sharing the mean of their positions.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "correlation of a constant vector".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Conventional standard error of the slope, residual variance over `n - 2`.
    pub slope_se: f64,
    pub rss: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares by the closed-form normal equations.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let w = vec![1.0; x.len()];
    weighted_ols_line(x, y, &w)
}

pub fn weighted_ols_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    debug_assert_eq!(x.len(), y.len());
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(Error::Singular("zero total weight".into()));
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((a, b), wi) in x.iter().zip(y).zip(w) {
        sxx += wi * (a - mx).powi(2);
        sxy += wi * (a - mx) * (b - my);
    }
    let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if sxx <= 1e-24 * scale * scale * sw {
        return Err(Error::Singular("predictor has no variation".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), wi)| wi * (b - intercept - slope * a).powi(2))
        .sum();
    let dof = x.len() as f64 - 2.0;
    let slope_se = if dof > 0.0 {
        (rss / dof / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LineFit {
        intercept,
        slope,
        slope_se,
        rss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn order_stat_percentiles_on_five() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_order_stat(&v, 0.025), 1.0);
        assert_eq!(percentile_order_stat(&v, 0.975), 5.0);
        assert_eq!(percentile_order_stat(&v, 0.5), 3.0);
    }

    #[test]
    fn type7_quantile_matches_r() {
        // quantile(1:10, c(.25, .9)) in R
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile_sorted(&v, 0.25) - 3.25).abs() < 1e-12);
        assert!((quantile_sorted(&v, 0.9) - 9.1).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = ols_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.rss < 1e-24);
    }

    #[test]
    fn ols_constant_predictor_is_singular() {
        assert!(matches!(
            ols_line(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::Singular(_))
        ));
    }
}
