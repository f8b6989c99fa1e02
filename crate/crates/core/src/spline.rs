//! Penalized cubic smoothing splines.
//!
//! The fitted function minimizes
//! `sum_i w_i (y_i - s(x_i))^2 / sum_i w_i + lambda * integral (s'')^2`
//! over natural cubic splines with a knot at every distinct abscissa. The
//! solution is computed with the Reinsch algorithm: one pentadiagonal solve
//! for the second derivatives at the interior knots, followed by the
//! Hutchinson-de Hoog recursion for the band of the inverse, which gives the
//! smoother diagonal (leverages) in linear time.

use serde::Serialize;

use crate::error::{Error, Result};

/// How the penalty weight is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// 50 log-spaced values over `[1e-6, 1e6] * range(x)^3 / n`, selected by
    /// leave-one-out cross-validation.
    Auto,
    /// Select among these values by leave-one-out cross-validation.
    Values(Vec<f64>),
    /// Use this value as given.
    Fixed(f64),
}

/// Number of grid points in [`LambdaGrid::Auto`].
pub const AUTO_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplineFit {
    /// Sorted distinct abscissae.
    pub knots: Vec<f64>,
    /// Fitted values at the knots; with `knot_second_derivs` these are the
    /// spline's coefficients in value/curvature form.
    pub knot_values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    pub knot_second_derivs: Vec<f64>,
    /// Total observation weight at each knot.
    pub knot_weights: Vec<f64>,
    /// Diagonal of the knot-level smoother, `S_jj`.
    pub knot_leverage: Vec<f64>,
    pub lambda: f64,
    /// Trace of the smoother operator.
    pub edf: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Per-observation leverage `h_ii`.
    pub smoother_diag: Vec<f64>,
    /// Leave-one-out mean squared error at `lambda`.
    pub loo_cv: f64,
    /// `(lambda, LOO score)` for every candidate considered.
    pub cv_path: Vec<(f64, f64)>,
}

impl SplineFit {
    fn interval(&self, x0: f64) -> usize {
        let t = &self.knots;
        match t.binary_search_by(|v| v.total_cmp(&x0)) {
            Ok(i) => i.min(t.len() - 2),
            Err(i) => i.saturating_sub(1).min(t.len() - 2),
        }
    }

    /// Value (order 0) or derivative (orders 1-3) at `x0`. Outside the knot
    /// range the spline continues linearly.
    pub fn derivative(&self, x0: f64, order: u8) -> f64 {
        let t = &self.knots;
        let g = &self.knot_values;
        let gam = &self.knot_second_derivs;
        let m = t.len();
        if x0 < t[0] || x0 > t[m - 1] {
            let (edge, slope) = if x0 < t[0] {
                (0, self.derivative(t[0], 1))
            } else {
                (m - 1, self.derivative(t[m - 1], 1))
            };
            return match order {
                0 => g[edge] + slope * (x0 - t[edge]),
                1 => slope,
                _ => 0.0,
            };
        }
        let i = self.interval(x0);
        let h = t[i + 1] - t[i];
        let a = x0 - t[i];
        let b = t[i + 1] - x0;
        let (g0, g1, c0, c1) = (g[i], g[i + 1], gam[i], gam[i + 1]);
        match order {
            0 => {
                (b * g0 + a * g1) / h
                    + ((b * b * b - h * h * b) * c0 + (a * a * a - h * h * a) * c1) / (6.0 * h)
            }
            1 => (g1 - g0) / h + ((h * h - 3.0 * b * b) * c0 + (3.0 * a * a - h * h) * c1) / (6.0 * h),
            2 => (b * c0 + a * c1) / h,
            _ => (c1 - c0) / h,
        }
    }

    pub fn evaluate(&self, x0: f64) -> f64 {
        self.derivative(x0, 0)
    }

    /// `integral (s'')^2` over the knot range.
    pub fn roughness(&self) -> f64 {
        let t = &self.knots;
        let c = &self.knot_second_derivs;
        (0..t.len() - 1)
            .map(|i| {
                let h = t[i + 1] - t[i];
                h / 3.0 * (c[i] * c[i] + c[i] * c[i + 1] + c[i + 1] * c[i + 1])
            })
            .sum()
    }

    /// Pointwise standard errors at the knots for noise scale `sigma`, from the
    /// Bayesian posterior covariance `sigma^2 (W + alpha K)^-1`.
    pub fn knot_standard_errors(&self, sigma: f64) -> Vec<f64> {
        self.knot_leverage
            .iter()
            .zip(&self.knot_weights)
            .map(|(s, w)| sigma * (s / w).max(0.0).sqrt())
            .collect()
    }

    /// Standard error at `x0`, linearly interpolated between knots and held
    /// constant beyond them.
    pub fn standard_error_at(&self, x0: f64, sigma: f64) -> f64 {
        let se = self.knot_standard_errors(sigma);
        let t = &self.knots;
        if x0 <= t[0] {
            return se[0];
        }
        if x0 >= t[t.len() - 1] {
            return se[se.len() - 1];
        }
        let i = self.interval(x0);
        let f = (x0 - t[i]) / (t[i + 1] - t[i]);
        se[i] + f * (se[i + 1] - se[i])
    }
}

pub fn evaluate_spline(f: &SplineFit, x0: f64) -> f64 {
    f.evaluate(x0)
}

/// Knot structure for one predictor, reusable across responses and penalties.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    knots: Vec<f64>,
    /// Knot index of every observation.
    group: Vec<usize>,
    obs_weights: Vec<f64>,
    knot_weights: Vec<f64>,
    total_weight: f64,
    h: Vec<f64>,
}

struct Solved {
    g: Vec<f64>,
    gamma: Vec<f64>,
    knot_leverage: Vec<f64>,
}

impl SplineBasis {
    pub fn new(x: &[f64], w: &[f64]) -> Result<Self> {
        if x.len() != w.len() {
            return Err(Error::InvalidArgument("x and weights differ in length".into()));
        }
        if x.iter().any(|v| !v.is_finite()) || w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "abscissae must be finite and weights positive".into(),
            ));
        }
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut knots: Vec<f64> = Vec::new();
        let mut knot_weights: Vec<f64> = Vec::new();
        let mut group = vec![0; x.len()];
        for &i in &order {
            if knots.last() != Some(&x[i]) {
                knots.push(x[i]);
                knot_weights.push(0.0);
            }
            let j = knots.len() - 1;
            group[i] = j;
            knot_weights[j] += w[i];
        }
        if knots.len() < 4 {
            return Err(Error::Rank(format!(
                "smoothing spline needs at least 4 distinct abscissae, got {}",
                knots.len()
            )));
        }
        let h = knots.windows(2).map(|p| p[1] - p[0]).collect();
        Ok(Self {
            knots,
            group,
            obs_weights: w.to_vec(),
            knot_weights,
            total_weight: w.iter().sum(),
            h,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    /// Penalty values of [`LambdaGrid::Auto`] for this predictor.
    pub fn auto_grid(&self) -> Vec<f64> {
        let range = self.knots[self.knots.len() - 1] - self.knots[0];
        let scale = range.powi(3) / self.total_weight;
        (0..AUTO_GRID_POINTS)
            .map(|k| {
                let e = -6.0 + 12.0 * k as f64 / (AUTO_GRID_POINTS - 1) as f64;
                10f64.powf(e) * scale
            })
            .collect()
    }

    fn knot_means(&self, y: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.knots.len()];
        for ((&j, &yi), &wi) in self.group.iter().zip(y).zip(&self.obs_weights) {
            s[j] += wi * yi;
        }
        s.iter().zip(&self.knot_weights).map(|(a, w)| a / w).collect()
    }

    fn solve(&self, ybar: &[f64], lambda: f64) -> Solved {
        let m = self.knots.len();
        let mm = m - 2;
        let h = &self.h;
        let w = &self.knot_weights;
        let alpha = self.total_weight * lambda;

        // Column k of Q touches knots k, k+1, k+2.
        let q = |k: usize| -> [f64; 3] {
            [1.0 / h[k], -1.0 / h[k] - 1.0 / h[k + 1], 1.0 / h[k + 1]]
        };
        // Bands of B = R + alpha Q' W^-1 Q.
        let mut d0 = vec![0.0; mm];
        let mut d1 = vec![0.0; mm];
        let mut d2 = vec![0.0; mm];
        for k in 0..mm {
            let qk = q(k);
            d0[k] = (h[k] + h[k + 1]) / 3.0
                + alpha * (0..3).map(|r| qk[r] * qk[r] / w[k + r]).sum::<f64>();
            if k + 1 < mm {
                let q1 = q(k + 1);
                d1[k] = h[k + 1] / 6.0
                    + alpha * (qk[1] * q1[0] / w[k + 1] + qk[2] * q1[1] / w[k + 2]);
            }
            if k + 2 < mm {
                let q2 = q(k + 2);
                d2[k] = alpha * qk[2] * q2[0] / w[k + 2];
            }
        }

        // Banded LDL'.
        let mut dd = vec![0.0; mm];
        let mut l1 = vec![0.0; mm];
        let mut l2 = vec![0.0; mm];
        for i in 0..mm {
            let mut di = d0[i];
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * dd[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * dd[i - 2];
            }
            dd[i] = di;
            let mut b = d1[i];
            if i >= 1 {
                b -= l2[i - 1] * l1[i - 1] * dd[i - 1];
            }
            l1[i] = b / di;
            l2[i] = d2[i] / di;
        }

        // Right-hand side Q' ybar.
        let mut z: Vec<f64> = (0..mm)
            .map(|k| {
                let qk = q(k);
                qk[0] * ybar[k] + qk[1] * ybar[k + 1] + qk[2] * ybar[k + 2]
            })
            .collect();
        for i in 0..mm {
            if i >= 1 {
                z[i] -= l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= l2[i - 2] * z[i - 2];
            }
        }
        for i in 0..mm {
            z[i] /= dd[i];
        }
        for i in (0..mm).rev() {
            if i + 1 < mm {
                z[i] -= l1[i] * z[i + 1];
            }
            if i + 2 < mm {
                z[i] -= l2[i] * z[i + 2];
            }
        }
        let mut gamma = vec![0.0; m];
        gamma[1..m - 1].copy_from_slice(&z);

        let mut g = ybar.to_vec();
        for k in 0..mm {
            let qk = q(k);
            for r in 0..3 {
                g[k + r] -= alpha * qk[r] * z[k] / w[k + r];
            }
        }

        // Band of B^-1: s0[i] = (i,i), s1[i] = (i,i+1), s2[i] = (i,i+2).
        let mut s0 = vec![0.0; mm];
        let mut s1 = vec![0.0; mm];
        let mut s2 = vec![0.0; mm];
        for i in (0..mm).rev() {
            let a1 = if i + 1 < mm { l1[i] } else { 0.0 };
            let a2 = if i + 2 < mm { l2[i] } else { 0.0 };
            let s11 = if i + 1 < mm { s0[i + 1] } else { 0.0 };
            let s22 = if i + 2 < mm { s0[i + 2] } else { 0.0 };
            let s12 = if i + 2 < mm { s1[i + 1] } else { 0.0 };
            s1[i] = -(a1 * s11 + a2 * s12);
            s2[i] = -(a1 * s12 + a2 * s22);
            s0[i] = 1.0 / dd[i] - a1 * s1[i] - a2 * s2[i];
        }
        let binv = |a: usize, b: usize| -> f64 {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            match hi - lo {
                0 => s0[lo],
                1 => s1[lo],
                2 => s2[lo],
                _ => unreachable!(),
            }
        };

        let mut knot_leverage = vec![0.0; m];
        for j in 0..m {
            // Columns of Q with a non-zero entry in row j.
            let cols: Vec<(usize, f64)> = (j.saturating_sub(2)..=j.min(mm - 1))
                .filter(|&k| k + 2 >= j && k <= j)
                .map(|k| (k, q(k)[j - k]))
                .collect();
            let mut quad = 0.0;
            for &(k, qa) in &cols {
                for &(l, qb) in &cols {
                    quad += qa * qb * binv(k, l);
                }
            }
            knot_leverage[j] = 1.0 - alpha / w[j] * quad;
        }

        Solved {
            g,
            gamma,
            knot_leverage,
        }
    }

    fn loo_score(&self, y: &[f64], s: &Solved) -> f64 {
        let mut num = 0.0;
        for ((&j, &yi), &wi) in self.group.iter().zip(y).zip(&self.obs_weights) {
            let hii = wi * s.knot_leverage[j] / self.knot_weights[j];
            let denom = 1.0 - hii;
            if denom <= 1e-12 {
                return f64::INFINITY;
            }
            num += wi * ((yi - s.g[j]) / denom).powi(2);
        }
        num / self.total_weight
    }

    /// Fits the spline to `y` (one value per observation).
    pub fn fit(&self, y: &[f64], grid: &LambdaGrid) -> Result<SplineFit> {
        if y.len() != self.group.len() {
            return Err(Error::InvalidArgument("response length mismatch".into()));
        }
        let ybar = self.knot_means(y);
        let candidates = match grid {
            LambdaGrid::Auto => self.auto_grid(),
            LambdaGrid::Values(v) => v.clone(),
            LambdaGrid::Fixed(l) => vec![*l],
        };
        if candidates.is_empty() || candidates.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidArgument("penalty values must be positive".into()));
        }
        let mut best: Option<(f64, f64, Solved)> = None;
        let mut cv_path = Vec::with_capacity(candidates.len());
        for &lambda in &candidates {
            let solved = self.solve(&ybar, lambda);
            let score = self.loo_score(y, &solved);
            cv_path.push((lambda, score));
            let better = match &best {
                None => true,
                Some((bl, bs, _)) => score < *bs || (score == *bs && lambda < *bl),
            };
            if better {
                best = Some((lambda, score, solved));
            }
        }
        let (lambda, loo_cv, s) = best.expect("non-empty candidate list");
        let fitted: Vec<f64> = self.group.iter().map(|&j| s.g[j]).collect();
        let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let smoother_diag = self
            .group
            .iter()
            .zip(&self.obs_weights)
            .map(|(&j, &wi)| wi * s.knot_leverage[j] / self.knot_weights[j])
            .collect();
        Ok(SplineFit {
            knots: self.knots.clone(),
            knot_values: s.g,
            knot_second_derivs: s.gamma,
            knot_weights: self.knot_weights.clone(),
            edf: s.knot_leverage.iter().sum(),
            knot_leverage: s.knot_leverage,
            lambda,
            fitted,
            residuals,
            smoother_diag,
            loo_cv,
            cv_path,
        })
    }
}

/// Fits a smoothing spline of `y` on `x` with unit weights.
pub fn fit_spline(x: &[f64], y: &[f64], grid: &LambdaGrid) -> Result<SplineFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y differ in length".into()));
    }
    if x.len() < 4 {
        return Err(Error::Rank(format!(
            "smoothing spline needs at least 4 observations, got {}",
            x.len()
        )));
    }
    SplineBasis::new(x, &vec![1.0; x.len()])?.fit(y, grid)
}

pub fn fit_spline_weighted(
    x: &[f64],
    y: &[f64],
    w: &[f64],
    grid: &LambdaGrid,
) -> Result<SplineFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y differ in length".into()));
    }
    SplineBasis::new(x, w)?.fit(y, grid)
}
