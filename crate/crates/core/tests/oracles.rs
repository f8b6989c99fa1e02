//! Fitted estimators against independent brute-force computations.

mod common;

use common::{dataset_from, dataset_with_shares, penalty_matrix, penalty_matrix_unsorted};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use urbscale::additive::{fit_additive, BackfitSettings};
use urbscale::nls::NlsSettings;
use urbscale::rng;
use urbscale::scaling::{self, sigmoid};
use urbscale::spline::{fit_spline, LambdaGrid};

#[test]
fn ols_matches_normal_equations() {
    let pops = [1.2e4, 8.9e4, 3.3e5, 1.1e6, 7.4e6];
    let agg = [4.1e8, 3.0e9, 1.4e10, 4.9e10, 4.2e11];
    let pc: Vec<f64> = agg.iter().zip(&pops).map(|(a, n)| a / n).collect();
    let d = dataset_from(&pops, &pc);
    let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { pops[i].ln() });
    let y = DVector::from_iterator(5, agg.iter().map(|v: &f64| v.ln()));
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
    let fit = scaling::fit_power_aggregate(&d).unwrap();
    assert!((fit.param("ln_c").unwrap() - beta[0]).abs() < 1e-10);
    assert!((fit.param("b").unwrap() - beta[1]).abs() < 1e-12);
    let pcfit = scaling::fit_power_per_capita(&d).unwrap();
    assert!((pcfit.param("exponent").unwrap() + 1.0 - beta[1]).abs() < 1e-12);
}

fn noisy(seed: u64, n: usize, sd: f64) -> Vec<f64> {
    let mut g = rng::stream(seed, 0);
    let dist = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| dist.sample(&mut g)).collect()
}

fn log_uniform_pops(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut g = rng::stream(seed, 1);
    (0..n)
        .map(|_| (lo.ln() + (hi.ln() - lo.ln()) * g.random::<f64>()).exp())
        .collect()
}

#[test]
fn logarithmic_matches_profile_grid_search() {
    let pops = log_uniform_pops(3, 40, 1e3, 1e7);
    let eps = noisy(3, 40, 0.05);
    let pc: Vec<f64> = pops
        .iter()
        .zip(&eps)
        .map(|(n, e)| 2.0 * (n / 100.0).ln() * e.exp())
        .collect();
    let d = dataset_from(&pops, &pc);
    let ln_n = d.log_population();
    let ln_y = d.log_per_capita();
    let min_ln_n = ln_n.iter().copied().fold(f64::INFINITY, f64::min);

    // Profile out ln r in closed form and scan ln k on a 1e-3 grid.
    let profile = |kappa: f64| -> f64 {
        let z: Vec<f64> = ln_n.iter().map(|l| (l - kappa).ln()).collect();
        let ln_r = ln_y.iter().zip(&z).map(|(a, b)| a - b).sum::<f64>() / z.len() as f64;
        ln_y.iter().zip(&z).map(|(a, b)| (a - ln_r - b).powi(2)).sum()
    };
    let (mut best_k, mut best) = (0.0, f64::INFINITY);
    let mut kappa = min_ln_n - 30.0;
    while kappa < min_ln_n - 1e-3 {
        let v = profile(kappa);
        if v < best {
            best = v;
            best_k = kappa;
        }
        kappa += 1e-3;
    }

    let fit = scaling::fit_logarithmic(&d, &NlsSettings::default()).unwrap();
    let rss: f64 = fit.residuals_log.iter().map(|r| r * r).sum();
    assert!(rss <= best + 1e-9, "nls {rss} grid {best}");
    assert!((fit.param("k").unwrap().ln() - best_k).abs() < 2e-3);
}

#[test]
fn logistic_matches_nested_grid_search() {
    let pops = log_uniform_pops(5, 60, 1e4, 1e7);
    let eps = noisy(5, 60, 0.05);
    let pc: Vec<f64> = pops
        .iter()
        .zip(&eps)
        .map(|(&n, e)| (10.0 + 0.4 * sigmoid((n - 1e6) / 3e5) + e).exp())
        .collect();
    let d = dataset_from(&pops, &pc);
    let ln_y = d.log_per_capita();

    // d1, d2 profiled by OLS for each (d3, ln d4).
    let profile = |d3: f64, ld4: f64| -> f64 {
        let s: Vec<f64> = pops.iter().map(|&n| sigmoid((n - d3) / ld4.exp())).collect();
        match urbscale::stats::ols_line(&s, &ln_y) {
            Ok(l) => l.rss,
            Err(_) => ln_y.iter().map(|v| (v - urbscale::stats::mean(&ln_y)).powi(2)).sum(),
        }
    };
    let (mut c3, mut c4) = (5e6, (1e6f64).ln());
    let (mut w3, mut w4) = (1e7, 8.0);
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let (mut b3, mut b4) = (c3, c4);
        for i in 0..=100 {
            for j in 0..=100 {
                let d3 = c3 - w3 / 2.0 + w3 * i as f64 / 100.0;
                let ld4 = c4 - w4 / 2.0 + w4 * j as f64 / 100.0;
                let v = profile(d3, ld4);
                if v < best {
                    best = v;
                    b3 = d3;
                    b4 = ld4;
                }
            }
        }
        c3 = b3;
        c4 = b4;
        w3 /= 10.0;
        w4 /= 10.0;
    }

    let fit = scaling::fit_logistic(&d, &NlsSettings::default()).unwrap();
    let rss: f64 = fit.residuals_log.iter().map(|r| r * r).sum();
    assert!(rss <= best * (1.0 + 1e-6) + 1e-12, "nls {rss} grid {best}");
}

#[test]
fn spline_matches_dense_solve() {
    let n = 30;
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 + (i as f64 * 1.3).sin() * 0.1).collect();
    let y: Vec<f64> = x.iter().zip(noisy(8, n, 0.2)).map(|(v, e)| v.sin() + e).collect();
    let lambda = 0.003;
    let fit = fit_spline(&x, &y, &LambdaGrid::Fixed(lambda)).unwrap();

    let k = penalty_matrix(&x);
    let a = DMatrix::<f64>::identity(n, n) + k * (n as f64 * lambda);
    let g = a.clone().lu().solve(&DVector::from_column_slice(&y)).unwrap();
    for i in 0..n {
        assert!((fit.fitted[i] - g[i]).abs() < 1e-9, "{i}");
    }
    let s = a.try_inverse().unwrap();
    for i in 0..n {
        assert!((fit.smoother_diag[i] - s[(i, i)]).abs() < 1e-9);
    }
    assert!((fit.edf - s.trace()).abs() < 1e-8);
}

#[test]
fn loo_shortcut_matches_brute_force() {
    let n = 25;
    let x: Vec<f64> = (0..n).map(|i| (i as f64).powf(1.3)).collect();
    let y: Vec<f64> = x.iter().zip(noisy(9, n, 0.3)).map(|(v, e)| (v / 5.0).cos() + e).collect();
    let lambda = 0.05;
    let fit = fit_spline(&x, &y, &LambdaGrid::Fixed(lambda)).unwrap();
    // Dropping a point must keep the unnormalized penalty n * lambda fixed.
    let lam_minus = lambda * n as f64 / (n - 1) as f64;
    let mut total = 0.0;
    for i in 0..n {
        let xs: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| x[j]).collect();
        let ys: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| y[j]).collect();
        let f = fit_spline(&xs, &ys, &LambdaGrid::Fixed(lam_minus)).unwrap();
        total += (y[i] - f.evaluate(x[i])).powi(2);
    }
    let brute = total / n as f64;
    assert!((fit.loo_cv - brute).abs() < 1e-8 * brute.max(1.0), "{} vs {brute}", fit.loo_cv);
}

#[test]
fn backfitting_matches_joint_penalized_solve() {
    let n = 40;
    let mut g = rng::stream(21, 0);
    let pops: Vec<f64> = (0..n).map(|_| 10f64.powf(4.0 + 3.0 * g.random::<f64>())).collect();
    let shares: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![0.3 * g.random::<f64>(), 0.2 * g.random::<f64>()])
        .collect();
    let eps = noisy(21, n, 0.1);
    let pc: Vec<f64> = (0..n)
        .map(|i| {
            (1.0 + 0.05 * pops[i].ln() + (10.0 * shares[i][0]).sin() + 3.0 * shares[i][1].powi(2) + eps[i]).exp()
        })
        .collect();
    let d = dataset_with_shares(&pops, &pc, &shares);
    let lambdas = [2e-4, 5e-4];
    let settings = BackfitSettings {
        tolerance: 1e-13,
        max_sweeps: 100_000,
        lambdas: Some(lambdas.to_vec()),
        ..BackfitSettings::default()
    };
    let fit = fit_additive(&d, true, &settings).unwrap();
    assert!(fit.converged);

    // Unknowns: intercept, slope, f1 at each city, f2 at each city.
    let p = 2 + 2 * n;
    let ln_n = d.log_population();
    let y = DVector::from_vec(d.log_per_capita());
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = ln_n[i];
        x[(i, 2 + i)] = 1.0;
        x[(i, 2 + n + i)] = 1.0;
    }
    let mut lhs = x.transpose() * &x / n as f64;
    for (j, lam) in lambdas.iter().enumerate() {
        let xj: Vec<f64> = shares.iter().map(|s| s[j]).collect();
        let k = penalty_matrix_unsorted(&xj);
        let off = 2 + j * n;
        for a in 0..n {
            for b in 0..n {
                // Centering term pins the otherwise free constant.
                lhs[(off + a, off + b)] += lam * k[(a, b)] + 1.0;
            }
        }
    }
    let rhs = x.transpose() * &y / n as f64;
    let theta = lhs.lu().solve(&rhs).unwrap();
    let joint_fitted = &x * &theta;
    for i in 0..n {
        assert!((fit.fitted_log[i] - joint_fitted[i]).abs() < 1e-7, "{i}");
        assert!((fit.partials[0].spline.fitted[i] - theta[2 + i]).abs() < 1e-6);
        assert!((fit.partials[1].spline.fitted[i] - theta[2 + n + i]).abs() < 1e-6);
    }
    assert!((fit.size_exponent - theta[1]).abs() < 1e-6);
}
