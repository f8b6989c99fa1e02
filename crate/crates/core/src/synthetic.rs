//! Seeded synthetic datasets for tests, benchmarks and demos.
//!
//! These are stand-ins with roughly the shape of metropolitan economic data.
//! They are not calibrated to any real dataset and every label says so.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{CityRecord, Dataset, SpeedRecord, COURSE_LENGTH_M};
use crate::rng;

pub const SECTOR_NAMES: [&str; 4] = ["ict", "finance", "professional", "management"];

fn log_uniform(g: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * g.random::<f64>()).exp()
}

/// Cities whose log per-capita output rises with size and with four sector
/// shares, plus Gaussian noise. About 40% of records carry all four shares.
pub fn city_dataset(n: usize, seed: u64) -> Dataset {
    let mut g = rng::stream(seed, 0);
    let noise = Normal::new(0.0, 0.15).expect("valid sd");
    let recs = (0..n)
        .map(|i| {
            let pop = log_uniform(&mut g, 5e4, 2e7);
            let shares: Vec<f64> = (0..4).map(|j| 0.02 + 0.1 * g.random::<f64>() * (1.0 + j as f64 * 0.3)).collect();
            let ln_y = 8.5
                + 0.1 * pop.ln()
                + 3.0 * shares[0]
                + 2.0 * shares[1]
                + 4.0 * shares[2].sqrt()
                + 1.5 * shares[3]
                + noise.sample(&mut g);
            let complete = g.random::<f64>() < 0.4;
            // Incomplete records always lack the first share and some others.
            let shares = shares
                .into_iter()
                .enumerate()
                .map(|(j, s)| (complete || (j > 0 && g.random::<f64>() < 0.5)).then_some(s))
                .collect();
            CityRecord::new(format!("{:05}", 10000 + i), format!("Synthetic City {i}"), pop, pop * ln_y.exp(), shares)
                .expect("generated record is valid")
        })
        .collect();
    Dataset::new(
        "synthetic cities",
        1.0,
        SECTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        recs,
    )
    .expect("unique ids")
}

/// Exact power law `y = c N^(b - 1)` with no sector data.
pub fn power_law_dataset(populations: &[f64], c: f64, b: f64) -> Dataset {
    let recs = populations
        .iter()
        .enumerate()
        .map(|(i, &n)| CityRecord::new(format!("p{i}"), "", n, c * n.powf(b), vec![]).expect("positive"))
        .collect();
    Dataset::new("synthetic power law", 1.0, vec![], recs).expect("unique ids")
}

/// Two regression lines in `(ln N, ln y)` with a common slope, intercepts
/// `gap` apart and noise `sigma`. Returns the data and each record's
/// generating component.
///
/// Populations run from 1 to 1e7 so that `ln N` straddles a wide range near
/// the origin, which keeps the intercepts well determined.
pub fn two_component_dataset(n: usize, gap: f64, sigma: f64, seed: u64) -> (Dataset, Vec<usize>) {
    let mut g = rng::stream(seed, 0);
    let noise = Normal::new(0.0, sigma).expect("valid sd");
    let mut labels = Vec::with_capacity(n);
    let recs = (0..n)
        .map(|i| {
            let pop = log_uniform(&mut g, 1.0, 1e7);
            let z = usize::from(g.random::<f64>() < 0.5);
            labels.push(z);
            let ln_y = 10.0 + gap * z as f64 + 0.1 * pop.ln() + noise.sample(&mut g);
            CityRecord::new(format!("m{i}"), "", pop, pop * ln_y.exp(), vec![]).expect("positive")
        })
        .collect();
    (
        Dataset::new("synthetic two-component", 1.0, vec![], recs).expect("unique ids"),
        labels,
    )
}

/// Fifteen walking-speed records with speed rising in log population.
pub fn speed_records(seed: u64) -> Vec<SpeedRecord> {
    let mut g = rng::stream(seed, 0);
    (0..15)
        .map(|i| {
            let pop = log_uniform(&mut g, 300.0, 2e6);
            let v = 0.3 + 0.085 * pop.ln() + 0.04 * (g.random::<f64>() - 0.5);
            let t = COURSE_LENGTH_M / v;
            SpeedRecord::new(format!("Town {i}"), pop, t, 0.2 * t, COURSE_LENGTH_M).expect("plausible speed")
        })
        .collect()
}
