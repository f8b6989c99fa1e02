#![allow(dead_code)]

use urbscale::dataset::{CityRecord, Dataset};

pub fn dataset_from(pops: &[f64], per_capita: &[f64]) -> Dataset {
    let recs = pops
        .iter()
        .zip(per_capita)
        .enumerate()
        .map(|(i, (&n, &y))| CityRecord::new(format!("r{i:04}"), "", n, n * y, vec![]).unwrap())
        .collect();
    Dataset::new("test", 1.0, vec![], recs).unwrap()
}

pub fn dataset_with_shares(pops: &[f64], per_capita: &[f64], shares: &[Vec<f64>]) -> Dataset {
    let k = shares.first().map_or(0, Vec::len);
    let recs = pops
        .iter()
        .zip(per_capita)
        .zip(shares)
        .enumerate()
        .map(|(i, ((&n, &y), s))| {
            CityRecord::new(format!("r{i:04}"), "", n, n * y, s.iter().map(|v| Some(*v)).collect()).unwrap()
        })
        .collect();
    Dataset::new("test", 1.0, (0..k).map(|j| format!("s{j}")).collect(), recs).unwrap()
}

/// Dense `K = Q R^-1 Q'` for sorted distinct knots `t`.
pub fn penalty_matrix(t: &[f64]) -> nalgebra::DMatrix<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = nalgebra::DMatrix::<f64>::zeros(n, n - 2);
    let mut r = nalgebra::DMatrix::<f64>::zeros(n - 2, n - 2);
    for j in 0..n - 2 {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < n - 2 {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    let rinv = r.try_inverse().unwrap();
    &q * rinv * q.transpose()
}

/// `penalty_matrix` for unsorted distinct `x`, in the order of `x`.
pub fn penalty_matrix_unsorted(x: &[f64]) -> nalgebra::DMatrix<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ks = penalty_matrix(&sorted);
    let mut rank = vec![0; x.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    nalgebra::DMatrix::from_fn(x.len(), x.len(), |a, b| ks[(rank[a], rank[b])])
}
