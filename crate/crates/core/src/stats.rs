//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Empirical quantile with linear interpolation between order statistics,
/// matching the common `p = q * (n - 1)` convention. `sorted` must be
/// ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let p = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = p.floor() as usize;
    let hi = p.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (p - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Convenience wrapper that sorts a copy first.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, q)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Mean of vectors under normalized weights.
pub fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let dim = points[0].len();
    let mut acc = DVector::zeros(dim);
    for (p, w) in points.iter().zip(weights) {
        acc += p * *w;
    }
    acc
}

/// Weighted empirical covariance about the weighted mean (weights assumed
/// normalized; plain second-moment form, no small-sample correction).
pub fn weighted_covariance(points: &[DVector<f64>], weights: &[f64]) -> DMatrix<f64> {
    let dim = points[0].len();
    let mu = weighted_mean(points, weights);
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, w) in points.iter().zip(weights) {
        let d = p - &mu;
        cov.ger(*w, &d, &d, 1.0);
    }
    cov
}
