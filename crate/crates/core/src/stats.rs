//! Small statistics helpers used by the density-estimation diagnostics.

use std::f64::consts::{PI, SQRT_2};

/// Two-sided Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Equal-width histogram counts over `[lo, hi]`; values outside are dropped.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        if x < lo || x > hi || !x.is_finite() {
            continue;
        }
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
}

/// Ratio of the fullest to the emptiest bin (infinite if some bin is empty).
pub fn max_min_bin_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
