//! Small statistics helpers shared by the checks.

use crate::rng::{NormalStream, Purpose};

/// Kolmogorov–Smirnov distance of `sorted` from `cdf`.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Two-sided KS critical value at `p ≈ 0.001`.
pub fn ks_critical(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

/// Probe levels `(k + 1/2)/count`.
pub fn probe_levels(count: usize) -> Vec<f64> {
    (0..count).map(|k| (k as f64 + 0.5) / count as f64).collect()
}

/// Empirical quantile of sorted data at level `p`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((p * sorted.len() as f64) as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// `∫_0^1 |Q_emp(p) − Q(p)| dp` by the midpoint rule on the probe levels
/// that `quantiles` was evaluated at.
pub fn w1_against_quantiles(sorted: &[f64], quantiles: &[f64]) -> f64 {
    let probes = probe_levels(quantiles.len());
    probes
        .iter()
        .zip(quantiles)
        .map(|(&p, q)| (empirical_quantile(sorted, p) - q).abs())
        .sum::<f64>()
        / quantiles.len() as f64
}

pub fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `log err` against `log h`.
pub fn loglog_slope(h: &[f64], err: &[f64]) -> f64 {
    let lx: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    ls_slope(&lx, &ly)
}

/// Mean, unbiased variance and the standard error of that variance.
pub fn variance_with_se(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (mean, var, ((m4 - m2 * m2) / n).sqrt())
}

/// Bootstrap indices for replicate `rep`: `n` draws with replacement.
pub fn bootstrap_indices(seed: u64, rep: u64, n: usize) -> Vec<usize> {
    let mut s = NormalStream::new(seed, Purpose::Bootstrap, rep, 1);
    (0..n as u64).map(|k| ((s.uniform_at(k) * n as f64) as usize).min(n - 1)).collect()
}
