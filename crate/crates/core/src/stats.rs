//! Small statistics toolkit: Wilson intervals, two-sample KS, Spearman rank
//! correlation and a two-sample mean z-test.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Three-sigma width used throughout.
pub const Z3: f64 = 3.0;

/// Wilson score interval for `k` successes in `n` trials. `n = 0` gives [0, 1].
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)) / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
}

impl KsResult {
    /// Asymptotic critical value at level `alpha`.
    pub fn critical(&self, alpha: f64) -> f64 {
        let (n, m) = (self.n as f64, self.m as f64);
        libm::sqrt(-libm::log(alpha / 2.0) / 2.0) * libm::sqrt((n + m) / (n * m))
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.statistic > self.critical(alpha)
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let t = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= t {
            i += 1;
        }
        while j < m && b[j] <= t {
            j += 1;
        }
        d = d.max(libm::fabs(i as f64 / n as f64 - j as f64 / m as f64));
    }
    KsResult { statistic: d, n, m }
}

/// Average ranks (1-based), ties share the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `NaN` when either side is constant or empty.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch z-statistic for equal means.
pub fn mean_z(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    (ma - mb) / libm::sqrt(va / a.len() as f64 + vb / b.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_values() {
        // k = 50, n = 100, z = 3: centre 0.5, half 0.15 / 1.09 * sqrt(1 + 9/100)
        let (lo, hi) = wilson(50, 100, 3.0);
        let half = 3.0 * (0.25f64 / 100.0 + 9.0 / 40000.0).sqrt() / 1.09;
        assert!((lo - (0.5 - half)).abs() < 1e-12);
        assert!((hi - (0.5 + half)).abs() < 1e-12);
        assert_eq!(wilson(0, 0, 3.0), (0.0, 1.0));
        let (lo, hi) = wilson(0, 10, 3.0);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 1.0);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(ks_two_sample(&a, &a).statistic, 0.0);
        let b: Vec<f64> = (200..300).map(f64::from).collect();
        assert_eq!(ks_two_sample(&a, &b).statistic, 1.0);
        // half overlap
        let c: Vec<f64> = (50..150).map(f64::from).collect();
        assert!((ks_two_sample(&a, &c).statistic - 0.5).abs() < 1e-12);
        let r = ks_two_sample(&a, &a);
        // c(0.05) = 1.358
        assert!((r.critical(0.05) - 1.3581 * (0.02f64).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn spearman_with_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), alloc::vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mean_z_zero_for_equal_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean_z(&a, &a), 0.0);
        assert_eq!(mean_var(&a), (2.5, 5.0 / 3.0));
    }
}
