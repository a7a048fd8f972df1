//! Sample statistics used by the Monte Carlo checks.

use serde::Serialize;
use statrs::function::erf::erfc;

/// Moments of a sample together with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of the sample variance, `sqrt((m4 - s⁴)/M)`.
    pub se_variance: f64,
    pub skewness: f64,
    pub se_skewness: f64,
    pub excess_kurtosis: f64,
    pub se_kurtosis: f64,
}

/// Two-pass sample summary. Panics on fewer than two observations.
pub fn summarize(xs: &[f64]) -> Summary {
    let m = xs.len();
    assert!(m >= 2, "need at least two observations");
    let mf = m as f64;
    let mean = xs.iter().sum::<f64>() / mf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / mf, m3 / mf, m4 / mf);
    let variance = m2 * mf / (mf - 1.0);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Summary {
        count: m,
        mean,
        variance,
        se_mean: (variance / mf).sqrt(),
        se_variance: ((m4 - m2 * m2).max(0.0) / mf).sqrt(),
        skewness,
        se_skewness: (6.0 / mf).sqrt(),
        excess_kurtosis,
        se_kurtosis: (24.0 / mf).sqrt(),
    }
}

/// Empirical Wasserstein-1 distance between two samples on the line:
/// `∫ |F_a(x) - F_b(x)| dx`. For equal sizes this is the mean absolute
/// difference of the sorted samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let en = effective_n.sqrt();
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    }
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// One-sample test against `N(mean, sd²)`.
pub fn ks_normal(xs: &[f64], mean: f64, sd: f64) -> KsResult {
    assert!(!xs.is_empty(), "empty sample");
    let mut xs = xs.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0f64;
    for (k, &x) in xs.iter().enumerate() {
        let f = normal_cdf(x, mean, sd);
        d = d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, Stream};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let rng = CounterRng::new(seed);
        (0..n).map(|i| rng.normal(Stream::Reference, i as u64, 0)).collect()
    }

    #[test]
    fn summary_of_small_sample() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert!(s.skewness.abs() < 1e-15);
        assert!((s.excess_kurtosis - (2.5625 / 1.5625 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn normal_sample_passes_its_own_checks() {
        let xs = normals(3, 100_000);
        let s = summarize(&xs);
        assert!(s.mean.abs() < 4.0 * s.se_mean);
        assert!((s.variance - 1.0).abs() < 4.0 * s.se_variance);
        assert!(s.skewness.abs() < 4.0 * s.se_skewness);
        assert!(s.excess_kurtosis.abs() < 4.0 * s.se_kurtosis);
        assert!(ks_normal(&xs, 0.0, 1.0).p_value > 0.001);
        assert!(ks_normal(&xs, 0.1, 1.0).p_value < 1e-6);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[0.0, 1.0], &[1.0, 0.0]), 0.0);
        assert!((wasserstein1(&[0.0, 1.0, 2.0], &[0.5, 1.5, 2.5]) - 0.5).abs() < 1e-15);
        // Unequal sizes: point mass at 0 vs uniform on {0, 1}.
        assert!((wasserstein1(&[0.0], &[0.0, 1.0]) - 0.5).abs() < 1e-15);
        let a = normals(1, 1000);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        assert!((wasserstein1(&a, &shifted) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_merge_matches_sorted_pairs() {
        let a = normals(5, 300);
        let b = normals(6, 300);
        let mut ab = a.clone();
        ab.extend_from_slice(&a);
        // Duplicating every point leaves the empirical law unchanged.
        let w_pairs = wasserstein1(&a, &b);
        let w_merge = wasserstein1(&ab, &b);
        assert!((w_pairs - w_merge).abs() < 1e-12);
    }

    #[test]
    fn ks_two_sample_separates_laws() {
        let a = normals(10, 20_000);
        let b = normals(11, 20_000);
        assert!(ks_two_sample(&a, &b).p_value > 0.001);
        let c: Vec<f64> = b.iter().map(|x| 1.2 * x).collect();
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        assert_eq!(ks_two_sample(&a, &a).statistic, 0.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_q(1.0) - 0.26999967).abs() < 1e-7);
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (slope, intercept) = linear_fit(&xs, &ys);
        assert!((slope + 0.5).abs() < 1e-15 && (intercept - 2.0).abs() < 1e-14);
    }
}
