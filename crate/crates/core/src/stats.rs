//! Order-fixed reductions and small statistical helpers.
//!
//! Every reduction consumes its input in slice order with compensated
//! summation, so a result depends only on the values, never on how the
//! producing loop was scheduled.

use serde::Serialize;

/// Neumaier compensated sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// `(mean - target) / stderr`; zero when both the gap and the error vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = self.mean - target;
        if self.stderr > 0.0 {
            gap / self.stderr
        } else if gap == 0.0 {
            0.0
        } else {
            gap.signum() * f64::INFINITY
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    neumaier_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

pub fn mean_stderr(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    let m = mean(values);
    let se = if n > 1 {
        (variance(values) / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean: m, stderr: se, n }
}

/// Sample covariance (unbiased).
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mx = mean(x);
    let my = mean(y);
    neumaier_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my))) / (n - 1) as f64
}

/// Sample excess kurtosis, used to flag payoffs whose second moment is
/// empirically unstable.
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return 0.0;
    }
    let m = mean(values);
    let m2 = neumaier_sum(values.iter().map(|v| (v - m).powi(2))) / n as f64;
    let m4 = neumaier_sum(values.iter().map(|v| (v - m).powi(4))) / n as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

/// One-sample Kolmogorov-Smirnov distance against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    // Walk distinct values so ties and atoms of the target are compared
    // through left limits: F_n(x-) against F(x-), F_n(x) against F(x).
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let below = cdf(x.next_down());
        let at = cdf(x);
        d = d.max((below - i as f64 / n).abs()).max((at - j as f64 / n).abs());
        i = j;
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy = neumaier_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = neumaier_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }

    #[test]
    fn mean_and_stderr_of_small_sample() {
        let e = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_sample_has_zero_error() {
        let e = mean_stderr(&[0.7; 10]);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.z_score(0.7), 0.0);
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&s, |x| x.clamp(0.0, 1.0)) <= 0.0005 + 1e-12);
    }

    #[test]
    fn ks_handles_atoms() {
        // 30% mass at zero, the rest uniform on (0, 1].
        let cdf = |x: f64| if x < 0.0 { 0.0 } else { 0.3 + 0.7 * x.min(1.0) };
        let mut s = vec![0.0; 300];
        s.extend((0..700).map(|i| (i as f64 + 0.5) / 700.0));
        assert!(ks_statistic(&s, cdf) <= 0.0005 + 1e-12);
        // Missing the atom is detected.
        let t: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&t, cdf) >= 0.3 - 1e-12);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 5.0, 7.0];
        let (s, c) = linear_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn sum_is_permutation_stable(mut v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let a = neumaier_sum(v.iter().copied());
            v.reverse();
            let b = neumaier_sum(v.iter().copied());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn two_sample_ks_of_identical_is_zero(v in proptest::collection::vec(-10f64..10.0, 1..100)) {
            prop_assert_eq!(ks_two_sample(&v, &v), 0.0);
        }
    }
}
