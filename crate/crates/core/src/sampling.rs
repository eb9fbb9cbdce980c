//! Sample moments with standard errors for Monte Carlo gates.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub mean_se: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub variance_se: f64,
    /// Mean of the squared values, E[X²].
    pub raw_second: f64,
    pub raw_second_se: f64,
}

impl SampleSummary {
    /// Two-pass summary over `values` in the given order, so identical
    /// inputs give bit-identical outputs.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "need at least two samples");
        let nf = n as f64;
        // Shifting by the first value keeps a constant sample exactly constant.
        let pivot = values[0];
        let mean = pivot + values.iter().map(|x| x - pivot).sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in values {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        let variance = m2 / (nf - 1.0);
        let central2 = m2 / nf;
        let central4 = m4 / nf;
        // Var(s²) ≈ (μ₄ − σ⁴ (n−3)/(n−1)) / n
        let var_of_variance = ((central4 - central2 * central2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);

        let raw_second = values.iter().map(|x| x * x).sum::<f64>() / nf;
        let raw_second_var = values.iter().map(|x| (x * x - raw_second).powi(2)).sum::<f64>() / (nf - 1.0);

        Self {
            n,
            mean,
            mean_se: (variance / nf).sqrt(),
            variance,
            variance_se: var_of_variance.sqrt(),
            raw_second,
            raw_second_se: (raw_second_var / nf).sqrt(),
        }
    }

    /// Whether `expected` lies within `k` standard errors of the sample mean.
    pub fn mean_within(&self, expected: f64, k: f64) -> bool {
        (self.mean - expected).abs() <= k * self.mean_se
    }
}

/// One-sample Kolmogorov–Smirnov test of `values` against `cdf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOutcome {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> KsOutcome {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    KsOutcome {
        n,
        statistic: d,
        p_value: kolmogorov_p_value(d, n),
    }
}

/// Asymptotic p-value `P(D_n > d)` with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
