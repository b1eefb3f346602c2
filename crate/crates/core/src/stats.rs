//! Order-independent reductions and the small statistical toolkit used by the
//! diagnostics and pricing layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compensated (Neumaier) sum. The result depends only on the order of `xs`,
/// which callers keep in path order, so reductions do not depend on scheduling.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sample mean with standard error `sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(xs: &[f64]) -> Result<MeanEstimate> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mean = neumaier_sum(xs.iter().copied()) / n as f64;
    let stderr = if n > 1 {
        let ss = neumaier_sum(xs.iter().map(|x| (x - mean) * (x - mean)));
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    if !mean.is_finite() || !stderr.is_finite() {
        return Err(Error::NonFinite("sample mean or standard error".into()));
    }
    Ok(MeanEstimate { mean, stderr, n })
}

/// Sample kurtosis (non-excess, so 3 for a Gaussian). Zero for a constant sample.
pub fn kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = neumaier_sum(xs.iter().copied()) / n;
    let m2 = neumaier_sum(xs.iter().map(|x| (x - mean).powi(2))) / n;
    let m4 = neumaier_sum(xs.iter().map(|x| (x - mean).powi(4))) / n;
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2)
    }
}

/// Ratio of two sample means `mean(num) / mean(den)` with a delta-method standard error.
pub fn ratio_of_means(num: &[f64], den: &[f64]) -> Result<MeanEstimate> {
    if num.len() != den.len() {
        return Err(Error::Dimension(format!(
            "ratio samples differ in length ({} vs {})",
            num.len(),
            den.len()
        )));
    }
    let a = mean_stderr(num)?;
    let b = mean_stderr(den)?;
    if b.mean == 0.0 {
        return Err(Error::Numerical("zero denominator sample mean".into()));
    }
    let ratio = a.mean / b.mean;
    let influence: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(x, y)| (x - ratio * y) / b.mean)
        .collect();
    let se = mean_stderr(&influence)?.stderr;
    Ok(MeanEstimate {
        mean: ratio,
        stderr: se,
        n: num.len(),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (n, m) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xa[i].min(xb[j]);
        while i < n && xa[i] <= x {
            i += 1;
        }
        while j < m && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok((d, kolmogorov_q(lambda)))
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
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
