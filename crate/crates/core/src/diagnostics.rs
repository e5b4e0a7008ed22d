//! Post-hoc chain statistics: autocorrelation, initial-monotone-sequence
//! truncation, effective sample size, moment summaries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Effective-sample-size report for one scalar series.
#[derive(Debug, Clone)]
pub struct EssReport {
    /// `I / (1 + 2 sum rho_i)`, clamped into (0, I].
    pub ess: f64,
    /// Last autocorrelation lag included in the sum.
    pub truncation_lag: usize,
    /// Autocorrelations `rho_0 ..= rho_truncation_lag`.
    pub rho: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

/// Autocorrelations at lags `0..=max_lag` with the biased (1/I) covariance
/// normalization, which keeps the sequence positive semidefinite. The lag is
/// capped at `I/2`; beyond that the estimates are noise.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Degenerate("need at least 4 samples for autocorrelation"));
    }
    if !series.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("sample series"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0 = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return Err(Error::Degenerate("series has zero variance"));
    }
    let cap = max_lag.min(n / 2);
    let mut rho = Vec::with_capacity(cap + 1);
    rho.push(1.0);
    for k in 1..=cap {
        let ck = (0..n - k)
            .map(|t| (series[t] - mean) * (series[t + k] - mean))
            .sum::<f64>()
            / n as f64;
        rho.push(ck / c0);
    }
    Ok(rho)
}

/// Initial monotone sequence estimator over the paired sums
/// `Gamma_m = rho_{2m} + rho_{2m+1}`: pairs are kept while positive (with a
/// running minimum enforcing monotone nonincrease) and the sum truncates at
/// the first nonpositive pair. Returns the last included lag and the
/// effective pair sum; the floor is one pair, even if `Gamma_0 <= 0`.
fn truncated_pair_sum(rho: &[f64]) -> (usize, f64) {
    if rho.len() < 2 {
        return (rho.len().saturating_sub(1), rho.iter().sum());
    }
    let mut lag = 1usize;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0usize;
    while 2 * m + 1 < rho.len() {
        let gamma = (rho[2 * m] + rho[2 * m + 1]).min(prev);
        if gamma <= 0.0 {
            if m == 0 {
                return (1, rho[0] + rho[1]);
            }
            break;
        }
        sum += gamma;
        lag = 2 * m + 1;
        prev = gamma;
        m += 1;
    }
    (lag, sum)
}

/// Truncation lag of the initial monotone sequence estimator.
pub fn imse_truncate(rho: &[f64]) -> usize {
    truncated_pair_sum(rho).0
}

/// Effective sample size of a scalar series, `ESS = I (1 + 2 sum rho_i)^{-1}`
/// with the sum truncated by [`imse_truncate`]. A nonpositive denominator
/// (antithetic chains) clamps to `I`.
pub fn ess(series: &[f64]) -> Result<EssReport> {
    let n = series.len();
    let rho = autocorrelation(series, n / 2)?;
    let (truncation_lag, pair_sum) = truncated_pair_sum(&rho);
    let total = n as f64;
    // 2 * sum of pairs - rho_0 = 1 + 2 * sum_{i>=1} rho_i
    let denom = 2.0 * pair_sum - 1.0;
    let ess = if denom <= 0.0 {
        total
    } else {
        (total / denom).min(total)
    };
    let mean = series.iter().sum::<f64>() / total;
    let variance = if n > 1 {
        series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (total - 1.0)
    } else {
        0.0
    };
    Ok(EssReport {
        ess,
        truncation_lag,
        rho: rho[..=truncation_lag.min(rho.len() - 1)].to_vec(),
        mean,
        variance,
    })
}

/// Moment summary of one sample-matrix column, optionally scored against a
/// reference normal.
#[derive(Debug, Clone)]
pub struct Summary {
    pub mean: f64,
    /// Unbiased sample variance; 0 for constant columns.
    pub variance: f64,
    /// `None` when the series is too short or constant.
    pub ess: Option<EssReport>,
    /// `(mean - ref_mean) / sqrt(ref_var / ess)` against the reference normal.
    pub z: Option<f64>,
}

/// Summarize column `index` of a samples matrix. `reference` is the
/// `(mean, variance)` of the nominal marginal (the funnel uses `(0, 9)` for
/// `v`), enabling the bias z-score.
pub fn summarize(
    samples: &DMatrix<f64>,
    index: usize,
    reference: Option<(f64, f64)>,
) -> Result<Summary> {
    if index >= samples.ncols() {
        return Err(Error::Invalid(format!(
            "column {index} out of range for {} columns",
            samples.ncols()
        )));
    }
    let series: Vec<f64> = samples.column(index).iter().copied().collect();
    let n = series.len();
    if n == 0 {
        return Err(Error::Degenerate("empty sample matrix"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    let ess_report = ess(&series).ok();
    let z = match (&ess_report, reference) {
        (Some(r), Some((ref_mean, ref_var))) if ref_var > 0.0 => {
            Some((mean - ref_mean) / (ref_var / r.ess).sqrt())
        }
        _ => None,
    };
    Ok(Summary {
        mean,
        variance,
        ess: ess_report,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn autocorrelation_basics() {
        let series = white_noise(10_000, 1);
        let rho = autocorrelation(&series, 20).unwrap();
        assert_eq!(rho[0], 1.0);
        assert!(rho[1].abs() <= 3.0 / (series.len() as f64).sqrt());

        // alternating +1, -1 is perfectly anti-correlated at lag 1
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let rho = autocorrelation(&alt, 4).unwrap();
        assert!((rho[1] + 1.0).abs() < 2e-3);

        assert!(autocorrelation(&[1.0, 1.0, 1.0, 1.0], 2).is_err());
        assert!(autocorrelation(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn autocorrelation_caps_lag_at_half_length() {
        let series = white_noise(100, 2);
        let rho = autocorrelation(&series, 1000).unwrap();
        assert_eq!(rho.len(), 51);
    }

    #[test]
    fn imse_truncation_behaviour() {
        // geometric decay: every pair positive and decreasing, so the
        // truncation only stops at the available-lag cap
        let rho: Vec<f64> = (0..41).map(|i| 0.9f64.powi(i)).collect();
        assert_eq!(imse_truncate(&rho), 39);

        // white noise truncates within the first few pairs
        let series = white_noise(10_000, 3);
        let rho = autocorrelation(&series, 5000).unwrap();
        assert!(imse_truncate(&rho) <= 9);

        // immediate cutoff keeps the floor pair
        assert_eq!(imse_truncate(&[1.0, -1.0, 0.3, 0.2]), 1);
    }

    #[test]
    fn ess_white_noise_and_formula_paths() {
        let series = white_noise(10_000, 4);
        let report = ess(&series).unwrap();
        let n = series.len() as f64;
        assert!(report.ess >= 0.8 * n && report.ess <= 1.2 * n, "ess {}", report.ess);

        // rho identically zero beyond lag 0: empty sum, ESS = I
        let (lag, pair_sum) = truncated_pair_sum(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(lag, 1);
        assert_eq!(2.0 * pair_sum - 1.0, 1.0);

        // antithetic series clamps to I
        let alt: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.5 } else { -0.5 }).collect();
        let report = ess(&alt).unwrap();
        assert_eq!(report.ess, 1000.0);
    }

    #[test]
    fn ess_duplicated_draws_halves() {
        let base = white_noise(5_000, 5);
        let mut doubled = Vec::with_capacity(10_000);
        for x in &base {
            doubled.push(*x);
            doubled.push(*x);
        }
        let report = ess(&doubled).unwrap();
        let half = doubled.len() as f64 / 2.0;
        assert!(
            (report.ess - half).abs() <= 0.2 * half,
            "ess {} vs I/2 = {half}",
            report.ess
        );
    }

    #[test]
    fn ess_is_affine_invariant() {
        let series = white_noise(5_000, 6);
        let mapped: Vec<f64> = series.iter().map(|x| -3.7 * x + 11.0).collect();
        let a = ess(&series).unwrap();
        let b = ess(&mapped).unwrap();
        assert!((a.ess - b.ess).abs() <= 1e-9 * a.ess);
        assert_eq!(a.truncation_lag, b.truncation_lag);
    }

    #[test]
    fn truncated_sum_never_exceeds_positive_pair_sum() {
        let series = white_noise(4_000, 7);
        let rho = autocorrelation(&series, 2000).unwrap();
        let (_, truncated) = truncated_pair_sum(&rho);
        // raw positive-pair sum without the monotone adjustment
        let mut raw = 0.0;
        let mut m = 0;
        while 2 * m + 1 < rho.len() {
            let gamma = rho[2 * m] + rho[2 * m + 1];
            if gamma <= 0.0 {
                break;
            }
            raw += gamma;
            m += 1;
        }
        assert!(truncated <= raw + 1e-15);
    }

    #[test]
    fn summarize_constant_and_reference() {
        let constant = DMatrix::from_element(50, 2, 3.25);
        let s = summarize(&constant, 1, Some((0.0, 9.0))).unwrap();
        assert_eq!(s.variance, 0.0);
        assert!(s.ess.is_none());
        assert!(s.z.is_none());

        // N(0, 9) draws: z should be well inside +-3 nearly always
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut failures = 0;
        for _ in 0..20 {
            let data =
                DMatrix::from_fn(10_000, 1, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            let s = summarize(&data, 0, Some((0.0, 9.0))).unwrap();
            if s.z.unwrap().abs() > 3.0 {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} of 20 reference summaries failed");
    }
}
