//! Goodness-of-fit checks for the diffusive limit.
//!
//! Scaled displacement samples are compared per coordinate against the
//! centered Gaussian with the effective covariance: a one-sample
//! Kolmogorov-Smirnov statistic per coordinate plus a spectral-norm
//! relative error between the empirical covariance matrix and the
//! predicted one.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corrector::Sigma2;
use crate::error::CoreError;
use crate::Result;

/// Thresholds for [`clt_test`].
#[derive(Debug, Clone, Serialize)]
pub struct CltOptions {
    /// Per-coordinate KS threshold; `None` uses the 1% asymptotic critical
    /// value 1.63 / sqrt(n).
    pub ks_threshold: Option<f64>,
    /// Allowed spectral-norm relative error of the covariance.
    pub cov_rel_err: f64,
    /// Minimum sample count per time.
    pub min_samples: usize,
}

impl Default for CltOptions {
    fn default() -> Self {
        Self {
            ks_threshold: None,
            cov_rel_err: 0.07,
            min_samples: 1000,
        }
    }
}

/// Verdict for one time point.
#[derive(Debug, Clone, Serialize)]
pub struct CltTimeReport {
    pub t: f64,
    pub n: usize,
    /// KS distance per coordinate against N(0, sigma2_ii).
    pub ks: Vec<f64>,
    pub ks_threshold: f64,
    /// 1% asymptotic critical value 1.63 / sqrt(n), for reference.
    pub ks_critical: f64,
    pub empirical_cov: Vec<Vec<f64>>,
    pub cov_rel_err: f64,
    pub pass: bool,
}

/// Full report over all requested times.
#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub per_time: Vec<CltTimeReport>,
    pub pass: bool,
}

/// One-sample Kolmogorov-Smirnov distance of `samples` to the law with the
/// given CDF. Sorts a copy of the input.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN samples"));
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n).abs());
        worst = worst.max(((i + 1) as f64 / n - f).abs());
    }
    worst
}

/// Test scaled displacement samples against the Gaussian with covariance
/// `sigma2`. `samples[ti]` holds the per-walk coordinate rows at time
/// `t_list[ti]`.
pub fn clt_test(
    t_list: &[f64],
    samples: &[Vec<Vec<f64>>],
    sigma2: &Sigma2,
    opts: &CltOptions,
) -> Result<CltReport> {
    if t_list.len() != samples.len() {
        return Err(CoreError::Precondition(
            "one sample block per time point required".into(),
        ));
    }
    let diagonal = sigma2.diagonal();
    let d = diagonal.len();
    let mut per_time = Vec::with_capacity(t_list.len());
    let mut all_pass = true;
    for (ti, &t) in t_list.iter().enumerate() {
        let rows = &samples[ti];
        let n = rows.len();
        if n < opts.min_samples {
            return Err(CoreError::Precondition(format!(
                "{n} samples at t = {t}; at least {} required",
                opts.min_samples
            )));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(CoreError::MismatchedTarget(
                "sample dimension does not match the covariance".into(),
            ));
        }
        let nonzero = rows.iter().any(|r| r.iter().any(|&v| v != 0.0));
        if diagonal.iter().any(|&v| v <= 0.0) && nonzero {
            return Err(CoreError::MismatchedTarget(
                "degenerate covariance against nonzero samples".into(),
            ));
        }

        let ks_critical = 1.63 / (n as f64).sqrt();
        let threshold = opts.ks_threshold.unwrap_or(ks_critical);
        let mut ks = Vec::with_capacity(d);
        for (coord, &var) in diagonal.iter().enumerate() {
            let normal = Normal::new(0.0, var.sqrt())
                .map_err(|e| CoreError::Internal(format!("normal cdf: {e}")))?;
            let coord_samples: Vec<f64> = rows.iter().map(|r| r[coord]).collect();
            ks.push(ks_statistic(&coord_samples, |x| normal.cdf(x)));
        }

        let mut cov = vec![vec![0.0; d]; d];
        for row in rows {
            for i in 0..d {
                for j in i..d {
                    cov[i][j] += row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[i][j] /= n as f64;
                cov[j][i] = cov[i][j];
            }
        }
        let diff = match sigma2 {
            Sigma2::Scalar(v) => Sigma2::Scalar(cov[0][0] - v),
            Sigma2::Matrix(m) => Sigma2::Matrix(
                (0..d)
                    .map(|i| (0..d).map(|j| cov[i][j] - m[i][j]).collect())
                    .collect(),
            ),
        };
        let cov_rel_err = diff.spectral_norm() / sigma2.spectral_norm().max(f64::MIN_POSITIVE);

        let pass = ks.iter().all(|&k| k <= threshold) && cov_rel_err <= opts.cov_rel_err;
        all_pass &= pass;
        per_time.push(CltTimeReport {
            t,
            n,
            ks,
            ks_threshold: threshold,
            ks_critical,
            empirical_cov: cov,
            cov_rel_err,
            pass,
        });
    }
    Ok(CltReport {
        per_time,
        pass: all_pass,
    })
}
