use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{LscError, Result};

/// Shortest series accepted by [`decaying_covariance`].
pub const MIN_SERIES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagStatistics {
    pub lag: usize,
    /// Number of pairs `(a_t, a_{t+lag})`.
    pub pairs: usize,
    pub covariance: f64,
    /// `None` when either side is constant.
    pub correlation: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// Exponent applied to the series before the statistics.
    pub q: u32,
    pub lags: Vec<LagStatistics>,
}

impl CovarianceReport {
    pub fn correlations(&self) -> Vec<Option<f64>> {
        self.lags.iter().map(|l| l.correlation).collect()
    }
}

fn lag_statistics(x: &[f64], y: &[f64], lag: usize) -> Result<LagStatistics> {
    let n = x.len();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    let covariance = sxy / (n - 1) as f64;
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(LagStatistics { lag, pairs: n, covariance, correlation: None, p_value: None });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| LscError::Statistics(e.to_string()))?;
        (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
    };
    Ok(LagStatistics { lag, pairs: n, covariance, correlation: Some(r), p_value: Some(p) })
}

/// Lagged covariance, Pearson correlation and two-sided p-value of `a^q`
/// for lags `1..=max_lag`. Each lag pairs `a_t` with `a_{t+lag}` and must
/// leave at least 3 pairs.
pub fn decaying_covariance(series: &[f64], max_lag: usize, q: u32) -> Result<CovarianceReport> {
    if series.len() < MIN_SERIES {
        return Err(LscError::Argument(format!("series needs at least {MIN_SERIES} values, got {}", series.len())));
    }
    if !(1..=2).contains(&q) {
        return Err(LscError::Argument(format!("exponent q must be 1 or 2, got {q}")));
    }
    if max_lag == 0 || max_lag + 3 > series.len() {
        return Err(LscError::Argument(format!("max_lag {max_lag} leaves too few pairs")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(LscError::NonFinite("series contains a non-finite value".into()));
    }
    let a: Vec<f64> = series.iter().map(|v| v.powi(q as i32)).collect();
    let n = a.len();
    let lags = (1..=max_lag).map(|k| lag_statistics(&a[..n - k], &a[k..], k)).collect::<Result<_>>()?;
    Ok(CovarianceReport { q, lags })
}
