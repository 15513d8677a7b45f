use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LscError, Result};

/// Largest `dt + dl` for which path counts are evaluated exactly.
pub const EXACT_LIMIT: u64 = 2000;

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Shortest lattice paths across a `dt x dl` grid, `C(dt + dl, dt)`.
pub fn path_count(dt: u64, dl: u64) -> BigUint {
    binomial(dt + dl, dt)
}

/// Causal paths from `(t + dt, l + dl)` to `(t, l)` when every step
/// advances time by one: `C(dt, dl)`.
pub fn causal_path_count(dt: u64, dl: u64) -> BigUint {
    binomial(dt, dl)
}

/// Natural log of a big integer (`-inf` for zero).
pub fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    (x >> shift).to_f64().expect("64-bit mantissa").ln() + shift as f64 * std::f64::consts::LN_2
}

/// `ln C(dt + dl, dt)` and whether it was computed exactly (log-gamma beyond
/// [`EXACT_LIMIT`]).
pub fn log_path_count(dt: u64, dl: u64) -> (f64, bool) {
    if dt + dl <= EXACT_LIMIT {
        (ln_biguint(&path_count(dt, dl)), true)
    } else {
        let (n, a, b) = ((dt + dl) as f64, dt as f64, dl as f64);
        (ln_gamma(n + 1.0) - ln_gamma(a + 1.0) - ln_gamma(b + 1.0), false)
    }
}

/// Total number of gradient paths averaged over time, in closed form and as
/// its defining double sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBound {
    /// `C(T + dl + 2, T) / T`.
    pub closed: BigRational,
    /// `sum_{t=0}^{T} sum_{dt=0}^{t} C(dl + dt, dt) / T`.
    pub double_sum: BigRational,
}

impl PathBound {
    pub fn ln(&self) -> f64 {
        ln_biguint(self.closed.numer().magnitude()) - ln_biguint(self.closed.denom().magnitude())
    }
}

pub fn total_path_bound(t: u64, dl: u64) -> Result<PathBound> {
    if t == 0 {
        return Err(LscError::Argument("total_path_bound needs T >= 1".into()));
    }
    let denom = BigUint::from(t);
    let closed = BigRational::new(binomial(t + dl + 2, t).into(), denom.clone().into());
    // term = C(dl + dt, dt) stepped by its ratio, inner = running inner sum
    let mut sum = BigUint::zero();
    let mut inner = BigUint::zero();
    let mut term = BigUint::one();
    for outer in 0..=t {
        if outer > 0 {
            term = term * (dl + outer) / outer;
        }
        inner += &term;
        sum += &inner;
    }
    let double_sum = BigRational::new(sum.into(), denom.into());
    if closed != double_sum {
        return Err(LscError::Precondition(format!("closed form and double sum differ at T={t}, dl={dl}")));
    }
    Ok(PathBound { closed, double_sum })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthRegime {
    Subexponential,
    Exponential,
}

/// Classifies a curve from its log-values: exponential when the successive
/// log-differences settle on a positive constant (last five within 5% of
/// their mean, with no downward trend against the five before), otherwise
/// subexponential.
pub fn growth_regime(log_values: &[f64]) -> Result<GrowthRegime> {
    if log_values.len() < 10 {
        return Err(LscError::Argument(format!("need at least 10 samples, got {}", log_values.len())));
    }
    if log_values.iter().any(|v| !v.is_finite()) {
        return Err(LscError::NonFinite("growth curve has non-finite log-values".into()));
    }
    let diffs: Vec<f64> = log_values.windows(2).map(|w| w[1] - w[0]).collect();
    let k = diffs.len();
    let last = &diffs[k - 5..];
    let before = &diffs[k - 10.min(k)..k - 5];
    let mean = last.iter().sum::<f64>() / 5.0;
    let spread = last.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max) / mean.abs();
    let mean_before = before.iter().sum::<f64>() / before.len().max(1) as f64;
    let flat = before.is_empty() || mean >= 0.95 * mean_before;
    Ok(if mean > 0.0 && spread <= 0.05 && flat { GrowthRegime::Exponential } else { GrowthRegime::Subexponential })
}

/// The three limits along which path growth is examined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthLimit {
    /// (i) `T = start, start+step, ...` with fixed `dl`.
    FixedDepth { dl: u64, start: u64, step: u64 },
    /// (ii) `dl = start, start+step, ...` with fixed `T`.
    FixedTime { t: u64, start: u64, step: u64 },
    /// (iii) `dl = 1, 2, ...` with `T = ratio * dl`.
    Joint { ratio: u64 },
}

/// `ln total_path_bound` at `samples` points along `limit`.
pub fn limit_curve(limit: GrowthLimit, samples: usize) -> Result<Vec<f64>> {
    (0..samples as u64)
        .map(|i| {
            let (t, dl) = match limit {
                GrowthLimit::FixedDepth { dl, start, step } => (start + i * step, dl),
                GrowthLimit::FixedTime { t, start, step } => (t, start + i * step),
                GrowthLimit::Joint { ratio } => (ratio * (i + 1), i + 1),
            };
            Ok(total_path_bound(t, dl)?.ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        assert_eq!(path_count(0, 0), BigUint::from(1u32));
        assert_eq!(path_count(3, 2), BigUint::from(10u32));
        assert_eq!(path_count(1, 1), BigUint::from(2u32));
        assert_eq!(causal_path_count(3, 2), BigUint::from(3u32));
        assert_eq!(causal_path_count(2, 3), BigUint::zero());
    }

    #[test]
    fn lattice_enumeration() {
        fn walk(a: u64, b: u64) -> u64 {
            if a == 0 || b == 0 {
                return 1;
            }
            walk(a - 1, b) + walk(a, b - 1)
        }
        for a in 0..8 {
            for b in 0..8 {
                assert_eq!(path_count(a, b), BigUint::from(walk(a, b)));
            }
        }
    }

    #[test]
    fn bound_examples() {
        let b = total_path_bound(3, 1).unwrap();
        assert_eq!(b.closed, BigRational::new(20.into(), 3.into()));
        assert_eq!(total_path_bound(1, 0).unwrap().closed, BigRational::from_integer(3.into()));
        assert!(total_path_bound(0, 1).is_err());
    }

    #[test]
    fn log_counts() {
        let (exact, flag) = log_path_count(30, 20);
        assert!(flag);
        assert!((exact - ln_biguint(&path_count(30, 20))).abs() < 1e-12);
        let (approx, flag) = log_path_count(3000, 500);
        assert!(!flag && approx > 0.0);
        let (exact_big, _) = log_path_count(1500, 500);
        let lg = ln_gamma(2001.0) - ln_gamma(1501.0) - ln_gamma(501.0);
        assert!((exact_big - lg).abs() / lg < 1e-10);
    }

    #[test]
    fn regimes() {
        let i = limit_curve(GrowthLimit::FixedDepth { dl: 5, start: 10, step: 10 }, 20).unwrap();
        let ii = limit_curve(GrowthLimit::FixedTime { t: 5, start: 10, step: 10 }, 20).unwrap();
        let iii = limit_curve(GrowthLimit::Joint { ratio: 100 }, 20).unwrap();
        assert_eq!(growth_regime(&i).unwrap(), GrowthRegime::Subexponential);
        assert_eq!(growth_regime(&ii).unwrap(), GrowthRegime::Subexponential);
        assert_eq!(growth_regime(&iii).unwrap(), GrowthRegime::Exponential);
        assert!(growth_regime(&iii[..9]).is_err());
        let line: Vec<f64> = (0..12).map(|i| 0.3 * i as f64).collect();
        assert_eq!(growth_regime(&line).unwrap(), GrowthRegime::Exponential);
    }
}
