use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigenvalues;
use super::matrix::Matrix;
use crate::error::{LscError, Result};

/// Vector p-norm inducing a matrix norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    One,
    Two,
    Inf,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::One, NormKind::Two, NormKind::Inf];

    pub fn from_p(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(NormKind::One)
        } else if p == 2.0 {
            Ok(NormKind::Two)
        } else if p.is_infinite() && p > 0.0 {
            Ok(NormKind::Inf)
        } else {
            Err(LscError::Argument(format!("unsupported norm p = {p}")))
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = LscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(NormKind::One),
            "2" | "two" | "spectral" => Ok(NormKind::Two),
            "inf" | "infinity" => Ok(NormKind::Inf),
            other => Err(LscError::Argument(format!("unsupported norm '{other}'"))),
        }
    }
}

pub fn induced_norm(m: &Matrix, p: NormKind) -> Result<f64> {
    Ok(match p {
        NormKind::One => (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| m[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Inf => (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Two => {
            if m.is_empty() {
                return Ok(0.0);
            }
            let gram = if m.rows() >= m.cols() {
                m.transpose().matmul(m)?
            } else {
                m.matmul(&m.transpose())?
            };
            let top = symmetric_eigenvalues(&gram)?.last().copied().unwrap_or(0.0);
            top.max(0.0).sqrt()
        }
    })
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}
