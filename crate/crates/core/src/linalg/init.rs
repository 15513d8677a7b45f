use serde::{Deserialize, Serialize};

use super::decompose::qr;
use super::matrix::Matrix;
use super::rng::RandomSource;
use crate::error::{LscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    GlorotUniform,
    HeNormal,
    Orthogonal,
    Zeros,
    /// Gaussian conditioned on positive draws.
    TruncatedGaussian { mean: f64, std: f64 },
    CenteredGaussian { std: f64 },
}

impl InitScheme {
    /// Truncated Gaussian with std = 3 mean / 7, used for ALIF rate parameters.
    pub fn rate_parameter(mean: f64) -> Self {
        InitScheme::TruncatedGaussian { mean, std: 3.0 * mean / 7.0 }
    }
}

pub fn init_matrix(scheme: InitScheme, rows: usize, cols: usize, rng: &mut RandomSource) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(LscError::Dimension(format!("cannot initialize a {rows}x{cols} matrix")));
    }
    let n = rows * cols;
    let data: Vec<f64> = match scheme {
        InitScheme::GlorotUniform => {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            (0..n).map(|_| rng.uniform_range(-limit, limit)).collect()
        }
        InitScheme::HeNormal => {
            let std = (2.0 / cols as f64).sqrt();
            (0..n).map(|_| std * rng.normal()).collect()
        }
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::CenteredGaussian { std } => (0..n).map(|_| std * rng.normal()).collect(),
        InitScheme::TruncatedGaussian { mean, std } => {
            if !(mean > 0.0 || std > 0.0) {
                return Err(LscError::Argument("truncated Gaussian needs positive mass".into()));
            }
            (0..n)
                .map(|_| loop {
                    let v = mean + std * rng.normal();
                    if v > 0.0 {
                        break v;
                    }
                })
                .collect()
        }
        InitScheme::Orthogonal => {
            if rows != cols {
                return Err(LscError::Dimension(format!(
                    "orthogonal initialization needs a square shape, got {rows}x{cols}"
                )));
            }
            let g = Matrix::from_vec_unchecked(rows, cols, (0..n).map(|_| rng.normal()).collect());
            let (mut q, r) = qr(&g)?;
            for j in 0..cols {
                if r[(j, j)] < 0.0 {
                    for i in 0..rows {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            return Ok(q);
        }
    };
    Ok(Matrix::from_vec_unchecked(rows, cols, data))
}

/// `A^T A` for a standard Gaussian `A`.
pub fn random_psd(n: usize, rng: &mut RandomSource) -> Result<Matrix> {
    if n == 0 {
        return Err(LscError::Dimension("random_psd needs n >= 1".into()));
    }
    let a = Matrix::from_vec_unchecked(n, n, (0..n * n).map(|_| rng.normal()).collect());
    let mut p = a.transpose().matmul(&a)?;
    // exact symmetry regardless of summation order
    for i in 0..n {
        for j in i + 1..n {
            p[(j, i)] = p[(i, j)];
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{determinant, spectral_radius, symmetric_eigenvalues};

    fn variance(m: &Matrix) -> f64 {
        let n = m.len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = RandomSource::new(4);
        let q = init_matrix(InitScheme::Orthogonal, 16, 16, &mut rng).unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.max_abs_diff(&Matrix::identity(16)).unwrap() < 1e-10);
        assert!((spectral_radius(&q).unwrap() - 1.0).abs() < 1e-8);
        assert!(init_matrix(InitScheme::Orthogonal, 3, 4, &mut rng).is_err());
    }

    #[test]
    fn variances() {
        let mut rng = RandomSource::new(8);
        let g = init_matrix(InitScheme::GlorotUniform, 64, 64, &mut rng).unwrap();
        assert!((variance(&g) * 64.0 - 1.0).abs() < 0.1);
        let h = init_matrix(InitScheme::HeNormal, 64, 64, &mut rng).unwrap();
        assert!((variance(&h) * 32.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn truncated_is_positive() {
        let mut rng = RandomSource::new(1);
        let m = init_matrix(InitScheme::rate_parameter(0.1), 50, 20, &mut rng).unwrap();
        assert!(m.as_slice().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn psd_outputs() {
        let mut rng = RandomSource::new(5);
        let p = random_psd(3, &mut rng).unwrap();
        assert!(p.max_abs_diff(&p.transpose()).unwrap() < 1e-12);
        assert!(determinant(&p).unwrap() >= 0.0);
        assert!(symmetric_eigenvalues(&p).unwrap()[0] >= -1e-10);
    }

    #[test]
    fn seeded_constructors_repeat() {
        for scheme in [InitScheme::GlorotUniform, InitScheme::HeNormal, InitScheme::Orthogonal] {
            let a = init_matrix(scheme, 5, 5, &mut RandomSource::new(3)).unwrap();
            let b = init_matrix(scheme, 5, 5, &mut RandomSource::new(3)).unwrap();
            assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
