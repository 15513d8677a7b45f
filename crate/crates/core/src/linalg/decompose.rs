use super::matrix::Matrix;
use crate::error::{LscError, Result};

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(LscError::Dimension(format!(
            "determinant needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[(i, k)].abs() > a[(piv, k)].abs() {
                piv = i;
            }
        }
        if a[(piv, k)] == 0.0 {
            return Ok(0.0);
        }
        if piv != k {
            for j in 0..n {
                let tmp = a[(k, j)];
                a[(k, j)] = a[(piv, j)];
                a[(piv, j)] = tmp;
            }
            det = -det;
        }
        let d = a[(k, k)];
        det *= d;
        for i in k + 1..n {
            let f = a[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..n {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    Ok(det)
}

/// Householder QR of a square matrix, returned as `(Q, R)`.
pub fn qr(m: &Matrix) -> Result<(Matrix, Matrix)> {
    if !m.is_square() {
        return Err(LscError::Dimension("qr expects a square matrix".into()));
    }
    let n = m.rows();
    let mut r = m.clone();
    let mut q = Matrix::identity(n);
    for k in 0..n.saturating_sub(1) {
        let norm: f64 = (k..n).map(|i| r[(i, k)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        v[k] = r[(k, k)] - alpha;
        for i in k + 1..n {
            v[i] = r[(i, k)];
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for j in 0..n {
            let s = 2.0 * (k..n).map(|i| v[i] * r[(i, j)]).sum::<f64>() / vv;
            for i in k..n {
                r[(i, j)] -= s * v[i];
            }
        }
        // Q <- Q H
        for i in 0..n {
            let s = 2.0 * (k..n).map(|j| q[(i, j)] * v[j]).sum::<f64>() / vv;
            for j in k..n {
                q[(i, j)] -= s * v[j];
            }
        }
        for i in k + 1..n {
            r[(i, k)] = 0.0;
        }
    }
    Ok((q, r))
}
