//! Dense eigenvalue routines.
//!
//! General matrices go through balancing, Householder reduction to upper
//! Hessenberg form and the Francis double-shift QR iteration. Unlike power
//! iteration this is exact on nilpotent matrices and on spectra whose
//! dominant eigenvalues form a complex pair.

use num_complex::Complex64;

use super::matrix::Matrix;
use crate::error::{LscError, Result};

/// Total QR sweeps allowed per matrix dimension.
pub const ITERATIONS_PER_DIM: usize = 100;

pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(LscError::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![Complex64::new(m[(0, 0)], 0.0)]),
        _ => {}
    }
    let mut a = OneBased::from_matrix(m);
    balance(&mut a);
    hessenberg(&mut a);
    hqr(&mut a)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Dominant eigenpair with right and left eigenvectors.
#[derive(Debug, Clone)]
pub struct DominantEigen {
    pub value: Complex64,
    /// `M x = value * x`.
    pub right: Vec<Complex64>,
    /// `M^T w = value * w`; the left eigenvector is `conj(w)`.
    pub left: Vec<Complex64>,
    /// Another eigenvalue lies within the degeneracy tolerance of `value`.
    pub degenerate: bool,
}

impl DominantEigen {
    /// Gradient of the spectral radius with respect to the matrix entries,
    /// `d rho / d M_ij = Re(conj(lambda) * w_i x_j / (w^T x)) / rho`.
    pub fn radius_gradient(&self) -> Matrix {
        let n = self.right.len();
        let rho = self.value.norm();
        let mut g = Matrix::zeros(n, n);
        if rho == 0.0 {
            return g;
        }
        let denom: Complex64 = self.left.iter().zip(&self.right).map(|(w, x)| w * x).sum();
        let scale = self.value.conj() / denom;
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = (scale * self.left[i] * self.right[j]).re / rho;
            }
        }
        g
    }
}

/// Dominant eigenvalue (largest modulus, ties broken towards non-negative
/// imaginary part) with eigenvectors from shifted inverse iteration.
pub fn dominant_eigen(m: &Matrix, degeneracy_tol: f64) -> Result<DominantEigen> {
    let values = eigenvalues(m)?;
    let n = values.len();
    let mut best = 0;
    for (i, z) in values.iter().enumerate() {
        let (b, zn) = (values[best].norm(), z.norm());
        if zn > b || (zn == b && z.im > values[best].im) {
            best = i;
        }
    }
    let value = values[best];
    let degenerate = values
        .iter()
        .enumerate()
        .any(|(i, z)| i != best && (z - value).norm() <= degeneracy_tol * value.norm().max(1.0));
    let right = inverse_iteration(m, value, false)?;
    let left = inverse_iteration(m, value, true)?;
    debug_assert_eq!(right.len(), n);
    Ok(DominantEigen { value, right, left, degenerate })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(LscError::Dimension("symmetric eigenvalues need a square matrix".into()));
    }
    let n = m.rows();
    let mut a = m.clone();
    let cap = ITERATIONS_PER_DIM * n.max(1);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for _sweep in 0..cap {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= 1e-15 * scale * n as f64 {
            let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            ev.sort_by(f64::total_cmp);
            return Ok(ev);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(LscError::NoConvergence { iterations: cap })
}

/// Square matrix with 1-based indexing, which keeps the QR sweep readable.
struct OneBased {
    n: usize,
    data: Vec<f64>,
}

impl OneBased {
    fn from_matrix(m: &Matrix) -> Self {
        let n = m.rows();
        let mut data = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                data[(i + 1) * (n + 1) + j + 1] = m[(i, j)];
            }
        }
        Self { n, data }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.n + 1) + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.n + 1) + j] = v;
    }

    #[inline]
    fn sub(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.n + 1) + j] -= v;
    }
}

/// Similarity scaling by powers of two so row and column norms are comparable.
fn balance(a: &mut OneBased) {
    const RADIX: f64 = 2.0;
    let n = a.n;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 1..=n {
                if j != i {
                    c += a.at(j, i).abs();
                    r += a.at(i, j).abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        a.set(i, j, a.at(i, j) * g);
                    }
                    for j in 1..=n {
                        a.set(j, i, a.at(j, i) * f);
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form.
fn hessenberg(a: &mut OneBased) {
    let n = a.n;
    if n < 3 {
        return;
    }
    for k in 1..=n - 2 {
        let norm: f64 = (k + 1..=n).map(|i| a.at(i, k).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a.at(k + 1, k);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n + 1];
        v[k + 1] = x0 - alpha;
        for i in k + 2..=n {
            v[i] = a.at(i, k);
        }
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- H A
        for j in 1..=n {
            let s: f64 = (k + 1..=n).map(|i| v[i] * a.at(i, j)).sum::<f64>() * 2.0 / vnorm2;
            for i in k + 1..=n {
                a.sub(i, j, s * v[i]);
            }
        }
        // A <- A H
        for i in 1..=n {
            let s: f64 = (k + 1..=n).map(|j| a.at(i, j) * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k + 1..=n {
                a.sub(i, j, s * v[j]);
            }
        }
        for i in k + 2..=n {
            a.set(i, k, 0.0);
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hqr(a: &mut OneBased) -> Result<Vec<Complex64>> {
    let n = a.n;
    let cap = ITERATIONS_PER_DIM * n;
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a.at(i, j).abs();
        }
    }
    let mut total = 0usize;
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 1 {
        let mut its = 0usize;
        let mut l;
        loop {
            l = nn;
            while l >= 2 {
                let mut s = a.at(l - 1, l - 1).abs() + a.at(l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a.at(l, l - 1).abs() + s == s {
                    a.set(l, l - 1, 0.0);
                    break;
                }
                l -= 1;
            }
            let mut x = a.at(nn, nn);
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                let mut y = a.at(nn - 1, nn - 1);
                let mut w = a.at(nn, nn - 1) * a.at(nn - 1, nn);
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn = nn.saturating_sub(2);
                } else {
                    if total >= cap {
                        return Err(LscError::NoConvergence { iterations: total });
                    }
                    if its > 0 && its % 10 == 0 {
                        // exceptional shift
                        t += x;
                        for i in 1..=nn {
                            a.sub(i, i, x);
                        }
                        let s = a.at(nn, nn - 1).abs() + a.at(nn - 1, nn - 2).abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    total += 1;
                    let mut m = nn - 2;
                    loop {
                        let z = a.at(m, m);
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / a.at(m + 1, m) + a.at(m, m + 1);
                        q = a.at(m + 1, m + 1) - z - r - s;
                        r = a.at(m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a.at(m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a.at(m - 1, m - 1).abs() + z.abs() + a.at(m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a.set(i, i - 2, 0.0);
                        if i != m + 2 {
                            a.set(i, i - 3, 0.0);
                        }
                    }
                    let mut k = m;
                    while k + 1 <= nn {
                        if k != m {
                            p = a.at(k, k - 1);
                            q = a.at(k + 1, k - 1);
                            r = 0.0;
                            if k != nn - 1 {
                                r = a.at(k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a.set(k, k - 1, -a.at(k, k - 1));
                                }
                            } else {
                                a.set(k, k - 1, -s * x);
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            let z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a.at(k, j) + q * a.at(k + 1, j);
                                if k != nn - 1 {
                                    p += r * a.at(k + 2, j);
                                    a.sub(k + 2, j, p * z);
                                }
                                a.sub(k + 1, j, p * y);
                                a.sub(k, j, p * x);
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a.at(i, k) + y * a.at(i, k + 1);
                                if k != nn - 1 {
                                    p += z * a.at(i, k + 2);
                                    a.sub(i, k + 2, p * r);
                                }
                                a.sub(i, k + 1, p * q);
                                a.sub(i, k, p);
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn == 0 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// Inverse iteration for the eigenvector of `m` (or `m^T`) at `lambda`.
fn inverse_iteration(m: &Matrix, lambda: Complex64, transpose: bool) -> Result<Vec<Complex64>> {
    let n = m.rows();
    let shift = lambda + Complex64::new(1e-10 * lambda.norm().max(1e-3), 0.0);
    let mut a: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if transpose { m[(j, i)] } else { m[(i, j)] };
            a[i * n + j] = Complex64::new(v, 0.0);
        }
        a[i * n + i] -= shift;
    }
    let lu = ComplexLu::factor(a, n);
    let mut x: Vec<Complex64> =
        (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64 / n as f64, 0.0)).collect();
    for _ in 0..4 {
        x = lu.solve(&x);
        let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(LscError::NonFinite("inverse iteration diverged".into()));
        }
        x.iter_mut().for_each(|z| *z /= norm);
    }
    Ok(x)
}

struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    fn factor(mut a: Vec<Complex64>, n: usize) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        let tiny = 1e-300;
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[i * n + k].norm() > a[piv * n + k].norm() {
                    piv = i;
                }
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            if a[k * n + k].norm() < tiny {
                a[k * n + k] = Complex64::new(tiny, 0.0);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                for j in k + 1..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= f * akj;
                }
            }
        }
        Self { n, lu: a, perm }
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                let yj = y[j];
                y[i] -= l * yj;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                let yj = y[j];
                y[i] -= u * yj;
            }
            y[i] /= self.lu[i * n + i];
        }
        y
    }
}
