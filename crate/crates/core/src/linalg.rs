//! Small dense linear algebra: LU with partial pivoting and an eigenvalue
//! solver (Householder reduction to Hessenberg form followed by Francis
//! double-shift QR). Sized for kinetic Jacobians of a few dozen species.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (zero pivot in column {0})")]
    Singular(usize),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("QR iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// LU factors of a square matrix, `P A = L U`, stored packed.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl Lu {
    /// Factors a row-major `n x n` matrix.
    pub fn factor(n: usize, a: &[f64]) -> Result<Self, LinalgError> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut pivots = vec![0; n];
        for k in 0..n {
            let (p, max) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !max.is_finite() {
                return Err(LinalgError::NonFinite);
            }
            if max == 0.0 {
                return Err(LinalgError::Singular(k));
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, pivots })
    }

    pub fn factor_array(a: ArrayView2<f64>) -> Result<Self, LinalgError> {
        let (r, c) = a.dim();
        if r != c {
            return Err(LinalgError::NotSquare(r, c));
        }
        let data: Vec<f64> = a.iter().copied().collect();
        Self::factor(r, &data)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
        }
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * b[j];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Relative deflation threshold for negligible subdiagonal entries.
pub const DEFLATION_TOL: f64 = 1e-12;

/// All eigenvalues of a real square matrix.
///
/// Complex eigenvalues come out as conjugate pairs. The order follows
/// deflation (bottom of the Hessenberg form first) and carries no meaning.
pub fn eigenvalues(a: ArrayView2<f64>) -> Result<Vec<Complex64>, LinalgError> {
    let (n, c) = a.dim();
    if n != c {
        return Err(LinalgError::NotSquare(n, c));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut h = a.to_owned();
    reduce_to_hessenberg(&mut h);
    hessenberg_qr(&mut h, 100 * n.max(1))
}

/// Householder reduction to upper Hessenberg form (similarity transform).
pub fn reduce_to_hessenberg(a: &mut Array2<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let alpha_sq: f64 = (k + 1..n).map(|i| a[[i, k]] * a[[i, k]]).sum();
        let tail_sq: f64 = (k + 2..n).map(|i| a[[i, k]] * a[[i, k]]).sum();
        if tail_sq == 0.0 {
            continue;
        }
        let x0 = a[[k + 1, k]];
        let alpha = -x0.signum() * alpha_sq.sqrt();
        v.iter_mut().for_each(|x| *x = 0.0);
        v[k + 1] = x0 - alpha;
        for i in k + 2..n {
            v[i] = a[[i, k]];
        }
        let v_norm_sq: f64 = v[k + 1..].iter().map(|x| x * x).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        // A <- (I - 2 v v^T / |v|^2) A (I - 2 v v^T / |v|^2)
        for j in 0..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[[i, j]]).sum::<f64>() * 2.0 / v_norm_sq;
            for i in k + 1..n {
                a[[i, j]] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[[i, j]] * v[j]).sum::<f64>() * 2.0 / v_norm_sq;
            for j in k + 1..n {
                a[[i, j]] -= s * v[j];
            }
        }
        for i in k + 2..n {
            a[[i, k]] = 0.0;
        }
        a[[k + 1, k]] = alpha;
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
fn hessenberg_qr(a: &mut Array2<f64>, max_sweeps: usize) -> Result<Vec<Complex64>, LinalgError> {
    let n = a.nrows();
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(eig);
    }
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[[i, j]].abs();
        }
    }
    let mut sweeps = 0usize;
    let mut shift_total = 0.0;
    // `nn` is one past the last row of the active block.
    let mut nn = n;
    while nn >= 1 {
        let mut its = 0;
        loop {
            let top = nn - 1;
            // Find the start `l` of the unreduced block ending at `top`.
            let mut l = top;
            while l >= 1 {
                let mut s = a[[l - 1, l - 1]].abs() + a[[l, l]].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[[l, l - 1]].abs() <= DEFLATION_TOL * s {
                    a[[l, l - 1]] = 0.0;
                    break;
                }
                l -= 1;
            }
            let x = a[[top, top]];
            if l == top {
                eig[top] = Complex64::new(x + shift_total, 0.0);
                nn -= 1;
                break;
            }
            let y = a[[top - 1, top - 1]];
            let w = a[[top, top - 1]] * a[[top - 1, top]];
            if l + 1 == top {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + shift_total;
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    let hi = x + z;
                    let lo = if z != 0.0 { x - w / z } else { hi };
                    eig[top - 1] = Complex64::new(hi, 0.0);
                    eig[top] = Complex64::new(lo, 0.0);
                } else {
                    eig[top - 1] = Complex64::new(x + p, z);
                    eig[top] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(LinalgError::NoConvergence(max_sweeps));
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                shift_total += x;
                for i in 0..=top {
                    a[[i, i]] -= x;
                }
                let s = a[[top, top - 1]].abs() + a[[top - 1, top - 2]].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let (mut p, mut q, mut r);
            let mut m = top - 2;
            loop {
                let z = a[[m, m]];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[[m + 1, m]] + a[[m, m + 1]];
                q = a[[m + 1, m + 1]] - z - rr - ss;
                r = a[[m + 2, m + 1]];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[[m, m - 1]].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[[m - 1, m - 1]].abs() + z.abs() + a[[m + 1, m + 1]].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=top {
                a[[i, i - 2]] = 0.0;
                if i != m + 2 {
                    a[[i, i - 3]] = 0.0;
                }
            }
            let mut k = m;
            while k < top {
                if k != m {
                    p = a[[k, k - 1]];
                    q = a[[k + 1, k - 1]];
                    r = if k != top - 1 { a[[k + 2, k - 1]] } else { 0.0 };
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
                            a[[k, k - 1]] = -a[[k, k - 1]];
                        }
                    } else {
                        a[[k, k - 1]] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=top {
                        let mut pp = a[[k, j]] + q * a[[k + 1, j]];
                        if k != top - 1 {
                            pp += r * a[[k + 2, j]];
                            a[[k + 2, j]] -= pp * z;
                        }
                        a[[k + 1, j]] -= pp * y;
                        a[[k, j]] -= pp * x;
                    }
                    let mmin = top.min(k + 3);
                    for i in l..=mmin {
                        let mut pp = x * a[[i, k]] + y * a[[i, k + 1]];
                        if k != top - 1 {
                            pp += z * a[[i, k + 2]];
                            a[[i, k + 2]] -= pp * r;
                        }
                        a[[i, k + 1]] -= pp * q;
                        a[[i, k]] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(eig)
}
