//! Small dense solvers for the Newton and weighted least-squares steps.

use crate::error::{Error, Result};
use crate::num::Real;

/// Solves `a x = b` for a symmetric positive definite `a` (row-major, n×n).
pub fn cholesky_solve<T: Real>(a: &[T], b: &[T], n: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() || !s.is_finite() {
                    return Err(Error::Singular);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting for a general square system.
pub fn lu_solve<T: Real>(a: &[T], b: &[T], n: usize) -> Result<Vec<T>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::from_count(n.max(1));
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() <= tiny {
            return Err(Error::Singular);
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                let v = m[col * n + c];
                m[r * n + c] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for c in i + 1..n {
            s -= m[i * n + c] * x[c];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix via repeated Cholesky solves.
pub fn spd_inverse<T: Real>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut inv = vec![T::zero(); n * n];
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(a, &e, n)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}
