//! Small dense kernels: Cholesky, Jacobi eigen-decomposition, pseudo-solves.
//!
//! Matrices are row-major `n x n` slices. These back the per-column SPAI Gram
//! solves and the per-cell DOF inversions, where `n` stays below a few dozen.

use crate::error::{FeecError, Result};
use crate::scalar::Scalar;

/// Overwrites the lower triangle of `a` with its Cholesky factor `L`.
pub fn cholesky_in_place<T: Scalar>(a: &mut [T], n: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return Err(FeecError::NotPositiveDefinite {
                row: j,
                pivot: d.as_f64(),
            });
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the factor from [`cholesky_in_place`].
pub fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves a symmetric positive-definite system, returning `None` when the
/// factorization breaks down.
pub fn spd_solve<T: Scalar>(a: &[T], n: usize, b: &[T]) -> Option<Vec<T>> {
    let mut l = a.to_vec();
    cholesky_in_place(&mut l, n).ok()?;
    let mut x = b.to_vec();
    cholesky_solve(&l, n, &mut x);
    Some(x)
}

/// Gaussian elimination with partial pivoting. Returns `None` if singular.
pub fn lu_solve<T: Scalar>(a: &[T], n: usize, b: &[T]) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            m[i * n + col]
                .abs()
                .partial_cmp(&m[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[piv * n + col] == T::zero() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        let d = m[col * n + col];
        for i in (col + 1)..n {
            let f = m[i * n + col] / d;
            if f != T::zero() {
                for k in col..n {
                    let v = m[col * n + k];
                    m[i * n + k] -= f * v;
                }
                let v = x[col];
                x[i] -= f * v;
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= m[i * n + k] * x[k];
        }
        x[i] = s / m[i * n + i];
    }
    Some(x)
}

/// Inverse of a general square matrix (row-major), via column solves.
pub fn invert<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut inv = vec![T::zero(); n * n];
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = lu_solve(a, n, &e)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvector `k` stored in
/// column `k` of the row-major output.
pub fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        let scale: T = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum::<T>() + off;
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// Minimum-norm solution of a symmetric positive semi-definite system,
/// discarding eigenvalues below `rel_threshold * trace(a)`.
pub fn pseudo_solve<T: Scalar>(a: &[T], n: usize, b: &[T], rel_threshold: T) -> Vec<T> {
    let trace: T = (0..n).map(|i| a[i * n + i]).sum();
    let cutoff = rel_threshold * trace.abs();
    let (vals, vecs) = symmetric_eigen(a, n);
    let mut x = vec![T::zero(); n];
    for k in 0..n {
        if vals[k] <= cutoff {
            continue;
        }
        let proj: T = (0..n).map(|i| vecs[i * n + k] * b[i]).sum();
        let coef = proj / vals[k];
        for i in 0..n {
            x[i] += coef * vecs[i * n + k];
        }
    }
    x
}
