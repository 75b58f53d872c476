//! Exact application of `M^{-1}` for sparse SPD matrices: envelope Cholesky
//! under reverse Cuthill-McKee ordering, and a conjugate-gradient alternative.

use crate::error::{FeecError, Result};
use crate::scalar::{axpy, dot, norm2, Scalar};
use crate::sparse::{LinearOperator, SparseOperator};
use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of the (symmetrized) graph of `a`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee<T: Scalar>(a: &SparseOperator<T>) -> Vec<usize> {
    let n = a.rows();
    let at = a.transpose();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = a.row(i).0.iter().chain(at.row(i).0).copied().filter(|&j| j != i).collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (last node of BFS, eccentricity)
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut last = start;
        while let Some(u) = q.pop_front() {
            last = u;
            for &v in &adj[u] {
                if dist[v] == usize::MAX && !visited[v] {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (last, dist[last])
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start node
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let (far, e) = bfs_levels(start, &visited);
            if e <= ecc {
                break;
            }
            ecc = e;
            start = far;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (degree[v], v));
            for v in nb {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor of a permuted SPD matrix.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky<T> {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> EnvelopeCholesky<T> {
    pub fn factor(a: &SparseOperator<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(FeecError::DimensionMismatch { expected: n, found: a.cols() });
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // first column in the lower envelope of each permuted row
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for &oj in a.row(old).0 {
                let j = inv[oj];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for i in 0..n {
            row_start.push(row_start[i] + (i - first[i] + 1));
        }
        let mut data = vec![T::zero(); row_start[n]];
        for old in 0..n {
            let i = inv[old];
            let (cols, vals) = a.row(old);
            for (&oj, &v) in cols.iter().zip(vals) {
                let j = inv[oj];
                if j <= i {
                    data[row_start[i] + (j - first[i])] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let base_i = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let base_j = row_start[j];
                let k0 = fi.max(fj);
                let mut s = data[base_i + (j - fi)];
                for k in k0..j {
                    s -= data[base_i + (k - fi)] * data[base_j + (k - fj)];
                }
                data[base_i + (j - fi)] = s / data[base_j + (j - fj)];
            }
            let mut d = data[base_i + (i - fi)];
            for k in fi..i {
                let l = data[base_i + (k - fi)];
                d -= l * l;
            }
            if !(d > T::zero()) {
                return Err(FeecError::NotPositiveDefinite { row: perm[i], pivot: d.as_f64() });
            }
            data[base_i + (i - fi)] = d.sqrt();
        }
        Ok(EnvelopeCholesky { n, perm, first, row_start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the envelope factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let base = self.row_start[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[base + (k - fi)] * y[k];
            }
            y[i] = s / self.data[base + (i - fi)];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let base = self.row_start[i];
            y[i] /= self.data[base + (i - fi)];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[base + (k - fi)] * yi;
            }
        }
        let mut x = vec![T::zero(); n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

impl<T: Scalar> LinearOperator<T> for EnvelopeCholesky<T> {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[T], y: &mut [T]) {
        y.copy_from_slice(&self.solve(x));
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    pub relative_residual: T,
}

/// Jacobi-preconditioned conjugate gradients for SPD `a`.
pub fn conjugate_gradient<T: Scalar>(
    a: &SparseOperator<T>,
    b: &[T],
    rel_tol: T,
    max_iter: usize,
) -> CgOutcome<T> {
    let n = b.len();
    let diag = a.diagonal();
    let precond = |r: &[T]| -> Vec<T> {
        r.iter()
            .zip(&diag)
            .map(|(&ri, &d)| if d != T::zero() { ri / d } else { ri })
            .collect()
    };
    let bnorm = norm2(b);
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return CgOutcome { solution: x, iterations: 0, relative_residual: T::zero() };
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    let mut rel = T::one();
    while it < max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        it += 1;
        rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome { solution: x, iterations: it, relative_residual: rel }
}

/// `M^{-1}` applied by conjugate gradients to a fixed relative tolerance.
#[derive(Clone, Debug)]
pub struct CgInverse<T> {
    matrix: SparseOperator<T>,
    rel_tol: T,
    max_iter: usize,
}

impl<T: Scalar> CgInverse<T> {
    pub fn new(matrix: SparseOperator<T>, rel_tol: T) -> Self {
        let max_iter = 10 * matrix.rows().max(10);
        CgInverse { matrix, rel_tol, max_iter }
    }
}

impl<T: Scalar> LinearOperator<T> for CgInverse<T> {
    fn nrows(&self) -> usize {
        self.matrix.rows()
    }
    fn ncols(&self) -> usize {
        self.matrix.cols()
    }
    fn apply_into(&self, x: &[T], y: &mut [T]) {
        let out = conjugate_gradient(&self.matrix, x, self.rel_tol, self.max_iter);
        y.copy_from_slice(&out.solution);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_ring(n: usize) -> SparseOperator<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            t.push((i, (i + 1) % n, -1.0));
            t.push((i, (i + n - 1) % n, -1.0));
        }
        SparseOperator::from_triplets(n, n, t)
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_ring(17);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn envelope_cholesky_matches_cg() {
        let a = laplacian_ring(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let x = f.solve(&b);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-13);
        }
        let cg = conjugate_gradient(&a, &b, 1e-14, 1000);
        for (xi, yi) in x.iter().zip(&cg.solution) {
            assert!((xi - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_cholesky_rejects_indefinite() {
        let a = SparseOperator::<f64>::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(EnvelopeCholesky::factor(&a).is_err());
    }
}
