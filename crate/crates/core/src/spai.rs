//! Sparse approximate inverses by column-wise Frobenius least squares.
//!
//! For every column `l` with index set `I`, the entries `q(I)` minimize
//! `|M q - e_l|^2`, which leads to the normal equations
//! `M(:,I)^T M(:,I) q(I) = M(:,I)^T e_l`.

use crate::dense;
use crate::error::{FeecError, Result};
use crate::scalar::Scalar;
use crate::sparse::SparseOperator;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Diagonal,
    M1,
    M1sq,
    Dense,
    Custom,
}

impl PatternKind {
    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Diagonal => "diagonal",
            PatternKind::M1 => "m1",
            PatternKind::M1sq => "m1sq",
            PatternKind::Dense => "dense",
            PatternKind::Custom => "custom",
        }
    }

    /// The four standard kinds, sparsest first.
    pub fn standard() -> [PatternKind; 4] {
        [PatternKind::Diagonal, PatternKind::M1, PatternKind::M1sq, PatternKind::Dense]
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = FeecError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diagonal" | "diag" => Ok(PatternKind::Diagonal),
            "m1" | "s(m1)" => Ok(PatternKind::M1),
            "m1sq" | "s(m1^2)" => Ok(PatternKind::M1sq),
            "dense" => Ok(PatternKind::Dense),
            "custom" => Ok(PatternKind::Custom),
            _ => Err(FeecError::Parse(format!("unknown pattern `{s}`"))),
        }
    }
}

/// Per-column index sets of an approximate inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    pub n: usize,
    pub kind: PatternKind,
    columns: Vec<Vec<usize>>,
}

impl SparsityPattern {
    pub fn custom(n: usize, mut columns: Vec<Vec<usize>>) -> Result<Self> {
        if columns.len() != n {
            return Err(FeecError::DimensionMismatch { expected: n, found: columns.len() });
        }
        for (l, c) in columns.iter_mut().enumerate() {
            c.sort_unstable();
            c.dedup();
            if c.is_empty() {
                return Err(FeecError::InvalidParameter(format!("pattern column {l} is empty")));
            }
            if *c.last().unwrap() >= n {
                return Err(FeecError::InvalidParameter(format!("pattern column {l} has an index out of range")));
            }
        }
        Ok(SparsityPattern { n, kind: PatternKind::Custom, columns })
    }

    pub fn column(&self, l: usize) -> &[usize] {
        &self.columns[l]
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// True if every column of `self` is contained in the matching column of `other`.
    pub fn is_subset_of(&self, other: &SparsityPattern) -> bool {
        self.n == other.n
            && self.columns.iter().zip(&other.columns).all(|(a, b)| a.iter().all(|i| b.binary_search(i).is_ok()))
    }
}

fn column_structure<T: Scalar>(m: &SparseOperator<T>) -> Vec<Vec<usize>> {
    let mt = m.transpose();
    (0..m.cols())
        .map(|l| {
            let mut c = mt.row(l).0.to_vec();
            if let Err(pos) = c.binary_search(&l) {
                c.insert(pos, l);
            }
            c
        })
        .collect()
}

/// Pattern of the given kind derived from the structure of `m`.
pub fn make_pattern<T: Scalar>(m: &SparseOperator<T>, kind: PatternKind) -> Result<SparsityPattern> {
    let n = m.rows();
    if m.cols() != n {
        return Err(FeecError::DimensionMismatch { expected: n, found: m.cols() });
    }
    let columns = match kind {
        PatternKind::Diagonal => (0..n).map(|l| vec![l]).collect(),
        PatternKind::M1 => column_structure(m),
        PatternKind::M1sq => {
            let s = column_structure(m);
            s.par_iter()
                .map(|col| {
                    let mut mark: Vec<usize> = col.iter().flat_map(|&k| s[k].iter().copied()).collect();
                    mark.sort_unstable();
                    mark.dedup();
                    mark
                })
                .collect()
        }
        PatternKind::Dense => (0..n).map(|_| (0..n).collect()).collect(),
        PatternKind::Custom => {
            return Err(FeecError::InvalidParameter("custom patterns are built with SparsityPattern::custom".into()))
        }
    };
    Ok(SparsityPattern { n, kind, columns })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GramSolver {
    /// Cholesky factorization of each Gram matrix.
    Cholesky,
    /// Conjugate gradients on each Gram matrix to a relative tolerance.
    ConjugateGradient { rel_tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaiOptions {
    pub solver: GramSolver,
    /// Eigenvalues below this multiple of the Gram trace are discarded in the
    /// pseudo-solve fallback.
    pub pseudo_threshold: f64,
}

impl Default for SpaiOptions {
    fn default() -> Self {
        SpaiOptions { solver: GramSolver::Cholesky, pseudo_threshold: 1e-12 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpaiReport {
    pub pattern: PatternKind,
    pub n: usize,
    pub frobenius_residual: f64,
    pub avg_nnz_per_row: f64,
    pub max_column_residual: f64,
    pub wall_time_seconds: f64,
    /// Columns whose Gram matrix was singular and used the pseudo-solve.
    pub fallback_columns: Vec<usize>,
}

struct ColumnResult<T> {
    entries: Vec<(usize, T)>,
    residual_sq: T,
    fallback: bool,
}

fn sparse_dot<T: Scalar>(a: (&[usize], &[T]), b: (&[usize], &[T])) -> T {
    let (mut i, mut j) = (0, 0);
    let mut s = T::zero();
    while i < a.0.len() && j < b.0.len() {
        match a.0[i].cmp(&b.0[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a.1[i] * b.1[j];
                i += 1;
                j += 1;
            }
        }
    }
    s
}

fn dense_cg<T: Scalar>(g: &[T], n: usize, b: &[T], rel_tol: T) -> Vec<T> {
    let matvec = |x: &[T]| -> Vec<T> { (0..n).map(|i| (0..n).map(|k| g[i * n + k] * x[k]).sum()).collect() };
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr: T = r.iter().map(|v| *v * *v).sum();
    let bnorm = rr.sqrt();
    if bnorm == T::zero() {
        return x;
    }
    for _ in 0..(10 * n).max(50) {
        let ap = matvec(&p);
        let pap: T = p.iter().zip(&ap).map(|(a, b)| *a * *b).sum();
        if pap <= T::zero() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: T = r.iter().map(|v| *v * *v).sum();
        if rr_new.sqrt() <= rel_tol * bnorm {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}

/// Approximate inverse with default options (Cholesky Gram solves).
pub fn spai_approximate_inverse<T: Scalar>(m: &SparseOperator<T>, pattern: &SparsityPattern) -> Result<(SparseOperator<T>, SpaiReport)> {
    spai_with_options(m, pattern, &SpaiOptions::default())
}

pub fn spai_with_options<T: Scalar>(
    m: &SparseOperator<T>,
    pattern: &SparsityPattern,
    options: &SpaiOptions,
) -> Result<(SparseOperator<T>, SpaiReport)> {
    let n = m.rows();
    if m.cols() != n || pattern.n != n {
        return Err(FeecError::DimensionMismatch { expected: n, found: pattern.n });
    }
    let start = Instant::now();
    let mt = m.transpose();
    let threshold = T::lit(options.pseudo_threshold);
    let solve_column = |l: usize| -> Result<ColumnResult<T>> {
        let idx = pattern.column(l);
        if idx.is_empty() {
            return Err(FeecError::InvalidParameter(format!("pattern column {l} is empty")));
        }
        let k = idx.len();
        let mut gram = vec![T::zero(); k * k];
        for a in 0..k {
            let ca = mt.row(idx[a]);
            for b in a..k {
                let v = sparse_dot(ca, mt.row(idx[b]));
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        let rhs: Vec<T> = idx.iter().map(|&j| m.get(l, j)).collect();
        let (q, fallback) = match options.solver {
            GramSolver::Cholesky => match dense::spd_solve(&gram, k, &rhs) {
                Some(q) => (q, false),
                None => (dense::pseudo_solve(&gram, k, &rhs, threshold), true),
            },
            GramSolver::ConjugateGradient { rel_tol } => (dense_cg(&gram, k, &rhs, T::lit(rel_tol)), false),
        };
        // residual M q - e_l, accumulated densely over touched rows
        let mut acc: std::collections::BTreeMap<usize, T> = std::collections::BTreeMap::new();
        for (&j, &qj) in idx.iter().zip(&q) {
            let (rows, vals) = mt.row(j);
            for (&i, &v) in rows.iter().zip(vals) {
                *acc.entry(i).or_insert(T::zero()) += v * qj;
            }
        }
        *acc.entry(l).or_insert(T::zero()) -= T::one();
        let residual_sq = acc.values().map(|v| *v * *v).sum();
        Ok(ColumnResult { entries: idx.iter().copied().zip(q).collect(), residual_sq, fallback })
    };
    let results: Vec<ColumnResult<T>> = (0..n).into_par_iter().map(solve_column).collect::<Result<_>>()?;
    let mut trip = Vec::with_capacity(pattern.nnz());
    let mut total = T::zero();
    let mut worst = T::zero();
    let mut fallback_columns = Vec::new();
    for (l, r) in results.into_iter().enumerate() {
        for (i, v) in r.entries {
            trip.push((i, l, v));
        }
        total += r.residual_sq;
        worst = worst.max(r.residual_sq);
        if r.fallback {
            fallback_columns.push(l);
        }
    }
    let q = SparseOperator::from_triplets(n, n, trip);
    if !fallback_columns.is_empty() {
        log::warn!("{} SPAI columns fell back to the pseudo-solve", fallback_columns.len());
    }
    let report = SpaiReport {
        pattern: pattern.kind,
        n,
        frobenius_residual: total.sqrt().as_f64(),
        avg_nnz_per_row: q.nnz() as f64 / n.max(1) as f64,
        max_column_residual: worst.sqrt().as_f64(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        fallback_columns,
    };
    Ok((q, report))
}

/// `|M Q - I|_F` computed directly from the product.
pub fn frobenius_residual<T: Scalar>(m: &SparseOperator<T>, q: &SparseOperator<T>) -> Result<T> {
    let p = m.matmul(q)?;
    let mut s = T::zero();
    for i in 0..p.rows() {
        let (cols, vals) = p.row(i);
        let mut diag_seen = false;
        for (&j, &v) in cols.iter().zip(vals) {
            let d = if i == j {
                diag_seen = true;
                v - T::one()
            } else {
                v
            };
            s += d * d;
        }
        if !diag_seen {
            s += T::one();
        }
    }
    Ok(s.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StencilStats {
    pub avg_nnz_per_row: f64,
    pub max_nnz_per_row: usize,
    pub data_volume_ratio_vs_diagonal: f64,
}

/// Stencil size of a pattern relative to the diagonal pattern.
pub fn stencil_stats(pattern: &SparsityPattern) -> StencilStats {
    let n = pattern.n.max(1);
    let avg = pattern.nnz() as f64 / n as f64;
    StencilStats {
        avg_nnz_per_row: avg,
        max_nnz_per_row: pattern.columns.iter().map(Vec::len).max().unwrap_or(0),
        data_volume_ratio_vs_diagonal: avg,
    }
}
