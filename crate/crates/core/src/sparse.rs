//! Row-compressed sparse matrices and the coordinate-list text format.

use crate::error::{FeecError, Result};
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

/// Rows above which matrix-vector products are split across threads.
const PAR_ROWS: usize = 4096;

/// Anything that maps `R^cols -> R^rows` linearly.
pub trait LinearOperator<T: Scalar>: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply_into(&self, x: &[T], y: &mut [T]);

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Real sparse matrix in compressed-row form.
///
/// Column indices within a row are strictly increasing and no stored value is
/// exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    symmetric: bool,
}

impl<T: Scalar> SparseOperator<T> {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order, so the result is a pure function of the triplet list.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut current: Option<(usize, usize)> = None;
        let mut acc = T::zero();
        let flush = |key: Option<(usize, usize)>, acc: T, col_idx: &mut Vec<usize>, values: &mut Vec<T>, row_ptr: &mut Vec<usize>| {
            if let Some((i, j)) = key {
                if acc != T::zero() {
                    col_idx.push(j);
                    values.push(acc);
                    row_ptr[i + 1] += 1;
                }
            }
        };
        for (i, j, v) in triplets {
            assert!(i < rows && j < cols, "triplet ({i},{j}) outside {rows}x{cols}");
            if current == Some((i, j)) {
                acc += v;
            } else {
                flush(current, acc, &mut col_idx, &mut values, &mut row_ptr);
                current = Some((i, j));
                acc = v;
            }
        }
        flush(current, acc, &mut col_idx, &mut values, &mut row_ptr);
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = SparseOperator {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        op.symmetric = op.is_exactly_symmetric();
        op
    }

    /// Builds from per-row `(col, value)` lists that are already sorted and
    /// duplicate free.
    pub fn from_rows(cols: usize, rows_data: Vec<Vec<(usize, T)>>) -> Self {
        let rows = rows_data.len();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows_data {
            let mut last = None;
            for (j, v) in row {
                assert!(j < cols);
                assert!(last.map_or(true, |l| j > l), "row columns must be increasing");
                last = Some(j);
                if v != T::zero() {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let mut op = SparseOperator {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        op.symmetric = op.is_exactly_symmetric();
        op
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseOperator {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            symmetric: rows == cols,
        }
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        Self::from_diagonal(&vec![s; n])
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        Self::from_rows(d.len(), d.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// True when entries match the transposed entries exactly.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols, "matvec input length");
        assert_eq!(y.len(), self.rows, "matvec output length");
        let row_dot = |i: usize| {
            let (c, v) = self.row(i);
            c.iter().zip(v).fold(T::zero(), |acc, (&j, &a)| acc + a * x[j])
        };
        if self.rows >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.rows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                let slot = next[j];
                col_idx[slot] = i;
                values[slot] = x;
                next[j] += 1;
            }
        }
        SparseOperator {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
            symmetric: self.symmetric,
        }
    }

    /// Sparse product `self * rhs`.
    pub fn matmul(&self, rhs: &SparseOperator<T>) -> Result<SparseOperator<T>> {
        if self.cols != rhs.rows {
            return Err(FeecError::DimensionMismatch {
                expected: self.cols,
                found: rhs.rows,
            });
        }
        let rows: Vec<Vec<(usize, T)>> = (0..self.rows)
            .into_par_iter()
            .map(|i| {
                let mut acc: std::collections::BTreeMap<usize, T> = Default::default();
                let (c, v) = self.row(i);
                for (&k, &a) in c.iter().zip(v) {
                    let (c2, v2) = rhs.row(k);
                    for (&j, &b) in c2.iter().zip(v2) {
                        *acc.entry(j).or_insert(T::zero()) += a * b;
                    }
                }
                acc.into_iter().collect()
            })
            .collect();
        Ok(SparseOperator::from_rows(rhs.cols, rows))
    }

    pub fn scale(&self, s: T) -> Self {
        SparseOperator::from_triplets(
            self.rows,
            self.cols,
            self.triplets().map(|(i, j, v)| (i, j, v * s)).collect(),
        )
    }

    pub fn max_abs_entry(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).1.iter().copied().sum()).collect()
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> T {
        if self.rows != self.cols {
            return T::infinity();
        }
        let t = self.transpose();
        let mut worst = T::zero();
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - t.get(i, j)).abs());
        }
        for (i, j, v) in t.triplets() {
            worst = worst.max((v - self.get(i, j)).abs());
        }
        worst
    }

    fn is_exactly_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        self.triplets().all(|(i, j, v)| i == j || self.get(j, i) == v)
            && self.triplets().all(|(i, j, _)| self.get(j, i) != T::zero())
    }

    /// Row-major dense copy; intended for small matrices.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.cols]; self.rows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// Sorted `row col value` lines.
    pub fn to_coo_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "% {} {} {}", self.rows, self.cols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{i} {j} {v}");
        }
        s
    }

    pub fn write_coo<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_coo_string().as_bytes())?;
        Ok(())
    }

    /// Reads the coordinate-list format. A leading `% rows cols nnz` line sets
    /// the shape; without it the shape is inferred from the largest indices.
    pub fn read_coo<R: BufRead>(r: R) -> Result<Self> {
        let mut shape: Option<(usize, usize)> = None;
        let mut triplets = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('%') {
                let nums: Vec<usize> = rest.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if nums.len() >= 2 && shape.is_none() {
                    shape = Some((nums[0], nums[1]));
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse_err = || FeecError::Parse(format!("line {}: expected `row col value`", lineno + 1));
            let i: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(parse_err)?;
            let j: usize = parts.next().and_then(|t| t.parse().ok()).ok_or_else(parse_err)?;
            let v: f64 = parts.next().and_then(|t| t.parse().ok()).ok_or_else(parse_err)?;
            triplets.push((i, j, T::lit(v)));
        }
        let (rows, cols) = shape.unwrap_or_else(|| {
            let r = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
            let c = triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0);
            (r, c)
        });
        if let Some(&(i, j, _)) = triplets.iter().find(|t| t.0 >= rows || t.1 >= cols) {
            return Err(FeecError::Parse(format!("entry ({i},{j}) outside declared shape {rows}x{cols}")));
        }
        Ok(Self::from_triplets(rows, cols, triplets))
    }
}

impl<T: Scalar> LinearOperator<T> for SparseOperator<T> {
    fn nrows(&self) -> usize {
        self.rows
    }
    fn ncols(&self) -> usize {
        self.cols
    }
    fn apply_into(&self, x: &[T], y: &mut [T]) {
        self.matvec_into(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseOperator::<f64>::from_triplets(
            2,
            3,
            vec![(0, 1, 1.0), (1, 2, 2.0), (0, 1, 0.5), (1, 0, 1.0), (1, 0, -1.0)],
        );
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 1.5);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]), vec![3.0, 6.0]);
    }

    #[test]
    fn transpose_and_matmul() {
        let a = SparseOperator::<f64>::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        let at = a.transpose();
        assert_eq!(at.get(1, 0), 2.0);
        let p = a.matmul(&at).unwrap();
        assert_eq!(p.to_dense(), vec![vec![5.0, 6.0], vec![6.0, 9.0]]);
        assert!(p.is_symmetric());
        assert!(!a.is_symmetric());
    }

    #[test]
    fn coo_roundtrip_is_sorted() {
        let a = SparseOperator::<f64>::from_triplets(3, 3, vec![(2, 0, 0.1), (0, 2, 1.0 / 3.0), (1, 1, -4.0)]);
        let s = a.to_coo_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "% 3 3 3");
        assert!(lines[1].starts_with("0 2 "));
        assert!(lines[3].starts_with("2 0 "));
        let b = SparseOperator::<f64>::read_coo(s.as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coo_rejects_garbage() {
        assert!(SparseOperator::<f64>::read_coo("0 x 1.0\n".as_bytes()).is_err());
    }
}
