//! Compressed sparse row matrices and the sparse direct solvers built on them.

mod lu;
mod nullspace;
mod ordering;

pub use lu::{LuSolver, SparseLu};
pub use nullspace::{sparse_nullspace, SparseNullspace};
pub use ordering::minimum_degree_ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-compressed sparse matrix.
///
/// Explicitly stored zeros are kept: the pattern of a matrix assembled from
/// triplets is structural and stays stable across re-assembly with different
/// values, which the LU ordering cache relies on.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) outside {nrows}x{ncols}");
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(i, j, v) in triplets {
            let p = next[i];
            cols[p] = j;
            vals[p] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut entries: Vec<(usize, T)> = Vec::new();
        for i in 0..nrows {
            entries.clear();
            entries.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            entries.sort_by_key(|e| e.0);
            for &(j, v) in entries.iter() {
                match col_idx.last() {
                    Some(&last) if last == j && values.len() > row_ptr[i] => {
                        let k = values.len() - 1;
                        values[k] += v;
                    }
                    _ => {
                        col_idx.push(j);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Converts a dense matrix, dropping entries with `|a_ij| <= drop_tol`.
    pub fn from_dense(m: &DMatrix<T>, drop_tol: T) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplet_iter() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    pub fn triplet_iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                let q = next[j];
                col_idx[q] = i;
                values[q] = self.values[p];
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.ncols, "mul_vec dimension");
        let mut y = DVector::zeros(self.nrows);
        for i in 0..self.nrows {
            let mut acc = T::zero();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
        y
    }

    /// `y += alpha * A x`
    pub fn mul_vec_acc(&self, alpha: T, x: &DVector<T>, y: &mut DVector<T>) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = T::zero();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            y[i] += alpha * acc;
        }
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.nrows, "tr_mul_vec dimension");
        let mut y = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == T::zero() {
                continue;
            }
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += self.values[p] * xi;
            }
        }
        y
    }

    /// Sparse-sparse product (Gustavson).
    pub fn matmul(&self, rhs: &CsrMatrix<T>) -> Self {
        assert_eq!(self.ncols, rhs.nrows, "matmul dimension");
        let n = rhs.ncols;
        let mut marker = vec![usize::MAX; n];
        let mut acc = vec![T::zero(); n];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut pattern: Vec<usize> = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            pattern.clear();
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let k = self.col_idx[p];
                let a = self.values[p];
                for q in rhs.row_ptr[k]..rhs.row_ptr[k + 1] {
                    let j = rhs.col_idx[q];
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = T::zero();
                        pattern.push(j);
                    }
                    acc[j] += a * rhs.values[q];
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: n,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse times dense.
    pub fn mul_dense(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(self.ncols, rhs.nrows(), "mul_dense dimension");
        let mut out = DMatrix::zeros(self.nrows, rhs.ncols());
        for c in 0..rhs.ncols() {
            for i in 0..self.nrows {
                let mut acc = T::zero();
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.values[p] * rhs[(self.col_idx[p], c)];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }

    /// `Aᵀ` times dense.
    pub fn tr_mul_dense(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(self.nrows, rhs.nrows(), "tr_mul_dense dimension");
        let mut out = DMatrix::zeros(self.ncols, rhs.ncols());
        for c in 0..rhs.ncols() {
            for i in 0..self.nrows {
                let x = rhs[(i, c)];
                if x == T::zero() {
                    continue;
                }
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    out[(self.col_idx[p], c)] += self.values[p] * x;
                }
            }
        }
        out
    }

    /// `alpha * self + beta * other`, pattern is the union of both patterns.
    pub fn add_scaled(&self, alpha: T, other: &CsrMatrix<T>, beta: T) -> Self {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape");
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_ptr.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    col_idx.push(ja);
                    values.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    col_idx.push(ja);
                    values.push(alpha * va[p]);
                    p += 1;
                } else {
                    col_idx.push(jb);
                    values.push(beta * vb[q]);
                    q += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Drops entries with `|a_ij| <= tol`.
    pub fn pruned(&self, tol: T) -> Self {
        let trip: Vec<_> = self.triplet_iter().filter(|t| t.2.abs() > tol).collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// Rows `rows` (in the given order) as a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &i in rows {
            let (c, v) = self.row(i);
            col_idx.extend_from_slice(c);
            values.extend_from_slice(v);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: rows.len(),
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense submatrix `A[rows, cols]`.
    pub fn dense_submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
        let mut pos = std::collections::HashMap::with_capacity(cols.len());
        for (k, &j) in cols.iter().enumerate() {
            pos.insert(j, k);
        }
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (r, &i) in rows.iter().enumerate() {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                if let Some(&k) = pos.get(j) {
                    out[(r, k)] += *x;
                }
            }
        }
        out
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    /// Structural pattern equality (same shape and nonzero positions).
    pub fn same_pattern(&self, other: &CsrMatrix<T>) -> bool {
        self.shape() == other.shape() && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }
}

/// Assembles a sparse matrix from scaled blocks placed at offsets.
#[derive(Debug)]
pub struct BlockBuilder<T> {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, T)>,
}

impl<T: Scalar> BlockBuilder<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    pub fn block(&mut self, row: usize, col: usize, m: &CsrMatrix<T>, scale: T) -> &mut Self {
        assert!(row + m.nrows() <= self.nrows && col + m.ncols() <= self.ncols, "block out of range");
        for (i, j, v) in m.triplet_iter() {
            self.triplets.push((row + i, col + j, scale * v));
        }
        self
    }

    pub fn entry(&mut self, row: usize, col: usize, v: T) -> &mut Self {
        self.triplets.push((row, col, v));
        self
    }

    pub fn build(&self) -> CsrMatrix<T> {
        CsrMatrix::from_triplets(self.nrows, self.ncols, &self.triplets)
    }
}

/// Iteration or system matrix in whichever storage suits its size.
#[derive(Clone, Debug)]
pub enum SysMatrix<T: Scalar> {
    Sparse(CsrMatrix<T>),
    Dense(DMatrix<T>),
}

impl<T: Scalar> SysMatrix<T> {
    pub fn nrows(&self) -> usize {
        match self {
            SysMatrix::Sparse(m) => m.nrows(),
            SysMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            SysMatrix::Sparse(m) => m.mul_vec(x),
            SysMatrix::Dense(m) => m * x,
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            SysMatrix::Sparse(m) => m.to_dense(),
            SysMatrix::Dense(m) => m.clone(),
        }
    }
}

/// Checks `rows x cols` and reports a dimension error naming `what`.
pub(crate) fn check_shape<T: Scalar>(m: &CsrMatrix<T>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}
