use std::collections::{BTreeMap, BTreeSet};

use super::CsrMatrix;
use crate::scalar::Scalar;

/// Kernel of a sparse matrix in echelon form.
///
/// With pivot columns `I` and free columns `J` the basis is `[-R_IJ; I_J]`
/// (rows scattered back to their original positions), where `R` is the
/// reduced row echelon form. `complement_left_inverse` applied to `x`
/// returns `x_I + R_IJ x_J`, the coordinates along the unit vectors on `I`.
#[derive(Clone, Debug)]
pub struct SparseNullspace<T> {
    pub basis: CsrMatrix<T>,
    pub pivot_cols: Vec<usize>,
    pub free_cols: Vec<usize>,
    /// `R_IJ`, rows indexed like `pivot_cols`, columns like `free_cols`.
    pub reduced: CsrMatrix<T>,
}

impl<T: Scalar> SparseNullspace<T> {
    pub fn rank(&self) -> usize {
        self.pivot_cols.len()
    }

    pub fn dim(&self) -> usize {
        self.free_cols.len()
    }

    /// Left inverse of the kernel basis: selects the free coordinates.
    pub fn basis_left_inverse(&self) -> CsrMatrix<T> {
        let n = self.basis.nrows();
        let trip: Vec<_> = self.free_cols.iter().enumerate().map(|(k, &j)| (k, j, T::one())).collect();
        CsrMatrix::from_triplets(self.free_cols.len(), n, &trip)
    }

    /// Unit vectors on the pivot columns, a complement of the kernel.
    pub fn complement(&self) -> CsrMatrix<T> {
        let n = self.basis.nrows();
        let trip: Vec<_> = self.pivot_cols.iter().enumerate().map(|(k, &i)| (i, k, T::one())).collect();
        CsrMatrix::from_triplets(n, self.pivot_cols.len(), &trip)
    }

    /// Left inverse of [`complement`](Self::complement) that annihilates the kernel.
    pub fn complement_left_inverse(&self) -> CsrMatrix<T> {
        let n = self.basis.nrows();
        let mut trip = Vec::new();
        for (r, &i) in self.pivot_cols.iter().enumerate() {
            trip.push((r, i, T::one()));
            let (c, v) = self.reduced.row(r);
            for (&k, &x) in c.iter().zip(v) {
                trip.push((r, self.free_cols[k], x));
            }
        }
        CsrMatrix::from_triplets(self.pivot_cols.len(), n, &trip)
    }
}

/// Rank-revealing sparse elimination of `m`, returning a kernel basis.
///
/// Columns are processed left to right; the pivot in each column is the
/// largest remaining entry. Entries at or below `tol · max|m|` are treated as
/// zero, and a column whose remaining entries all vanish becomes free.
pub fn sparse_nullspace<T: Scalar>(m: &CsrMatrix<T>, tol: T) -> SparseNullspace<T> {
    let (nr, nc) = m.shape();
    let drop = tol * m.max_abs();
    let mut rows: Vec<BTreeMap<usize, T>> = (0..nr)
        .map(|i| {
            let (c, v) = m.row(i);
            c.iter().zip(v).filter(|(_, x)| x.abs() > drop).map(|(&j, &x)| (j, x)).collect()
        })
        .collect();
    let mut col_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nc];
    for (i, r) in rows.iter().enumerate() {
        for &j in r.keys() {
            col_rows[j].insert(i);
        }
    }

    let mut used = vec![false; nr];
    let mut pivot_row_of_col: Vec<Option<usize>> = vec![None; nc];
    let mut pivot_cols = Vec::new();
    let mut free_cols = Vec::new();

    for j in 0..nc {
        let mut best: Option<(usize, T)> = None;
        for &i in &col_rows[j] {
            if used[i] {
                continue;
            }
            let v = rows[i][&j].abs();
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let Some((p, _)) = best else {
            free_cols.push(j);
            continue;
        };
        used[p] = true;
        pivot_row_of_col[j] = Some(p);
        pivot_cols.push(j);

        let piv = rows[p][&j];
        let prow: Vec<(usize, T)> = rows[p].iter().map(|(&c, &v)| (c, v / piv)).collect();
        rows[p] = prow.iter().copied().collect();

        let targets: Vec<usize> = col_rows[j].iter().copied().filter(|&i| i != p).collect();
        for i in targets {
            let factor = rows[i][&j];
            for &(c, v) in &prow {
                let e = rows[i].entry(c).or_insert_with(T::zero);
                *e -= factor * v;
                if c == j || e.abs() <= drop {
                    rows[i].remove(&c);
                    col_rows[c].remove(&i);
                } else {
                    col_rows[c].insert(i);
                }
            }
        }
    }

    let mut free_pos = vec![usize::MAX; nc];
    for (k, &j) in free_cols.iter().enumerate() {
        free_pos[j] = k;
    }
    let mut basis_trip = Vec::new();
    let mut red_trip = Vec::new();
    for (k, &j) in free_cols.iter().enumerate() {
        basis_trip.push((j, k, T::one()));
    }
    for (r, &c) in pivot_cols.iter().enumerate() {
        let p = pivot_row_of_col[c].expect("pivot column has a row");
        for (&col, &v) in &rows[p] {
            if col != c && free_pos[col] != usize::MAX {
                basis_trip.push((c, free_pos[col], -v));
                red_trip.push((r, free_pos[col], v));
            }
        }
    }

    SparseNullspace {
        basis: CsrMatrix::from_triplets(nc, free_cols.len(), &basis_trip),
        reduced: CsrMatrix::from_triplets(pivot_cols.len(), free_cols.len(), &red_trip),
        pivot_cols,
        free_cols,
    }
}
