use nalgebra::{DMatrix, DVector};

use super::ordering::minimum_degree_ordering;
use super::CsrMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const NONE: usize = usize::MAX;

/// Relative threshold under which a diagonal pivot loses to the column maximum.
const PIVOT_TOL: f64 = 0.1;

/// Left-looking sparse LU with threshold partial pivoting, `P A Q = L U`.
///
/// `Q` is a fill-reducing column order; row pivoting prefers the matching
/// diagonal entry while it stays within `PIVOT_TOL` of the column maximum.
#[derive(Clone, Debug)]
pub struct SparseLu<T> {
    n: usize,
    q: Vec<usize>,
    pinv: Vec<usize>,
    /// Strictly lower part of `L` by column, rows in pivot numbering; unit diagonal implied.
    l: Vec<Vec<(usize, T)>>,
    /// Strictly upper part of `U` by column, rows in pivot numbering.
    u: Vec<Vec<(usize, T)>>,
    u_diag: Vec<T>,
    norm1: T,
}

impl<T: Scalar> SparseLu<T> {
    /// Factors `a` with a freshly computed minimum-degree ordering.
    pub fn new(a: &CsrMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("LU needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
        }
        let order = minimum_degree_ordering(a.nrows(), a.row_ptr(), a.col_indices());
        Self::with_ordering(a, &order)
    }

    /// Factors `a` using the column order `order`.
    pub fn with_ordering(a: &CsrMatrix<T>, order: &[usize]) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || order.len() != n {
            return Err(Error::Dimension(format!(
                "LU of {}x{} with ordering of length {}",
                a.nrows(),
                a.ncols(),
                order.len()
            )));
        }
        let cols = a.transpose();
        let eps = T::epsilon() * T::lit(n.max(1) as f64);
        let tol = T::lit(PIVOT_TOL);

        let mut pinv = vec![NONE; n];
        let mut l: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
        let mut u: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
        let mut u_diag = Vec::with_capacity(n);
        let mut x = vec![T::zero(); n];
        let mut visited = vec![NONE; n];
        let mut topo: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut norm1 = T::zero();

        for (k, &col) in order.iter().enumerate() {
            let (rows, vals) = cols.row(col);
            let colmax = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            norm1 = norm1.max(vals.iter().fold(T::zero(), |s, v| s + v.abs()));

            // reach of the column pattern in the graph of L, in reverse topological order
            topo.clear();
            for &r in rows {
                if visited[r] == k {
                    continue;
                }
                visited[r] = k;
                stack.push((r, 0));
                while let Some(top) = stack.len().checked_sub(1) {
                    let (j, mut next) = stack[top];
                    let children: &[(usize, T)] = if pinv[j] == NONE { &[] } else { &l[pinv[j]] };
                    let mut pushed = false;
                    while next < children.len() {
                        let c = children[next].0;
                        next += 1;
                        if visited[c] != k {
                            visited[c] = k;
                            stack[top].1 = next;
                            stack.push((c, 0));
                            pushed = true;
                            break;
                        }
                    }
                    if !pushed {
                        topo.push(j);
                        stack.pop();
                    }
                }
            }

            for (&r, &v) in rows.iter().zip(vals) {
                x[r] += v;
            }
            for &j in topo.iter().rev() {
                let kk = pinv[j];
                if kk == NONE {
                    continue;
                }
                let xj = x[j];
                if xj == T::zero() {
                    continue;
                }
                for &(i, lij) in &l[kk] {
                    x[i] -= lij * xj;
                }
            }

            let mut ucol = Vec::new();
            let mut amax = T::zero();
            let mut ipiv = NONE;
            let mut xmax = colmax;
            for &j in topo.iter().rev() {
                let xj = x[j];
                xmax = xmax.max(xj.abs());
                if pinv[j] == NONE {
                    if ipiv == NONE || xj.abs() > amax {
                        amax = xj.abs();
                        ipiv = j;
                    }
                } else if xj != T::zero() {
                    ucol.push((pinv[j], xj));
                }
            }
            if ipiv == NONE || amax <= eps * xmax || amax == T::zero() {
                for &j in &topo {
                    x[j] = T::zero();
                }
                return Err(Error::SingularMatrix(format!("no acceptable pivot in column {col} (step {k} of {n})")));
            }
            if pinv[col] == NONE && visited[col] == k && x[col].abs() >= tol * amax {
                ipiv = col;
            }
            let pivot = x[ipiv];
            pinv[ipiv] = k;
            let mut lcol = Vec::new();
            for &j in topo.iter().rev() {
                if pinv[j] == NONE && x[j] != T::zero() {
                    lcol.push((j, x[j] / pivot));
                }
            }
            for &j in &topo {
                x[j] = T::zero();
            }
            l.push(lcol);
            u.push(ucol);
            u_diag.push(pivot);
        }

        for col in l.iter_mut() {
            for e in col.iter_mut() {
                e.0 = pinv[e.0];
            }
        }

        Ok(Self {
            n,
            q: order.to_vec(),
            pinv,
            l,
            u,
            u_diag,
            norm1,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L` and `U` including the diagonal of `U`.
    pub fn factor_nnz(&self) -> usize {
        self.l.iter().map(Vec::len).sum::<usize>() + self.u.iter().map(Vec::len).sum::<usize>() + self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        assert_eq!(b.len(), self.n, "LU solve dimension");
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            y[self.pinv[i]] = b[i];
        }
        for j in 0..self.n {
            let yj = y[j];
            if yj != T::zero() {
                for &(i, lij) in &self.l[j] {
                    y[i] -= lij * yj;
                }
            }
        }
        for j in (0..self.n).rev() {
            y[j] /= self.u_diag[j];
            let yj = y[j];
            if yj != T::zero() {
                for &(i, uij) in &self.u[j] {
                    y[i] -= uij * yj;
                }
            }
        }
        let mut x = DVector::zeros(self.n);
        for k in 0..self.n {
            x[self.q[k]] = y[k];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &DVector<T>) -> DVector<T> {
        assert_eq!(b.len(), self.n, "LU solve dimension");
        let mut v: Vec<T> = (0..self.n).map(|k| b[self.q[k]]).collect();
        for j in 0..self.n {
            let mut s = v[j];
            for &(i, uij) in &self.u[j] {
                s -= uij * v[i];
            }
            v[j] = s / self.u_diag[j];
        }
        for j in (0..self.n).rev() {
            let mut s = v[j];
            for &(i, lij) in &self.l[j] {
                s -= lij * v[i];
            }
            v[j] = s;
        }
        DVector::from_fn(self.n, |i, _| v[self.pinv[i]])
    }

    /// Solves `A X = B` column by column.
    pub fn solve_dense(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, b.ncols());
        for c in 0..b.ncols() {
            let x = self.solve(&b.column(c).into_owned());
            out.set_column(c, &x);
        }
        out
    }

    /// Estimate of the 1-norm condition number (Hager's method).
    pub fn condition_estimate(&self) -> T {
        if self.n == 0 {
            return T::one();
        }
        let n = self.n;
        let mut x = DVector::from_element(n, T::one() / T::lit(n as f64));
        let mut est = T::zero();
        let mut last = NONE;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().fold(T::zero(), |s, v| s + v.abs());
            let xi = y.map(|v| if v >= T::zero() { T::one() } else { -T::one() });
            let z = self.solve_transpose(&xi);
            let (j, zmax) = z.iter().enumerate().fold((0, T::zero()), |(bj, bm), (i, v)| {
                if v.abs() > bm {
                    (i, v.abs())
                } else {
                    (bj, bm)
                }
            });
            if zmax <= z.dot(&x) || j == last {
                break;
            }
            last = j;
            x = DVector::zeros(n);
            x[j] = T::one();
        }
        self.norm1 * est
    }
}

/// Sparse LU factory that reuses the fill-reducing ordering while the
/// sparsity pattern of the factored matrix stays the same.
#[derive(Clone, Debug, Default)]
pub struct LuSolver {
    pattern: Option<(usize, Vec<usize>, Vec<usize>)>,
    order: Vec<usize>,
}

impl LuSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor<T: Scalar>(&mut self, a: &CsrMatrix<T>) -> Result<SparseLu<T>> {
        let same = matches!(&self.pattern, Some((n, rp, ci))
            if *n == a.nrows() && rp == a.row_ptr() && ci == a.col_indices());
        if !same {
            if !a.is_square() {
                return Err(Error::Dimension(format!("LU needs a square matrix, got {}x{}", a.nrows(), a.ncols())));
            }
            self.order = minimum_degree_ordering(a.nrows(), a.row_ptr(), a.col_indices());
            self.pattern = Some((a.nrows(), a.row_ptr().to_vec(), a.col_indices().to_vec()));
        }
        SparseLu::with_ordering(a, &self.order)
    }
}
