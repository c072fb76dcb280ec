//! Nonlinear terms `f(Ex)` with row-local structure.
//!
//! Every evaluator takes the full vector `z = Ex` and returns a vector of the
//! same length. Rows outside [`Nonlinearity::active_rows`] are identically
//! zero, and each active row reads only the entries of `z` listed by
//! [`Nonlinearity::dependencies`]. That locality is what lets DEIM evaluate a
//! handful of rows without touching the rest of the state.

use std::fmt::Debug;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

pub trait Nonlinearity<T: Scalar>: Send + Sync + Debug {
    /// Length of both the argument `z` and the result.
    fn dim(&self) -> usize;

    /// Rows that may be nonzero, ascending.
    fn active_rows(&self) -> &[usize];

    /// Entries of `z` that row `row` reads.
    fn dependencies(&self, row: usize) -> &[usize];

    /// Value of row `row`. Only `z[dependencies(row)]` is read.
    fn eval_row(&self, row: usize, z: &[T]) -> Result<T>;

    /// Partial derivatives of row `row` with respect to `dependencies(row)`, in that order.
    fn grad_row(&self, row: usize, z: &[T], out: &mut [T]) -> Result<()>;

    fn eval(&self, z: &DVector<T>) -> Result<DVector<T>> {
        check_len(self.dim(), z.len())?;
        let mut out = DVector::zeros(self.dim());
        for &r in self.active_rows() {
            out[r] = self.eval_row(r, z.as_slice())?;
        }
        Ok(out)
    }

    /// Sparse Jacobian `∂f/∂z`.
    fn jacobian(&self, z: &DVector<T>) -> Result<CsrMatrix<T>> {
        check_len(self.dim(), z.len())?;
        let mut trip = Vec::new();
        let mut g = Vec::new();
        for &r in self.active_rows() {
            let deps = self.dependencies(r);
            g.clear();
            g.resize(deps.len(), T::zero());
            self.grad_row(r, z.as_slice(), &mut g)?;
            trip.extend(deps.iter().zip(&g).map(|(&c, &v)| (r, c, v)));
        }
        Ok(CsrMatrix::from_triplets(self.dim(), self.dim(), &trip))
    }

    /// True when `f` vanishes identically.
    fn is_zero(&self) -> bool {
        self.active_rows().is_empty()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!("nonlinearity expects length {expected}, got {got}")));
    }
    Ok(())
}

/// `f ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroNonlinearity {
    n: usize,
}

impl ZeroNonlinearity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl<T: Scalar> Nonlinearity<T> for ZeroNonlinearity {
    fn dim(&self) -> usize {
        self.n
    }
    fn active_rows(&self) -> &[usize] {
        &[]
    }
    fn dependencies(&self, _row: usize) -> &[usize] {
        &[]
    }
    fn eval_row(&self, _row: usize, _z: &[T]) -> Result<T> {
        Ok(T::zero())
    }
    fn grad_row(&self, _row: usize, _z: &[T], _out: &mut [T]) -> Result<()> {
        Ok(())
    }
}

/// Scalar function applied entrywise by [`Elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarMap {
    Cubic,
    Tanh,
    Sin,
}

impl ScalarMap {
    fn value<T: Scalar>(self, s: T) -> T {
        match self {
            ScalarMap::Cubic => s * s * s,
            ScalarMap::Tanh => s.tanh(),
            ScalarMap::Sin => s.sin(),
        }
    }

    fn derivative<T: Scalar>(self, s: T) -> T {
        match self {
            ScalarMap::Cubic => T::lit(3.0) * s * s,
            ScalarMap::Tanh => T::one() - s.tanh() * s.tanh(),
            ScalarMap::Sin => s.cos(),
        }
    }
}

/// `f_r(z) = scale_r · φ(z[src_r])` on a chosen set of rows.
#[derive(Clone, Debug)]
pub struct Elementwise<T> {
    n: usize,
    rows: Vec<usize>,
    sources: Vec<[usize; 1]>,
    scales: Vec<T>,
    map: ScalarMap,
    slot: Vec<usize>,
}

impl<T: Scalar> Elementwise<T> {
    /// `terms` holds `(row, source, scale)`; rows must be distinct.
    pub fn new(n: usize, map: ScalarMap, mut terms: Vec<(usize, usize, T)>) -> Result<Self> {
        terms.sort_by_key(|t| t.0);
        let mut slot = vec![usize::MAX; n];
        for (k, &(r, s, _)) in terms.iter().enumerate() {
            if r >= n || s >= n {
                return Err(Error::Dimension(format!("term ({r},{s}) outside dimension {n}")));
            }
            if slot[r] != usize::MAX {
                return Err(Error::InvalidArgument(format!("row {r} listed twice")));
            }
            slot[r] = k;
        }
        Ok(Self {
            n,
            rows: terms.iter().map(|t| t.0).collect(),
            sources: terms.iter().map(|t| [t.1]).collect(),
            scales: terms.iter().map(|t| t.2).collect(),
            map,
            slot,
        })
    }
}

impl<T: Scalar> Nonlinearity<T> for Elementwise<T> {
    fn dim(&self) -> usize {
        self.n
    }
    fn active_rows(&self) -> &[usize] {
        &self.rows
    }
    fn dependencies(&self, row: usize) -> &[usize] {
        match self.slot[row] {
            usize::MAX => &[],
            k => &self.sources[k],
        }
    }
    fn eval_row(&self, row: usize, z: &[T]) -> Result<T> {
        Ok(match self.slot[row] {
            usize::MAX => T::zero(),
            k => self.scales[k] * self.map.value(z[self.sources[k][0]]),
        })
    }
    fn grad_row(&self, row: usize, z: &[T], out: &mut [T]) -> Result<()> {
        let k = self.slot[row];
        if k != usize::MAX {
            out[0] = self.scales[k] * self.map.derivative(z[self.sources[k][0]]);
        }
        Ok(())
    }
}

/// Jacobian by forward differences with step `sqrt(eps)·(1 + |z_j|)`.
pub fn finite_difference_jacobian<T: Scalar>(f: &dyn Nonlinearity<T>, z: &DVector<T>) -> Result<CsrMatrix<T>> {
    let n = f.dim();
    let h0 = T::epsilon().sqrt();
    let mut trip = Vec::new();
    let mut zz = z.as_slice().to_vec();
    for &r in f.active_rows() {
        let base = f.eval_row(r, z.as_slice())?;
        for &c in f.dependencies(r) {
            let h = h0 * (T::one() + z[c].abs());
            zz[c] = z[c] + h;
            let v = f.eval_row(r, &zz)?;
            zz[c] = z[c];
            trip.push((r, c, (v - base) / h));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &trip))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_jacobian_matches_finite_differences() {
        for map in [ScalarMap::Cubic, ScalarMap::Tanh, ScalarMap::Sin] {
            let f = Elementwise::new(4, map, vec![(3, 0, 2.0), (1, 2, -0.5)]).unwrap();
            let z = DVector::from_vec(vec![0.3, -1.0, 0.7, 2.0]);
            let j = f.jacobian(&z).unwrap().to_dense();
            let fd = finite_difference_jacobian(&f, &z).unwrap().to_dense();
            assert!((j - fd).norm() < 1e-6, "{map:?}");
            let v = f.eval(&z).unwrap();
            assert_eq!(v[0], 0.0);
            assert_eq!(v[2], 0.0);
        }
    }

    #[test]
    fn duplicate_rows_rejected() {
        assert!(Elementwise::new(3, ScalarMap::Cubic, vec![(0, 1, 1.0), (0, 2, 1.0)]).is_err());
    }

    #[test]
    fn zero_is_zero() {
        let f = ZeroNonlinearity::new(3);
        let v: DVector<f64> = f.eval(&DVector::from_element(3, 1.0)).unwrap();
        assert_eq!(v.norm(), 0.0);
        assert!(Nonlinearity::<f64>::is_zero(&f));
    }
}
