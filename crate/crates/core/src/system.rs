use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::nonlinear::{Nonlinearity, ZeroNonlinearity};
use crate::scalar::Scalar;
use crate::sparse::{check_shape, CsrMatrix};

/// `E x' = A x + f(E x) + B u`, `y = C x`.
#[derive(Clone, Debug)]
pub struct DescriptorSystem<T: Scalar> {
    pub e: CsrMatrix<T>,
    pub a: CsrMatrix<T>,
    pub b: CsrMatrix<T>,
    pub c: CsrMatrix<T>,
    pub f: Arc<dyn Nonlinearity<T>>,
    pub x0: DVector<T>,
}

impl<T: Scalar> DescriptorSystem<T> {
    pub fn new(
        e: CsrMatrix<T>,
        a: CsrMatrix<T>,
        b: CsrMatrix<T>,
        c: CsrMatrix<T>,
        f: Arc<dyn Nonlinearity<T>>,
        x0: DVector<T>,
    ) -> Result<Self> {
        let n = e.nrows();
        check_shape(&e, n, n, "E")?;
        check_shape(&a, n, n, "A")?;
        check_shape(&b, n, b.ncols(), "B")?;
        check_shape(&c, c.nrows(), n, "C")?;
        if f.dim() != n {
            return Err(Error::Dimension(format!("nonlinearity has dimension {}, system {n}", f.dim())));
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, system {n}", x0.len())));
        }
        Ok(Self { e, a, b, c, f, x0 })
    }

    /// Linear system with `f ≡ 0` and zero initial state.
    pub fn linear(e: CsrMatrix<T>, a: CsrMatrix<T>, b: CsrMatrix<T>, c: CsrMatrix<T>) -> Result<Self> {
        let n = e.nrows();
        Self::new(e, a, b, c, Arc::new(ZeroNonlinearity::new(n)), DVector::zeros(n))
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_x0(mut self, x0: DVector<T>) -> Result<Self> {
        if x0.len() != self.n() {
            return Err(Error::Dimension(format!("x0 has length {}, system {}", x0.len(), self.n())));
        }
        self.x0 = x0;
        Ok(self)
    }

    /// `A x + f(E x) + B u`.
    pub fn rhs(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let mut r = self.a.mul_vec(x) + self.f.eval(&self.e.mul_vec(x))?;
        self.b.mul_vec_acc(T::one(), u, &mut r);
        Ok(r)
    }

    /// `E x' − A x − f(E x) − B u`.
    pub fn residual(&self, x: &DVector<T>, xdot: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.e.mul_vec(xdot) - self.rhs(x, u)?)
    }

    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        self.c.mul_vec(x)
    }
}
