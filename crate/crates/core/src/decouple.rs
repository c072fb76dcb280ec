//! Index-1 decoupling into a differential subsystem in `ξ_p` and an
//! algebraic subsystem in `ξ_q`.
//!
//! Both forms share one representation:
//!
//! ```text
//! E_p ξ_p' = A_p ξ_p + f_p(ξ_p) + B_p u
//! E_q ξ_q  = A_q ξ_p + f_q(ξ_p) + B_q u
//! y        = C_p ξ_p + C_q ξ_q
//! ```
//!
//! with `f_p(ξ) = Π_p f(G ξ)` and `f_q(ξ) = Π_q f(G ξ)`, `G = E_0 p_0`.
//! The explicit form has `E_p = I`, `E_q = I` and `Π = p_0*ᵀE_1⁻¹`,
//! `q_0*ᵀE_1⁻¹`; the implicit form uses `Π_p = p̂_0ᵀ`, `Π_q = q̂_0ᵀ`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::write_matrix_market;
use crate::nonlinear::Nonlinearity;
use crate::pencil::{nullspace_basis, ProjectorChain, SparseBasisPair};
use crate::scalar::Scalar;
use crate::sparse::{CsrMatrix, SparseLu};
use crate::system::DescriptorSystem;

/// Condition estimate above which `E_p`/`E_q` trigger a warning.
pub const CONDITION_WARN: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoupledForm {
    Explicit,
    Implicit,
}

#[derive(Clone, Debug)]
pub struct DecoupledSystem<T: Scalar> {
    pub form: DecoupledForm,
    /// `None` stands for the identity.
    pub e_p: Option<CsrMatrix<T>>,
    pub a_p: CsrMatrix<T>,
    pub b_p: CsrMatrix<T>,
    /// `None` stands for the identity.
    pub e_q: Option<CsrMatrix<T>>,
    pub a_q: CsrMatrix<T>,
    pub b_q: CsrMatrix<T>,
    pub c_p: CsrMatrix<T>,
    pub c_q: CsrMatrix<T>,
    pub p0: SparseBasisPair<T>,
    pub q0: SparseBasisPair<T>,
    pub p_hat: Option<CsrMatrix<T>>,
    pub q_hat: Option<CsrMatrix<T>>,
    /// Nonlinearity of the parent system, evaluated at `z = G ξ_p`.
    pub f: Arc<dyn Nonlinearity<T>>,
    /// `G = E_0 p_0`.
    pub lift: CsrMatrix<T>,
    /// `Π_p`, `n_p × n`.
    pub proj_p: CsrMatrix<T>,
    /// `Π_q`, `n_q × n`; `None` when `Π_q` vanishes on every active row of `f`.
    pub proj_q: Option<CsrMatrix<T>>,
    pub e1: Option<CsrMatrix<T>>,
}

/// Result of [`DecoupledSystem::consistent_initialize`].
#[derive(Clone, Debug)]
pub struct ConsistentInit<T: Scalar> {
    pub xi_p: DVector<T>,
    pub xi_q: DVector<T>,
    /// `‖q_0*ᵀ x_0 − ξ_q0‖₂`.
    pub residual: T,
}

impl<T: Scalar> DecoupledSystem<T> {
    pub fn n(&self) -> usize {
        self.n_p() + self.n_q()
    }

    pub fn n_p(&self) -> usize {
        self.a_p.nrows()
    }

    pub fn n_q(&self) -> usize {
        self.a_q.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c_p.nrows()
    }

    /// `E_p` materialized (identity for the explicit form).
    pub fn e_p_matrix(&self) -> CsrMatrix<T> {
        self.e_p.clone().unwrap_or_else(|| CsrMatrix::identity(self.n_p()))
    }

    pub fn e_q_matrix(&self) -> CsrMatrix<T> {
        self.e_q.clone().unwrap_or_else(|| CsrMatrix::identity(self.n_q()))
    }

    /// True when `f_q ≡ 0` by structure.
    pub fn f_q_vanishes(&self) -> bool {
        self.proj_q.is_none()
    }

    fn f_tilde(&self, xi_p: &DVector<T>) -> Result<DVector<T>> {
        self.f.eval(&self.lift.mul_vec(xi_p))
    }

    pub fn f_p(&self, xi_p: &DVector<T>) -> Result<DVector<T>> {
        if self.f.is_zero() {
            return Ok(DVector::zeros(self.n_p()));
        }
        Ok(self.proj_p.mul_vec(&self.f_tilde(xi_p)?))
    }

    pub fn f_q(&self, xi_p: &DVector<T>) -> Result<DVector<T>> {
        match &self.proj_q {
            Some(pq) if !self.f.is_zero() => Ok(pq.mul_vec(&self.f_tilde(xi_p)?)),
            _ => Ok(DVector::zeros(self.n_q())),
        }
    }

    /// Jacobian of `f_p`, `Π_p · J_f(G ξ) · G`.
    pub fn jac_f_p(&self, xi_p: &DVector<T>) -> Result<CsrMatrix<T>> {
        if self.f.is_zero() {
            return Ok(CsrMatrix::zeros(self.n_p(), self.n_p()));
        }
        let j = self.f.jacobian(&self.lift.mul_vec(xi_p))?;
        Ok(self.proj_p.matmul(&j).matmul(&self.lift))
    }

    /// `A_q ξ_p + f_q(ξ_p) + B_q u`.
    pub fn algebraic_rhs(&self, xi_p: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let mut r = self.a_q.mul_vec(xi_p) + self.f_q(xi_p)?;
        self.b_q.mul_vec_acc(T::one(), u, &mut r);
        Ok(r)
    }

    /// Factorization of `E_q`, or `None` for the identity.
    pub fn factor_e_q(&self) -> Result<Option<SparseLu<T>>> {
        match &self.e_q {
            None => Ok(None),
            Some(eq) => SparseLu::new(eq).map(Some).map_err(|_| Error::SingularAlgebraicBlock),
        }
    }

    /// Solves the algebraic subsystem for `ξ_q`.
    pub fn solve_algebraic(&self, lu: Option<&SparseLu<T>>, xi_p: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let rhs = self.algebraic_rhs(xi_p, u)?;
        Ok(match lu {
            Some(lu) => lu.solve(&rhs),
            None => rhs,
        })
    }

    pub fn output(&self, xi_p: &DVector<T>, xi_q: &DVector<T>) -> DVector<T> {
        self.c_p.mul_vec(xi_p) + self.c_q.mul_vec(xi_q)
    }

    /// `x = q_0 ξ_q + p_0 ξ_p`.
    pub fn recompose_state(&self, xi_p: &DVector<T>, xi_q: &DVector<T>) -> DVector<T> {
        self.q0.basis.mul_vec(xi_q) + self.p0.basis.mul_vec(xi_p)
    }

    /// Projects `x0` onto the differential coordinates, solves the algebraic
    /// subsystem at `u0`, and reports how far `x0` was from consistency.
    pub fn consistent_initialize(&self, x0: &DVector<T>, u0: &DVector<T>) -> Result<ConsistentInit<T>> {
        if x0.len() != self.n() || u0.len() != self.inputs() {
            return Err(Error::Dimension(format!(
                "initial state/input of length {}/{}, expected {}/{}",
                x0.len(),
                u0.len(),
                self.n(),
                self.inputs()
            )));
        }
        let xi_p = self.p0.left_inverse.mul_vec(x0);
        let lu = self.factor_e_q()?;
        let xi_q = self.solve_algebraic(lu.as_ref(), &xi_p, u0)?;
        let residual = (self.q0.left_inverse.mul_vec(x0) - &xi_q).norm();
        Ok(ConsistentInit { xi_p, xi_q, residual })
    }

    /// Checks that `E_p` and `E_q` factor; logs a warning above [`CONDITION_WARN`].
    ///
    /// Conditions are estimated after row and column equilibration, so
    /// unit scaling of the variables does not count.
    pub fn check_conditioning(&self) -> Result<(f64, f64)> {
        let mut conds = [1.0, 1.0];
        for (k, (m, which)) in [(&self.e_p, "E_p"), (&self.e_q, "E_q")].into_iter().enumerate() {
            if let Some(m) = m {
                let lu = SparseLu::new(&equilibrated(m)).map_err(|_| Error::SingularSubsystem { which })?;
                let c = lu.condition_estimate().as_f64();
                if !c.is_finite() {
                    return Err(Error::SingularSubsystem { which });
                }
                if c > CONDITION_WARN {
                    log::warn!("{which} condition estimate {c:.3e} exceeds {CONDITION_WARN:.0e}");
                }
                conds[k] = c;
            }
        }
        Ok((conds[0], conds[1]))
    }

    /// Writes every coefficient as Matrix Market plus `manifest.json`.
    pub fn export(&self, dir: &Path, tolerance: f64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: &str, m: &CsrMatrix<T>| -> Result<()> {
            let file = format!("{name}.mtx");
            write_matrix_market(&dir.join(&file), m)?;
            files.push(file);
            Ok(())
        };
        if let Some(m) = &self.e_p {
            put("E_p", m)?;
        }
        put("A_p", &self.a_p)?;
        put("B_p", &self.b_p)?;
        if let Some(m) = &self.e_q {
            put("E_q", m)?;
        }
        put("A_q", &self.a_q)?;
        put("B_q", &self.b_q)?;
        put("C_p", &self.c_p)?;
        put("C_q", &self.c_q)?;
        put("p0", &self.p0.basis)?;
        put("p0_left", &self.p0.left_inverse)?;
        put("q0", &self.q0.basis)?;
        put("q0_left", &self.q0.left_inverse)?;
        if let Some(m) = &self.p_hat {
            put("p_hat", m)?;
        }
        if let Some(m) = &self.q_hat {
            put("q_hat", m)?;
        }
        put("G", &self.lift)?;
        put("Pi_p", &self.proj_p)?;
        if let Some(m) = &self.proj_q {
            put("Pi_q", m)?;
        }
        let manifest = serde_json::json!({
            "form": self.form,
            "n": self.n(),
            "n_p": self.n_p(),
            "n_q": self.n_q(),
            "inputs": self.inputs(),
            "outputs": self.outputs(),
            "f_q_vanishes": self.f_q_vanishes(),
            "tolerance": tolerance,
            "files": files,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json"))?;
        Ok(())
    }
}

/// `p̂_0` spanning `Ker (E_1 q_0)ᵀ = Ker q_0ᵀE_1ᵀ` and `q̂_0` spanning `Ker E_0ᵀ`.
pub fn hat_bases<T: Scalar>(
    e0: &DMatrix<T>,
    e1: &DMatrix<T>,
    q0: &DMatrix<T>,
    p0: &DMatrix<T>,
    tol: T,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (n_q, n_p) = (q0.ncols(), p0.ncols());
    let p_hat = nullspace_basis(&(e1 * q0).transpose(), tol).basis;
    let q_hat = nullspace_basis(&e0.transpose(), tol).basis;
    if p_hat.ncols() != n_p || q_hat.ncols() != n_q {
        return Err(Error::Dimension(format!(
            "hat bases have {} and {} columns, expected n_p = {n_p} and n_q = {n_q}",
            p_hat.ncols(),
            q_hat.ncols()
        )));
    }
    Ok((p_hat, q_hat))
}

fn check_index_one<T: Scalar>(sys: &DescriptorSystem<T>, chain: &ProjectorChain<T>) -> Result<()> {
    if chain.index != 1 {
        return Err(Error::IndexNotOne { index: chain.index });
    }
    if chain.stages[0].e.nrows() != sys.n() {
        return Err(Error::Dimension(format!(
            "chain built for dimension {}, system has {}",
            chain.stages[0].e.nrows(),
            sys.n()
        )));
    }
    Ok(())
}

fn sparse<T: Scalar>(m: &DMatrix<T>) -> CsrMatrix<T> {
    CsrMatrix::from_dense(m, T::zero())
}

/// `D_r M D_c` with every row, then every column, scaled to unit max-norm.
fn equilibrated<T: Scalar>(m: &CsrMatrix<T>) -> CsrMatrix<T> {
    let mut row = vec![T::zero(); m.nrows()];
    for (i, _, v) in m.triplet_iter() {
        row[i] = row[i].max(v.abs());
    }
    let mut col = vec![T::zero(); m.ncols()];
    for (i, j, v) in m.triplet_iter() {
        if row[i] > T::zero() {
            col[j] = col[j].max(v.abs() / row[i]);
        }
    }
    let t: Vec<(usize, usize, T)> = m
        .triplet_iter()
        .filter(|(i, j, _)| row[*i] > T::zero() && col[*j] > T::zero())
        .map(|(i, j, v)| (i, j, v / row[i] / col[j]))
        .collect();
    CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t)
}

/// `None` when `proj` has no entry in any column where `f` can be nonzero.
pub(crate) fn structural_projection<T: Scalar>(proj: CsrMatrix<T>, f: &dyn Nonlinearity<T>, tol: T) -> Option<CsrMatrix<T>> {
    let active = f.active_rows();
    let scale = proj.max_abs().max(T::one());
    let mut hit = vec![false; proj.ncols()];
    for &r in active {
        hit[r] = true;
    }
    let touches = proj.triplet_iter().any(|(_, j, v)| hit[j] && v.abs() > tol * scale);
    touches.then_some(proj)
}

/// Explicit decoupling with coefficients `p_0*ᵀE_1⁻¹(·)` and `q_0*ᵀE_1⁻¹(·)`.
///
/// `E_1` is applied through its sparse LU factors only.
pub fn explicit_decouple<T: Scalar>(sys: &DescriptorSystem<T>, chain: &ProjectorChain<T>) -> Result<DecoupledSystem<T>> {
    check_index_one(sys, chain)?;
    let st = &chain.stages[0];
    let e1 = chain.e1().expect("index-1 chain has E_1");
    let e1s = sparse(e1);
    let lu = SparseLu::new(&e1s).map_err(|_| Error::SingularE1)?;
    let p0 = &st.p_basis;
    let q0 = &st.q_basis;
    let n = sys.n();

    // rows of p0*ᵀE1⁻¹ are E1⁻ᵀ applied to the columns of p0*
    let left_solve = |li: &DMatrix<T>| -> DMatrix<T> {
        let mut out = DMatrix::zeros(li.nrows(), n);
        for r in 0..li.nrows() {
            let row = lu.solve_transpose(&li.row(r).transpose());
            out.set_row(r, &row.transpose());
        }
        out
    };
    let pp = left_solve(&p0.left_inverse);
    let pq = left_solve(&q0.left_inverse);
    let a0p0 = sys.a.mul_dense(&p0.basis);
    let b = sys.b.to_dense();
    let tol = chain.rank_tolerance;
    let dec = DecoupledSystem {
        form: DecoupledForm::Explicit,
        e_p: None,
        a_p: sparse(&(&pp * &a0p0)),
        b_p: sparse(&(&pp * &b)),
        e_q: None,
        a_q: sparse(&(&pq * &a0p0)),
        b_q: sparse(&(&pq * &b)),
        c_p: sparse(&sys.c.mul_dense(&p0.basis)),
        c_q: sparse(&sys.c.mul_dense(&q0.basis)),
        p0: p0.to_sparse(),
        q0: q0.to_sparse(),
        p_hat: None,
        q_hat: None,
        f: sys.f.clone(),
        lift: sparse(&sys.e.mul_dense(&p0.basis)),
        proj_p: sparse(&pp),
        proj_q: structural_projection(sparse(&pq), sys.f.as_ref(), tol),
        e1: Some(e1s),
    };
    Ok(dec)
}

/// Implicit decoupling with `p̂_0`, `q̂_0`; no inverse of `E_1` is formed.
pub fn implicit_decouple<T: Scalar>(sys: &DescriptorSystem<T>, chain: &ProjectorChain<T>) -> Result<DecoupledSystem<T>> {
    check_index_one(sys, chain)?;
    let st = &chain.stages[0];
    let e1 = chain.e1().expect("index-1 chain has E_1");
    let p0 = &st.p_basis;
    let q0 = &st.q_basis;
    let tol = chain.rank_tolerance;
    let (p_hat, q_hat) = hat_bases(&st.e, e1, &q0.basis, &p0.basis, tol)?;
    let a0 = &st.a;
    let b = sys.b.to_dense();
    let pht = p_hat.transpose();
    let qht = q_hat.transpose();
    let dec = DecoupledSystem {
        form: DecoupledForm::Implicit,
        e_p: Some(sparse(&(&pht * &st.e * &p0.basis))),
        a_p: sparse(&(&pht * a0 * &p0.basis)),
        b_p: sparse(&(&pht * &b)),
        e_q: Some(sparse(&(-(&qht * a0 * &q0.basis)))),
        a_q: sparse(&(&qht * a0 * &p0.basis)),
        b_q: sparse(&(&qht * &b)),
        c_p: sparse(&sys.c.mul_dense(&p0.basis)),
        c_q: sparse(&sys.c.mul_dense(&q0.basis)),
        p0: p0.to_sparse(),
        q0: q0.to_sparse(),
        p_hat: Some(sparse(&p_hat)),
        q_hat: Some(sparse(&q_hat)),
        f: sys.f.clone(),
        lift: sparse(&sys.e.mul_dense(&p0.basis)),
        proj_p: sparse(&pht),
        proj_q: structural_projection(sparse(&qht), sys.f.as_ref(), tol),
        e1: Some(sparse(e1)),
    };
    dec.check_conditioning()?;
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pencil::{build_projector_chain, ChainOptions};
    use nalgebra::dmatrix;

    fn semi_explicit() -> DescriptorSystem<f64> {
        let e = CsrMatrix::from_dense(&dmatrix![1.0, 0.0; 0.0, 0.0], 0.0);
        let a = CsrMatrix::from_dense(&dmatrix![-1.0, 0.0; 0.0, -1.0], 0.0);
        let b = CsrMatrix::from_dense(&dmatrix![0.0; 1.0], 0.0);
        let c = CsrMatrix::identity(2);
        DescriptorSystem::linear(e, a, b, c).unwrap()
    }

    #[test]
    fn semi_explicit_explicit_form() {
        let sys = semi_explicit();
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        let d = explicit_decouple(&sys, &ch).unwrap();
        assert_eq!((d.n_p(), d.n_q()), (1, 1));
        // ξ_p' = −ξ_p, ξ_q = u (in the chosen basis signs)
        assert!((d.a_p.to_dense()[(0, 0)] + 1.0).abs() < 1e-14);
        let u = DVector::from_vec(vec![3.0]);
        let xq = d.solve_algebraic(None, &DVector::zeros(1), &u).unwrap();
        let x = d.recompose_state(&DVector::zeros(1), &xq);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn semi_explicit_implicit_form() {
        let sys = semi_explicit();
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        let d = implicit_decouple(&sys, &ch).unwrap();
        let ep = d.e_p.as_ref().unwrap().to_dense()[(0, 0)];
        assert!((ep.abs() - 1.0).abs() < 1e-14);
        let ap = d.a_p.to_dense()[(0, 0)];
        assert!((ap / ep + 1.0).abs() < 1e-14);
        assert!(d.f_q_vanishes());
    }

    #[test]
    fn index_two_rejected() {
        let e = CsrMatrix::from_dense(&dmatrix![1.0, 0.0; 0.0, 0.0], 0.0);
        let a = CsrMatrix::from_dense(&dmatrix![0.0, 1.0; 1.0, 0.0], 0.0);
        let sys = DescriptorSystem::linear(e, a, CsrMatrix::zeros(2, 1), CsrMatrix::identity(2)).unwrap();
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        assert!(matches!(explicit_decouple(&sys, &ch), Err(Error::IndexNotOne { index: 2 })));
        assert!(matches!(implicit_decouple(&sys, &ch), Err(Error::IndexNotOne { index: 2 })));
    }

    #[test]
    fn zero_state_initializes_to_zero() {
        let sys = semi_explicit();
        let ch = build_projector_chain(&sys.e.to_dense(), &sys.a.to_dense(), ChainOptions::default()).unwrap();
        let d = implicit_decouple(&sys, &ch).unwrap();
        let init = d.consistent_initialize(&DVector::zeros(2), &DVector::zeros(1)).unwrap();
        assert_eq!(init.xi_p.norm() + init.xi_q.norm() + init.residual, 0.0);
    }
}
