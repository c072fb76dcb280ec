//! Block-structured decoupling of the gas DAE.
//!
//! Everything is built from sparse kernels of `E_13` and of the small
//! coupling row block, so the cost stays linear in the network size for
//! tree-like networks.

use super::model::GasDae;
use crate::decouple::{structural_projection, DecoupledForm, DecoupledSystem};
use crate::error::{Error, Result};
use crate::pencil::SparseBasisPair;
use crate::sparse::{sparse_nullspace, BlockBuilder, CsrMatrix, SparseLu};

/// Relative drop tolerance of the sparse eliminations.
pub const STRUCTURED_TOL: f64 = 1e-12;

/// Kernel and complement bases of `E_13` together with their sizes.
#[derive(Clone, Debug)]
pub struct E13Split {
    /// `q`, spanning `Ker E_13`.
    pub q: SparseBasisPair<f64>,
    /// `p`, unit vectors completing `q`.
    pub p: SparseBasisPair<f64>,
}

impl E13Split {
    pub fn k_q(&self) -> usize {
        self.q.dim()
    }

    pub fn k_p(&self) -> usize {
        self.p.dim()
    }
}

pub fn split_e13(dae: &GasDae, tol: f64) -> E13Split {
    let ns = sparse_nullspace(&dae.e13(), tol);
    E13Split {
        q: SparseBasisPair { basis: ns.basis.clone(), left_inverse: ns.basis_left_inverse() },
        p: SparseBasisPair { basis: ns.complement(), left_inverse: ns.complement_left_inverse() },
    }
}

/// Decouples the gas DAE using `Q_0 = blkdiag(I, 0, Q)` with `Q` projecting onto `Ker E_13`.
///
/// Differential variables are `ξ_p = (q_+, p*ᵀx_3)`, algebraic ones
/// `ξ_q = (q_−, q*ᵀx_3)`. The result has the implicit form, and `f_q ≡ 0`.
pub fn structured_decouple(dae: &GasDae) -> Result<DecoupledSystem<f64>> {
    let l = dae.layout;
    let (n, n_e, n_v, n_v0) = (l.n(), l.n_e, l.n_v(), l.n_v0);
    let sys = &dae.sys;
    let split = split_e13(dae, STRUCTURED_TOL);
    let (k_q, k_p) = (split.k_q(), split.k_p());
    let (n_q, n_p) = (n_e + k_q, n_e + k_p);
    let eye = CsrMatrix::identity(n_e);
    let (o3,) = (2 * n_e,);

    let pair = |first_row: usize, b: &SparseBasisPair<f64>| {
        let mut basis = BlockBuilder::new(n, n_e + b.dim());
        basis.block(first_row, 0, &eye, 1.0).block(o3, n_e, &b.basis, 1.0);
        let mut left = BlockBuilder::new(n_e + b.dim(), n);
        left.block(0, first_row, &eye, 1.0).block(n_e, o3, &b.left_inverse, 1.0);
        SparseBasisPair { basis: basis.build(), left_inverse: left.build() }
    };
    let q0 = pair(0, &split.q);
    let p0 = pair(n_e, &split.p);

    let a0q0 = sys.a.matmul(&q0.basis);
    let e1 = sys.e.add_scaled(1.0, &a0q0.matmul(&q0.left_inverse), -1.0);
    SparseLu::new(&e1).map_err(|_| Error::IndexNotOne { index: 2 })?;

    // p̂_0 = (M_L A_31ᵀ v_3, v_2, v_3) with (v_2, v_3) in the kernel of q0ᵀ A0ᵀ restricted to rows 2–3
    let coupling = a0q0.select_rows(&(n_e..n).collect::<Vec<_>>());
    let coupling_t = coupling.transpose();
    let k2 = coupling_t.select_rows(&(n_e..n_q).collect::<Vec<_>>());
    let ker = sparse_nullspace(&k2, STRUCTURED_TOL);
    if ker.dim() != n_p {
        return Err(Error::IndexNotOne { index: 2 });
    }
    let v3d = ker.basis.select_rows(&(n_e..n_e + n_v0).collect::<Vec<_>>());
    let v1 = CsrMatrix::from_diagonal(&dae.m_l).matmul(&dae.inc.abs_a_0.transpose()).matmul(&v3d);
    let mut ph = BlockBuilder::new(n, n_p);
    ph.block(0, 0, &v1, 1.0).block(n_e, 0, &ker.basis, 1.0);
    let p_hat = ph.build();

    // q̂_0 = blkdiag(Ker E_13ᵀ, 0, I)
    let r = sparse_nullspace(&dae.e13().transpose(), STRUCTURED_TOL).basis;
    let mut qh = BlockBuilder::new(n, r.ncols() + n_v);
    qh.block(0, 0, &r, 1.0).block(o3, r.ncols(), &CsrMatrix::identity(n_v), 1.0);
    let q_hat = qh.build();
    if q_hat.ncols() != n_q {
        return Err(Error::Dimension(format!("q̂_0 has {} columns, expected {n_q}", q_hat.ncols())));
    }

    let pht = p_hat.transpose();
    let qht = q_hat.transpose();
    let a0p0 = sys.a.matmul(&p0.basis);
    let lift = sys.e.matmul(&p0.basis);
    let dec = DecoupledSystem {
        form: DecoupledForm::Implicit,
        e_p: Some(pht.matmul(&lift)),
        a_p: pht.matmul(&a0p0),
        b_p: pht.matmul(&sys.b),
        e_q: Some(qht.matmul(&a0q0).scale(-1.0)),
        a_q: qht.matmul(&a0p0),
        b_q: qht.matmul(&sys.b),
        c_p: sys.c.matmul(&p0.basis),
        c_q: sys.c.matmul(&q0.basis),
        proj_q: structural_projection(qht.clone(), sys.f.as_ref(), STRUCTURED_TOL),
        proj_p: pht,
        p_hat: Some(p_hat),
        q_hat: Some(q_hat),
        f: sys.f.clone(),
        lift,
        p0,
        q0,
        e1: Some(e1),
    };
    dec.check_conditioning()?;
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasnet::model::{assemble_dae, GasOptions};
    use crate::gasnet::network::{chain_network, ChainSpec, Friction};
    use nalgebra::DMatrix;

    fn dense_rank(m: &DMatrix<f64>) -> usize {
        let s = m.clone().svd(false, false).singular_values;
        let tol = s.max() * 1e-10 * m.nrows().max(m.ncols()) as f64;
        s.iter().filter(|&&v| v > tol).count()
    }

    #[test]
    fn chain_kernel_dimension_matches_rank_oracle() {
        for n in [1, 5, 10] {
            let net = chain_network(&ChainSpec::new(n, 500.0, 0.6, Friction::Lambda(0.01))).unwrap();
            let dae = assemble_dae(&net, GasOptions::default()).unwrap();
            let e13 = dae.e13().to_dense();
            let kq = e13.ncols() - dense_rank(&e13);
            assert_eq!(kq, 1);
            let dec = structured_decouple(&dae).unwrap();
            assert_eq!((dec.n_p(), dec.n_q()), (2 * n, n + 1));
            assert!(dec.f_q_vanishes());
        }
    }
}
