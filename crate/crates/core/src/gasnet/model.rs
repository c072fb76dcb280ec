use std::sync::Arc;

use nalgebra::DVector;

use super::network::{GasNetwork, GRAVITY};
use crate::error::{Error, Result};
use crate::nonlinear::Nonlinearity;
use crate::sparse::{BlockBuilder, CsrMatrix, SparseLu};
use crate::system::DescriptorSystem;

/// Signed and unsigned incidence blocks plus demand placement.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceSet {
    pub a_s: CsrMatrix<f64>,
    pub a_0: CsrMatrix<f64>,
    pub abs_a_s: CsrMatrix<f64>,
    pub abs_a_0: CsrMatrix<f64>,
    pub b_d: CsrMatrix<f64>,
}

/// Column `k` carries −1 at the from-node and +1 at the to-node; supply rows
/// form `A_S`, the remaining nodes (in file order) form `A_0`.
pub fn incidence_matrices(net: &GasNetwork) -> IncidenceSet {
    let supply = net.supply_nodes();
    let pressure = net.pressure_nodes();
    let mut row_of = vec![(false, 0usize); net.nodes.len()];
    for (r, &v) in supply.iter().enumerate() {
        row_of[v] = (true, r);
    }
    for (r, &v) in pressure.iter().enumerate() {
        row_of[v] = (false, r);
    }
    let (mut ts, mut t0) = (Vec::new(), Vec::new());
    for (k, &(a, b)) in net.ends.iter().enumerate() {
        for (v, sign) in [(a, -1.0), (b, 1.0)] {
            let (is_s, r) = row_of[v];
            if is_s { &mut ts } else { &mut t0 }.push((r, k, sign));
        }
    }
    let ne = net.n_e();
    let a_s = CsrMatrix::from_triplets(supply.len(), ne, &ts);
    let a_0 = CsrMatrix::from_triplets(pressure.len(), ne, &t0);
    let abs = |m: &CsrMatrix<f64>| {
        let t: Vec<_> = m.triplet_iter().map(|(i, j, v)| (i, j, v.abs())).collect();
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t)
    };
    let demand: Vec<_> = net.demand_nodes().iter().enumerate().map(|(c, &v)| (row_of[v].1, c, 1.0)).collect();
    IncidenceSet {
        abs_a_s: abs(&a_s),
        abs_a_0: abs(&a_0),
        b_d: CsrMatrix::from_triplets(pressure.len(), demand.len(), &demand),
        a_s,
        a_0,
    }
}

/// Per-pipe coefficients of `g_k(ψ, q) = a_k ψ + b_k q|q|/ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrictionCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FrictionCoefficients {
    pub fn new(net: &GasNetwork) -> Self {
        let g0 = net.gamma0();
        let mut a = Vec::with_capacity(net.n_e());
        let mut b = Vec::with_capacity(net.n_e());
        for (k, p) in net.pipes.iter().enumerate() {
            let area = p.area();
            a.push(-GRAVITY * area * net.dh[k] / (2.0 * g0 * p.length));
            b.push(-net.lambda[k] * g0 / (4.0 * p.diameter * area));
        }
        Self { a, b }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    #[inline]
    pub fn value(&self, k: usize, psi: f64, q: f64) -> Result<f64> {
        if psi <= 0.0 || psi.is_nan() {
            return Err(Error::NonPhysicalPressure { pipe: k, value: psi });
        }
        Ok(self.a[k] * psi + self.b[k] * q * q.abs() / psi)
    }

    /// `(∂g/∂ψ, ∂g/∂q)`.
    #[inline]
    pub fn gradient(&self, k: usize, psi: f64, q: f64) -> Result<(f64, f64)> {
        if psi <= 0.0 || psi.is_nan() {
            return Err(Error::NonPhysicalPressure { pipe: k, value: psi });
        }
        Ok((self.a[k] - self.b[k] * q * q.abs() / (psi * psi), 2.0 * self.b[k] * q.abs() / psi))
    }
}

/// Friction and gravity term `g(q_+, ψ)` for every pipe.
pub fn eval_friction_gravity(q_plus: &[f64], psi: &[f64], net: &GasNetwork) -> Result<Vec<f64>> {
    let c = FrictionCoefficients::new(net);
    if q_plus.len() != c.len() || psi.len() != c.len() {
        return Err(Error::Dimension(format!("expected {} pipe values", c.len())));
    }
    (0..c.len()).map(|k| c.value(k, psi[k], q_plus[k])).collect()
}

/// `f(z)` of the gas DAE, with `z = E x = (ψ, q_+, 0)`; row `n_E + k` reads `z[k]` and `z[n_E + k]`.
#[derive(Clone, Debug)]
pub struct FrictionGravity {
    n: usize,
    n_e: usize,
    coef: FrictionCoefficients,
    rows: Vec<usize>,
    deps: Vec<[usize; 2]>,
}

impl FrictionGravity {
    pub fn new(net: &GasNetwork) -> Self {
        let n_e = net.n_e();
        Self {
            n: net.dae_dim(),
            n_e,
            coef: FrictionCoefficients::new(net),
            rows: (n_e..2 * n_e).collect(),
            deps: (0..n_e).map(|k| [k, n_e + k]).collect(),
        }
    }

    fn pipe(&self, row: usize) -> Option<usize> {
        (self.n_e..2 * self.n_e).contains(&row).then(|| row - self.n_e)
    }
}

impl Nonlinearity<f64> for FrictionGravity {
    fn dim(&self) -> usize {
        self.n
    }
    fn active_rows(&self) -> &[usize] {
        &self.rows
    }
    fn dependencies(&self, row: usize) -> &[usize] {
        match self.pipe(row) {
            Some(k) => &self.deps[k],
            None => &[],
        }
    }
    fn eval_row(&self, row: usize, z: &[f64]) -> Result<f64> {
        match self.pipe(row) {
            Some(k) => self.coef.value(k, z[k], z[self.n_e + k]),
            None => Ok(0.0),
        }
    }
    fn grad_row(&self, row: usize, z: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(k) = self.pipe(row) {
            let (gp, gq) = self.coef.gradient(k, z[k], z[self.n_e + k])?;
            out[0] = gp;
            out[1] = gq;
        }
        Ok(())
    }
}

/// Model constants beyond the network itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GasOptions {
    /// Multiplies `M_A`.
    pub c_cal: f64,
}

impl Default for GasOptions {
    fn default() -> Self {
        Self { c_cal: 1.0 }
    }
}

/// Block sizes of the gas state `x = (q_−, q_+, p_d, p_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GasLayout {
    pub n_e: usize,
    /// `n_d + n_0`.
    pub n_v0: usize,
    pub n_s: usize,
    pub n_d: usize,
}

impl GasLayout {
    pub fn new(net: &GasNetwork) -> Self {
        Self { n_e: net.n_e(), n_v0: net.n_d() + net.n_0(), n_s: net.n_s(), n_d: net.n_d() }
    }

    pub fn n(&self) -> usize {
        2 * self.n_e + self.n_v0 + self.n_s
    }

    /// `n_d + n_0 + n_s`.
    pub fn n_v(&self) -> usize {
        self.n_v0 + self.n_s
    }

    pub fn inputs(&self) -> usize {
        self.n_s + self.n_d
    }

    pub fn outputs(&self) -> usize {
        self.n_s + self.n_d
    }

    pub fn q_minus(&self) -> std::ops::Range<usize> {
        0..self.n_e
    }

    pub fn q_plus(&self) -> std::ops::Range<usize> {
        self.n_e..2 * self.n_e
    }

    pub fn p_d(&self) -> std::ops::Range<usize> {
        2 * self.n_e..2 * self.n_e + self.n_v0
    }

    pub fn p_s(&self) -> std::ops::Range<usize> {
        2 * self.n_e + self.n_v0..self.n()
    }

    /// Output groups: supply mass flow, then demand pressure.
    pub fn output_groups(&self) -> Vec<std::ops::Range<usize>> {
        vec![0..self.n_s, self.n_s..self.n_s + self.n_d]
    }
}

/// Assembled gas DAE together with the data it was built from.
#[derive(Clone, Debug)]
pub struct GasDae {
    pub net: GasNetwork,
    pub layout: GasLayout,
    pub inc: IncidenceSet,
    /// Diagonal of `M_L`.
    pub m_l: Vec<f64>,
    /// Diagonal of `M_A`, calibration included.
    pub m_a: Vec<f64>,
    pub sys: DescriptorSystem<f64>,
}

impl GasDae {
    /// `E_13 = [|A_0ᵀ| |A_Sᵀ|]`.
    pub fn e13(&self) -> CsrMatrix<f64> {
        let l = &self.layout;
        let mut bb = BlockBuilder::new(l.n_e, l.n_v());
        bb.block(0, 0, &self.inc.abs_a_0.transpose(), 1.0);
        bb.block(0, l.n_v0, &self.inc.abs_a_s.transpose(), 1.0);
        bb.build()
    }

    /// `ψ = |A_Sᵀ| p_s + |A_0ᵀ| p_d`.
    pub fn psi(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let pd = DVector::from_column_slice(&x.as_slice()[l.p_d()]);
        let ps = DVector::from_column_slice(&x.as_slice()[l.p_s()]);
        self.inc.abs_a_0.tr_mul_vec(&pd) + self.inc.abs_a_s.tr_mul_vec(&ps)
    }
}

fn diag_scaled(d: &[f64], m: &CsrMatrix<f64>) -> CsrMatrix<f64> {
    CsrMatrix::from_diagonal(d).matmul(m)
}

/// Assembles `E x' = A x + f(E x) + B u`, `y = C x` with `u = (s, d)`.
pub fn assemble_dae(net: &GasNetwork, opts: GasOptions) -> Result<GasDae> {
    let layout = GasLayout::new(net);
    let inc = incidence_matrices(net);
    let g0 = net.gamma0();
    let m_l: Vec<f64> = net.pipes.iter().map(|p| p.length * p.area() / g0).collect();
    let m_a: Vec<f64> = net.pipes.iter().map(|p| -opts.c_cal * p.area() / p.length).collect();
    let GasLayout { n_e, n_v0, n_s, n_d } = layout;
    let n = layout.n();
    let (o2, o3, o4) = (n_e, 2 * n_e, 2 * n_e + n_v0);

    let mut e = BlockBuilder::new(n, n);
    e.block(0, o3, &inc.abs_a_0.transpose(), 1.0)
        .block(0, o4, &inc.abs_a_s.transpose(), 1.0)
        .block(o2, o2, &CsrMatrix::identity(n_e), 1.0);

    let ml_inv: Vec<f64> = m_l.iter().map(|v| -1.0 / v).collect();
    let mut a = BlockBuilder::new(n, n);
    a.block(0, 0, &CsrMatrix::from_diagonal(&ml_inv), 1.0)
        .block(o2, o3, &diag_scaled(&m_a, &inc.a_0.transpose()), 1.0)
        .block(o2, o4, &diag_scaled(&m_a, &inc.a_s.transpose()), 1.0)
        .block(o3, 0, &inc.abs_a_0, 1.0)
        .block(o3, o2, &inc.a_0, 1.0)
        .block(o4, o4, &CsrMatrix::identity(n_s), 1.0);

    let mut b = BlockBuilder::new(n, n_s + n_d);
    b.block(o3, n_s, &inc.b_d, -1.0).block(o4, 0, &CsrMatrix::identity(n_s), -1.0);

    let mut c = BlockBuilder::new(n_s + n_d, n);
    c.block(0, o2, &inc.abs_a_s, 1.0).block(n_s, o3, &inc.b_d.transpose(), 1.0);

    let sys = DescriptorSystem::new(
        e.build(),
        a.build(),
        b.build(),
        c.build(),
        Arc::new(FrictionGravity::new(net)),
        DVector::zeros(n),
    )?;
    Ok(GasDae { net: net.clone(), layout, inc, m_l, m_a, sys })
}

/// Index-reduced implicit ODE in `w = (p_d, q_+)`:
///
/// ```text
/// |A_0| M_L |A_0ᵀ| p_d' = A_0 q_+ − B_d d − |A_0| M_L |A_Sᵀ| s'
///                 q_+' = M_A A_0ᵀ p_d + M_A A_Sᵀ s + g(ψ, q_+)
/// ```
#[derive(Clone, Debug)]
pub struct GasOde {
    pub layout: GasLayout,
    pub mass: CsrMatrix<f64>,
    /// Linear part acting on `w`.
    pub a: CsrMatrix<f64>,
    /// Input map for `u = (s, d)`.
    pub b: CsrMatrix<f64>,
    /// Map of `s'`.
    pub b_sdot: CsrMatrix<f64>,
    pub c: CsrMatrix<f64>,
    /// DAE nonlinearity, reused through [`GasOde::lifted_parts`].
    pub f: Arc<dyn Nonlinearity<f64>>,
    coef: FrictionCoefficients,
    abs_a0_t: CsrMatrix<f64>,
    abs_as_t: CsrMatrix<f64>,
}

pub fn assemble_ode(dae: &GasDae) -> Result<GasOde> {
    let GasLayout { n_e, n_v0, n_s, n_d } = dae.layout;
    let inc = &dae.inc;
    let nt = n_v0 + n_e;
    let ml = CsrMatrix::from_diagonal(&dae.m_l);
    let top = inc.abs_a_0.matmul(&ml).matmul(&inc.abs_a_0.transpose());
    if n_v0 > 0 {
        SparseLu::new(&top).map_err(|_| Error::SingularMassMatrix)?;
    }
    let mut mass = BlockBuilder::new(nt, nt);
    mass.block(0, 0, &top, 1.0).block(n_v0, n_v0, &CsrMatrix::identity(n_e), 1.0);

    let mut a = BlockBuilder::new(nt, nt);
    a.block(0, n_v0, &inc.a_0, 1.0).block(n_v0, 0, &diag_scaled(&dae.m_a, &inc.a_0.transpose()), 1.0);

    let mut b = BlockBuilder::new(nt, n_s + n_d);
    b.block(0, n_s, &inc.b_d, -1.0).block(n_v0, 0, &diag_scaled(&dae.m_a, &inc.a_s.transpose()), 1.0);

    let mut bs = BlockBuilder::new(nt, n_s);
    bs.block(0, 0, &inc.abs_a_0.matmul(&ml).matmul(&inc.abs_a_s.transpose()), -1.0);

    let mut c = BlockBuilder::new(n_s + n_d, nt);
    c.block(0, n_v0, &inc.abs_a_s, 1.0).block(n_s, 0, &inc.b_d.transpose(), 1.0);

    Ok(GasOde {
        layout: dae.layout,
        mass: mass.build(),
        a: a.build(),
        b: b.build(),
        b_sdot: bs.build(),
        c: c.build(),
        f: dae.sys.f.clone(),
        coef: FrictionCoefficients::new(&dae.net),
        abs_a0_t: inc.abs_a_0.transpose(),
        abs_as_t: inc.abs_a_s.transpose(),
    })
}

impl GasOde {
    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    fn psi(&self, w: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let pd = DVector::from_column_slice(&w.as_slice()[..self.layout.n_v0]);
        let s = DVector::from_column_slice(&u.as_slice()[..self.layout.n_s]);
        self.abs_a0_t.mul_vec(&pd) + self.abs_as_t.mul_vec(&s)
    }

    /// Right-hand side at state `w`, input `u = (s, d)` and supply rate `s'`.
    pub fn rhs(&self, w: &DVector<f64>, u: &DVector<f64>, sdot: &DVector<f64>) -> Result<DVector<f64>> {
        let mut r = self.a.mul_vec(w);
        self.b.mul_vec_acc(1.0, u, &mut r);
        self.b_sdot.mul_vec_acc(1.0, sdot, &mut r);
        let psi = self.psi(w, u);
        let off = self.layout.n_v0;
        for k in 0..self.layout.n_e {
            r[off + k] += self.coef.value(k, psi[k], w[off + k])?;
        }
        Ok(r)
    }

    /// `∂ rhs / ∂w`.
    pub fn jacobian(&self, w: &DVector<f64>, u: &DVector<f64>) -> Result<CsrMatrix<f64>> {
        let psi = self.psi(w, u);
        let off = self.layout.n_v0;
        let n_e = self.layout.n_e;
        let mut gp = Vec::with_capacity(n_e);
        let mut trip = Vec::with_capacity(n_e);
        for k in 0..n_e {
            let (dp, dq) = self.coef.gradient(k, psi[k], w[off + k])?;
            gp.push(dp);
            trip.push((off + k, off + k, dq));
        }
        let dpsi = diag_scaled(&gp, &self.abs_a0_t);
        let mut bb = BlockBuilder::new(self.dim(), self.dim());
        bb.block(off, 0, &dpsi, 1.0);
        for (i, j, v) in trip {
            bb.entry(i, j, v);
        }
        Ok(self.a.add_scaled(1.0, &bb.build(), 1.0))
    }

    pub fn output(&self, w: &DVector<f64>) -> DVector<f64> {
        self.c.mul_vec(w)
    }

    /// `(G, H, Π)` with the nonlinear term equal to `Π f(G w + H u)`, `f` the DAE nonlinearity.
    pub fn lifted_parts(&self) -> (CsrMatrix<f64>, CsrMatrix<f64>, CsrMatrix<f64>) {
        let GasLayout { n_e, n_v0, n_s, n_d } = self.layout;
        let n = self.layout.n();
        let eye = CsrMatrix::identity(n_e);
        let mut g = BlockBuilder::new(n, self.dim());
        g.block(0, 0, &self.abs_a0_t, 1.0).block(n_e, n_v0, &eye, 1.0);
        let mut h = BlockBuilder::new(n, n_s + n_d);
        h.block(0, 0, &self.abs_as_t, 1.0);
        let mut p = BlockBuilder::new(self.dim(), n);
        p.block(n_v0, n_e, &eye, 1.0);
        (g.build(), h.build(), p.build())
    }

    /// `s'` map padded to the full input `u = (s, d)`.
    pub fn input_rate_matrix(&self) -> CsrMatrix<f64> {
        let mut b = BlockBuilder::new(self.dim(), self.layout.inputs());
        b.block(0, 0, &self.b_sdot, 1.0);
        b.build()
    }

    /// `w = (p_d, q_+)` from a DAE state.
    pub fn state_from_dae(&self, x: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let mut w = DVector::zeros(self.dim());
        w.as_mut_slice()[..l.n_v0].copy_from_slice(&x.as_slice()[l.p_d()]);
        w.as_mut_slice()[l.n_v0..].copy_from_slice(&x.as_slice()[l.q_plus()]);
        w
    }
}
