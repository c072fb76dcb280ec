//! POD/DEIM reduction: index-aware reduced models of decoupled systems and
//! one-sided POD baselines of the undecoupled models.

use std::collections::BTreeSet;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::decouple::DecoupledSystem;
use crate::error::{Error, Result};
use crate::integrate::{march, DifferentialPart, ImplicitModel, Inputs, SimOptions, TimeGrid, Trajectory};
use crate::io::write_dense_matrix_market;
use crate::nonlinear::Nonlinearity;
use crate::scalar::Scalar;
use crate::sparse::{CsrMatrix, SysMatrix};
use crate::system::DescriptorSystem;

/// Default POD energy fraction.
pub const DEFAULT_ENERGY: f64 = 1.0 - 1e-8;

/// Singular values below `RANK_TOL · σ_1` count as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PodCriterion {
    Rank(usize),
    /// Smallest `r` with `Σ_{i≤r} σ_i² ≥ fraction · Σ σ_i²`.
    Energy(f64),
}

#[derive(Clone, Debug)]
pub struct PodBasis<T: Scalar> {
    pub basis: DMatrix<T>,
    pub singular_values: Vec<T>,
    /// Fraction of snapshot energy captured by `basis`.
    pub energy: f64,
}

impl<T: Scalar> PodBasis<T> {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Numerical rank of the snapshot set.
    pub fn numerical_rank(&self) -> usize {
        let s1 = self.singular_values.first().map_or(0.0, |s| s.as_f64());
        self.singular_values.iter().filter(|s| s.as_f64() > RANK_TOL * s1).count()
    }
}

fn check_snapshots<T: Scalar>(s: &DMatrix<T>) -> Result<()> {
    if s.ncols() == 0 || s.nrows() == 0 {
        return Err(Error::EmptySnapshots);
    }
    if s.iter().any(|v| !v.as_f64().is_finite()) {
        return Err(Error::InvalidArgument("snapshots contain non-finite entries".into()));
    }
    Ok(())
}

/// Leading left singular vectors, each with its largest-magnitude entry positive.
pub fn pod_basis<T: Scalar>(snapshots: &DMatrix<T>, criterion: PodCriterion) -> Result<PodBasis<T>> {
    check_snapshots(snapshots)?;
    let svd = snapshots.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).expect("finite"));
    let sv: Vec<T> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let total: f64 = sv.iter().map(|s| s.as_f64().powi(2)).sum();
    let r = match criterion {
        PodCriterion::Rank(r) => {
            if r == 0 || r > sv.len() {
                return Err(Error::InvalidArgument(format!("POD rank {r} outside 1..={}", sv.len())));
            }
            r
        }
        PodCriterion::Energy(frac) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::InvalidArgument(format!("energy fraction {frac} outside (0, 1]")));
            }
            let mut acc = 0.0;
            let mut r = sv.len();
            for (k, s) in sv.iter().enumerate() {
                acc += s.as_f64().powi(2);
                if acc >= frac * total {
                    r = k + 1;
                    break;
                }
            }
            r
        }
    };
    let mut basis = DMatrix::zeros(snapshots.nrows(), r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let mut col = u.column(k).into_owned();
        let imax = col.iamax();
        if col[imax] < T::zero() {
            col = -col;
        }
        basis.set_column(c, &col);
    }
    let kept: f64 = sv.iter().take(r).map(|s| s.as_f64().powi(2)).sum();
    let energy = if total > 0.0 { kept / total } else { 1.0 };
    Ok(PodBasis { basis, singular_values: sv, energy })
}

/// `f ≈ U (WᵀU)⁻¹ Wᵀ f` with `W` selecting `rows`.
#[derive(Clone, Debug)]
pub struct DeimInterpolant<T: Scalar> {
    pub u: DMatrix<T>,
    pub rows: Vec<usize>,
    /// `(WᵀU)⁻¹`.
    pub wtu_inv: DMatrix<T>,
}

impl<T: Scalar> DeimInterpolant<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reconstructs `f` from its values on the picked rows.
    pub fn interpolate(&self, picked: &DVector<T>) -> DVector<T> {
        &self.u * (&self.wtu_inv * picked)
    }

    /// `Wᵀ f`.
    pub fn sample(&self, f: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| f[r]))
    }
}

/// Greedy DEIM point selection on an orthonormal basis `u`.
pub fn deim_from_basis<T: Scalar>(u: DMatrix<T>) -> Result<DeimInterpolant<T>> {
    let m = u.ncols();
    if m == 0 || m > u.nrows() {
        return Err(Error::InvalidArgument(format!("DEIM basis with {m} columns in dimension {}", u.nrows())));
    }
    let mut rows = vec![u.column(0).iamax()];
    for l in 1..m {
        let ul = u.columns(0, l).into_owned();
        let wtu = DMatrix::from_fn(l, l, |i, j| ul[(rows[i], j)]);
        let rhs = DVector::from_fn(l, |i, _| u[(rows[i], l)]);
        let c = wtu.lu().solve(&rhs).ok_or(Error::RankDeficiency { requested: m, rank: l })?;
        let res = u.column(l) - &ul * c;
        let next = res.iamax();
        if rows.contains(&next) || res[next].abs().as_f64() <= RANK_TOL {
            return Err(Error::RankDeficiency { requested: m, rank: l });
        }
        rows.push(next);
    }
    let wtu = DMatrix::from_fn(m, m, |i, j| u[(rows[i], j)]);
    let wtu_inv = wtu.try_inverse().ok_or(Error::RankDeficiency { requested: m, rank: m - 1 })?;
    Ok(DeimInterpolant { u, rows, wtu_inv })
}

/// DEIM with `m_f` points from nonlinearity snapshots.
pub fn deim_interpolant<T: Scalar>(f_snapshots: &DMatrix<T>, m_f: usize) -> Result<DeimInterpolant<T>> {
    check_snapshots(f_snapshots)?;
    let full = pod_basis(f_snapshots, PodCriterion::Energy(1.0))?;
    let rank = full.numerical_rank();
    if m_f == 0 || m_f > rank {
        return Err(Error::RankDeficiency { requested: m_f, rank });
    }
    let pod = pod_basis(f_snapshots, PodCriterion::Rank(m_f))?;
    deim_from_basis(pod.basis)
}

/// `N(x, u) = Π f(G x + H u)`.
#[derive(Clone, Debug)]
pub struct LiftedNonlinearity<T: Scalar> {
    pub f: Arc<dyn Nonlinearity<T>>,
    /// `G`, `dim f × dim x`.
    pub lift: CsrMatrix<T>,
    /// `H`, `dim f × dim u`.
    pub input_lift: Option<CsrMatrix<T>>,
    /// `Π`, `rows × dim f`.
    pub proj: CsrMatrix<T>,
}

impl<T: Scalar> LiftedNonlinearity<T> {
    pub fn rows(&self) -> usize {
        self.proj.nrows()
    }

    fn argument(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut z = self.lift.mul_vec(x);
        if let Some(h) = &self.input_lift {
            h.mul_vec_acc(T::one(), u, &mut z);
        }
        z
    }

    pub fn eval(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.proj.mul_vec(&self.f.eval(&self.argument(x, u))?))
    }
}

impl<T: Scalar> DecoupledSystem<T> {
    pub fn lifted_p(&self) -> LiftedNonlinearity<T> {
        LiftedNonlinearity { f: self.f.clone(), lift: self.lift.clone(), input_lift: None, proj: self.proj_p.clone() }
    }

    /// `None` when `f_q ≡ 0`.
    pub fn lifted_q(&self) -> Option<LiftedNonlinearity<T>> {
        self.proj_q.as_ref().map(|pq| LiftedNonlinearity {
            f: self.f.clone(),
            lift: self.lift.clone(),
            input_lift: None,
            proj: pq.clone(),
        })
    }
}

/// Reduced nonlinear term `K · Π[R, F] · f_F(G[D, :] V x_r + H[D, :] u)`.
///
/// `R` are the interpolation rows of `Π f`, `F` the rows of `f` they touch
/// and `D` the entries of `z` those rows read. Only `|F|` rows of `f` are
/// evaluated per call.
#[derive(Debug)]
pub struct ReducedNonlinearity<T: Scalar> {
    f: Arc<dyn Nonlinearity<T>>,
    f_rows: Vec<usize>,
    z_idx: Vec<usize>,
    /// Positions in `z_idx` of the dependencies of each row in `f_rows`.
    local_deps: Vec<Vec<usize>>,
    gv: DMatrix<T>,
    hu: Option<DMatrix<T>>,
    p_rf: DMatrix<T>,
    k: DMatrix<T>,
    scratch: Mutex<Vec<T>>,
    row_evals: AtomicUsize,
}

impl<T: Scalar> Clone for ReducedNonlinearity<T> {
    fn clone(&self) -> Self {
        Self {
            f: self.f.clone(),
            f_rows: self.f_rows.clone(),
            z_idx: self.z_idx.clone(),
            local_deps: self.local_deps.clone(),
            gv: self.gv.clone(),
            hu: self.hu.clone(),
            p_rf: self.p_rf.clone(),
            k: self.k.clone(),
            scratch: Mutex::new(vec![T::zero(); self.f.dim()]),
            row_evals: AtomicUsize::new(0),
        }
    }
}

impl<T: Scalar> ReducedNonlinearity<T> {
    /// `w_out` is the left projection (`V` for Galerkin); `deim = None` keeps every row.
    pub fn new(nl: &LiftedNonlinearity<T>, v: &DMatrix<T>, w_out: &DMatrix<T>, deim: Option<&DeimInterpolant<T>>) -> Result<Self> {
        if v.nrows() != nl.lift.ncols() || w_out.nrows() != nl.rows() {
            return Err(Error::Dimension(format!(
                "bases of {}x{} and {}x{} for a nonlinearity of shape {}x{}",
                v.nrows(),
                v.ncols(),
                w_out.nrows(),
                w_out.ncols(),
                nl.rows(),
                nl.lift.ncols()
            )));
        }
        let (rows, k) = match deim {
            Some(d) => {
                if d.u.nrows() != nl.rows() {
                    return Err(Error::Dimension("DEIM basis does not match the nonlinearity".into()));
                }
                (d.rows.clone(), w_out.transpose() * &d.u * &d.wtu_inv)
            }
            None => ((0..nl.rows()).collect(), w_out.transpose()),
        };
        let active: BTreeSet<usize> = nl.f.active_rows().iter().copied().collect();
        let mut f_rows = BTreeSet::new();
        for &r in &rows {
            let (cols, _) = nl.proj.row(r);
            f_rows.extend(cols.iter().copied().filter(|c| active.contains(c)));
        }
        let f_rows: Vec<usize> = f_rows.into_iter().collect();
        let z_idx: Vec<usize> = f_rows
            .iter()
            .flat_map(|&r| nl.f.dependencies(r).iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let local_deps = f_rows
            .iter()
            .map(|&r| nl.f.dependencies(r).iter().map(|d| z_idx.binary_search(d).expect("collected")).collect())
            .collect();
        let gv = nl.lift.select_rows(&z_idx).mul_dense(v);
        let hu = nl.input_lift.as_ref().map(|h| h.select_rows(&z_idx).to_dense());
        let p_rf = nl.proj.dense_submatrix(&rows, &f_rows);
        Ok(Self {
            f: nl.f.clone(),
            scratch: Mutex::new(vec![T::zero(); nl.f.dim()]),
            f_rows,
            z_idx,
            local_deps,
            gv,
            hu,
            p_rf,
            k,
            row_evals: AtomicUsize::new(0),
        })
    }

    /// Rows of `f` evaluated per call.
    pub fn rows_per_eval(&self) -> usize {
        self.f_rows.len()
    }

    /// Total row evaluations so far.
    pub fn row_evaluations(&self) -> usize {
        self.row_evals.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.row_evals.store(0, Ordering::Relaxed);
    }

    fn local_z(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut z = &self.gv * x;
        if let Some(h) = &self.hu {
            z += h * u;
        }
        z
    }

    pub fn eval(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let z = self.local_z(x, u);
        let mut buf = self.scratch.lock().expect("scratch lock");
        for (k, &i) in self.z_idx.iter().enumerate() {
            buf[i] = z[k];
        }
        let mut vals = DVector::zeros(self.f_rows.len());
        for (k, &r) in self.f_rows.iter().enumerate() {
            vals[k] = self.f.eval_row(r, &buf)?;
        }
        self.row_evals.fetch_add(self.f_rows.len(), Ordering::Relaxed);
        Ok(&self.k * (&self.p_rf * vals))
    }

    /// `∂/∂x` of [`eval`](Self::eval).
    pub fn jacobian(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DMatrix<T>> {
        let z = self.local_z(x, u);
        let mut buf = self.scratch.lock().expect("scratch lock");
        for (k, &i) in self.z_idx.iter().enumerate() {
            buf[i] = z[k];
        }
        let mut jfz = DMatrix::zeros(self.f_rows.len(), self.z_idx.len());
        let mut g = Vec::new();
        for (k, &r) in self.f_rows.iter().enumerate() {
            let deps = &self.local_deps[k];
            g.clear();
            g.resize(deps.len(), T::zero());
            self.f.grad_row(r, &buf, &mut g)?;
            for (&c, &v) in deps.iter().zip(&g) {
                jfz[(k, c)] += v;
            }
        }
        Ok(&self.k * (&self.p_rf * (jfz * &self.gv)))
    }
}

/// Dense reduced model `M x' = A x + N(x, u) + B u + B_d u'`, `y = C x`.
#[derive(Clone, Debug)]
pub struct ReducedSystem<T: Scalar> {
    pub mass: DMatrix<T>,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub b_dot: Option<DMatrix<T>>,
    pub c: DMatrix<T>,
    pub nl: Option<ReducedNonlinearity<T>>,
}

impl<T: Scalar> ReducedSystem<T> {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Fails with [`Error::SingularReducedPencil`] when `λM − A` is singular at
    /// every one of a few fixed sample points.
    pub fn check_pencil(&self) -> Result<()> {
        let scale = self.a.norm() / self.mass.norm().max(T::lit(f64::MIN_POSITIVE));
        for mu in [0.618_034, -1.324_718, 2.414_214] {
            let m = &self.mass * (T::lit(mu) * scale) - &self.a;
            let s = m.singular_values();
            let (lo, hi) = (s.min().as_f64(), s.max().as_f64());
            if hi > 0.0 && lo > 1e-13 * hi {
                return Ok(());
            }
        }
        Err(Error::SingularReducedPencil)
    }
}

impl<T: Scalar> ImplicitModel<T> for ReducedSystem<T> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply_mass(&self, v: &DVector<T>) -> DVector<T> {
        &self.mass * v
    }

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, udot: &DVector<T>) -> Result<DVector<T>> {
        let mut r = &self.a * x + &self.b * u;
        if let Some(bd) = &self.b_dot {
            r += bd * udot;
        }
        if let Some(nl) = &self.nl {
            r += nl.eval(x, u)?;
        }
        Ok(r)
    }

    fn iteration_matrix(&self, x: &DVector<T>, u: &DVector<T>, c: T) -> Result<SysMatrix<T>> {
        let mut j = self.a.clone();
        if let Some(nl) = &self.nl {
            j += nl.jacobian(x, u)?;
        }
        Ok(SysMatrix::Dense(&self.mass - j * c))
    }

    fn output(&self, x: &DVector<T>, _u: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.c * x)
    }

    fn is_linear(&self) -> bool {
        self.nl.is_none()
    }
}

/// Index-aware reduced model of a decoupled system.
#[derive(Clone, Debug)]
pub struct Irom<T: Scalar> {
    /// Differential part; its `c` is `C_pr`.
    pub diff: ReducedSystem<T>,
    pub v_p: DMatrix<T>,
    pub v_q: DMatrix<T>,
    pub e_qr: DMatrix<T>,
    pub a_qr: DMatrix<T>,
    pub b_qr: DMatrix<T>,
    pub c_qr: DMatrix<T>,
    pub nl_q: Option<ReducedNonlinearity<T>>,
    /// Dimension of the parent system.
    pub full_dim: usize,
    e_qr_lu: nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<T: Scalar> Irom<T> {
    pub fn r_p(&self) -> usize {
        self.v_p.ncols()
    }

    pub fn r_q(&self) -> usize {
        self.v_q.ncols()
    }

    pub fn r(&self) -> usize {
        self.r_p() + self.r_q()
    }

    pub fn solve_algebraic(&self, xi_p: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        let mut rhs = &self.a_qr * xi_p + &self.b_qr * u;
        if let Some(nl) = &self.nl_q {
            rhs += nl.eval(xi_p, u)?;
        }
        self.e_qr_lu.solve(&rhs).ok_or(Error::SingularAlgebraicBlock)
    }

    pub fn output(&self, xi_p: &DVector<T>, xi_q: &DVector<T>) -> DVector<T> {
        &self.diff.c * xi_p + &self.c_qr * xi_q
    }

    /// `f`-row evaluations so far, over both subsystems.
    pub fn row_evaluations(&self) -> usize {
        self.diff.nl.as_ref().map_or(0, |n| n.row_evaluations()) + self.nl_q.as_ref().map_or(0, |n| n.row_evaluations())
    }

    pub fn reset_counters(&self) {
        if let Some(n) = &self.diff.nl {
            n.reset_counter();
        }
        if let Some(n) = &self.nl_q {
            n.reset_counter();
        }
    }

    /// Writes bases and reduced coefficients plus `manifest.json`.
    pub fn export(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mats = [
            ("V_p", &self.v_p),
            ("V_q", &self.v_q),
            ("E_pr", &self.diff.mass),
            ("A_pr", &self.diff.a),
            ("B_pr", &self.diff.b),
            ("C_pr", &self.diff.c),
            ("E_qr", &self.e_qr),
            ("A_qr", &self.a_qr),
            ("B_qr", &self.b_qr),
            ("C_qr", &self.c_qr),
        ];
        let mut files = Vec::new();
        for (name, m) in mats {
            let file = format!("{name}.mtx");
            write_dense_matrix_market(&dir.join(&file), m)?;
            files.push(file);
        }
        let manifest = serde_json::json!({
            "r_p": self.r_p(),
            "r_q": self.r_q(),
            "r": self.r(),
            "n": self.full_dim,
            "deim_rows_p": self.diff.nl.as_ref().map(|n| n.rows_per_eval()),
            "deim_rows_q": self.nl_q.as_ref().map(|n| n.rows_per_eval()),
            "files": files,
            "meta": meta,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json"))?;
        Ok(())
    }
}

fn proj_sparse<T: Scalar>(w: &DMatrix<T>, m: &CsrMatrix<T>, v: &DMatrix<T>) -> DMatrix<T> {
    m.tr_mul_dense(w).transpose() * v
}

fn check_orthonormal<T: Scalar>(v: &DMatrix<T>, what: &str) -> Result<()> {
    let err = (v.transpose() * v - DMatrix::identity(v.ncols(), v.ncols())).norm().as_f64();
    if err > 1e-8 {
        return Err(Error::InvalidArgument(format!("{what} is not orthonormal (‖VᵀV − I‖ = {err:.2e})")));
    }
    Ok(())
}

/// Projects a decoupled system with `V_p`, `V_q`.
///
/// `deim_p`/`deim_q` of `None` keep the full nonlinear term (Galerkin only).
pub fn build_irom<T: Scalar>(
    dec: &DecoupledSystem<T>,
    v_p: &DMatrix<T>,
    v_q: &DMatrix<T>,
    deim_p: Option<&DeimInterpolant<T>>,
    deim_q: Option<&DeimInterpolant<T>>,
) -> Result<Irom<T>> {
    if v_p.nrows() != dec.n_p() || v_q.nrows() != dec.n_q() {
        return Err(Error::Dimension(format!(
            "bases have {} and {} rows, expected n_p = {} and n_q = {}",
            v_p.nrows(),
            v_q.nrows(),
            dec.n_p(),
            dec.n_q()
        )));
    }
    check_orthonormal(v_p, "V_p")?;
    check_orthonormal(v_q, "V_q")?;
    let e_p = dec.e_p_matrix();
    let e_q = dec.e_q_matrix();
    let nl_p = if dec.f.is_zero() { None } else { Some(ReducedNonlinearity::new(&dec.lifted_p(), v_p, v_p, deim_p)?) };
    let nl_q = match dec.lifted_q() {
        Some(l) if !dec.f.is_zero() => Some(ReducedNonlinearity::new(&l, v_p, v_q, deim_q)?),
        _ => None,
    };
    let e_qr = proj_sparse(v_q, &e_q, v_q);
    let e_qr_lu = e_qr.clone().lu();
    if !e_qr_lu.is_invertible() {
        return Err(Error::SingularAlgebraicBlock);
    }
    let diff = ReducedSystem {
        mass: proj_sparse(v_p, &e_p, v_p),
        a: proj_sparse(v_p, &dec.a_p, v_p),
        b: dec.b_p.tr_mul_dense(v_p).transpose(),
        b_dot: None,
        c: dec.c_p.mul_dense(v_p),
        nl: nl_p,
    };
    Ok(Irom {
        diff,
        v_p: v_p.clone(),
        v_q: v_q.clone(),
        a_qr: proj_sparse(v_q, &dec.a_q, v_p),
        b_qr: dec.b_q.tr_mul_dense(v_q).transpose(),
        c_qr: dec.c_q.mul_dense(v_q),
        e_qr,
        nl_q,
        full_dim: dec.n(),
        e_qr_lu,
    })
}

/// Implicit Euler on the reduced differential part with reduced algebraic post-processing.
pub fn simulate_irom<T: Scalar>(
    rom: &Irom<T>,
    inputs: &Inputs,
    grid: &TimeGrid,
    xi_pr0: &DVector<T>,
    opts: &SimOptions,
) -> Result<Trajectory<T>> {
    let start = Instant::now();
    let mut traj = Trajectory::default();
    let iters = march(&rom.diff, inputs, grid, xi_pr0, opts, |_, t, xi, u, store| {
        if store {
            let xq = rom.solve_algebraic(xi, u)?;
            traj.algebraic_solves += 1;
            traj.times.push(t);
            traj.outputs.push(rom.output(xi, &xq));
            if opts.store_states {
                traj.states.push(xi.clone());
            }
        }
        Ok(())
    })?;
    traj.newton_iterations = iters;
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

/// Snapshot matrices of a decoupled training run, one column per stored step.
#[derive(Clone, Debug)]
pub struct DecoupledSnapshots<T: Scalar> {
    pub xi_p: DMatrix<T>,
    pub xi_q: DMatrix<T>,
    pub f_p: DMatrix<T>,
    /// `None` when `f_q ≡ 0`.
    pub f_q: Option<DMatrix<T>>,
    pub trajectory: Trajectory<T>,
}

fn columns<T: Scalar>(cols: &[DVector<T>], rows: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (k, c) in cols.iter().enumerate() {
        m.set_column(k, c);
    }
    m
}

/// Runs the decoupled model and records `ξ_p`, `ξ_q`, `f_p` and `f_q`.
pub fn decoupled_snapshots<T: Scalar>(
    dec: &DecoupledSystem<T>,
    inputs: &Inputs,
    grid: &TimeGrid,
    xi_p0: &DVector<T>,
    opts: &SimOptions,
) -> Result<DecoupledSnapshots<T>> {
    let start = Instant::now();
    let lu = dec.factor_e_q()?;
    let (mut sp, mut sq, mut fp, mut fq) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut traj = Trajectory::default();
    let iters = march(&DifferentialPart(dec), inputs, grid, xi_p0, opts, |_, t, xi, u, store| {
        if store {
            let xq = dec.solve_algebraic(lu.as_ref(), xi, u)?;
            traj.times.push(t);
            traj.outputs.push(dec.output(xi, &xq));
            fp.push(dec.f_p(xi)?);
            if !dec.f_q_vanishes() {
                fq.push(dec.f_q(xi)?);
            }
            sp.push(xi.clone());
            sq.push(xq);
        }
        Ok(())
    })?;
    traj.newton_iterations = iters;
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(DecoupledSnapshots {
        xi_p: columns(&sp, dec.n_p()),
        xi_q: columns(&sq, dec.n_q()),
        f_p: columns(&fp, dec.n_p()),
        f_q: (!dec.f_q_vanishes()).then(|| columns(&fq, dec.n_q())),
        trajectory: traj,
    })
}

/// Sizes of an I-POD reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpodOptions {
    pub r_p: PodCriterion,
    pub r_q: PodCriterion,
    /// DEIM points for `f_p`; defaults to `r_p`.
    pub m_p: Option<usize>,
    /// DEIM points for `f_q`; defaults to `r_q`.
    pub m_q: Option<usize>,
    /// Skip DEIM and keep the full nonlinear term.
    pub galerkin_only: bool,
}

impl Default for IpodOptions {
    fn default() -> Self {
        Self {
            r_p: PodCriterion::Energy(DEFAULT_ENERGY),
            r_q: PodCriterion::Energy(DEFAULT_ENERGY),
            m_p: None,
            m_q: None,
            galerkin_only: false,
        }
    }
}

/// POD bases of both subsystems plus DEIM of `f_p` (and `f_q` when present).
pub fn ipod_reduce<T: Scalar>(dec: &DecoupledSystem<T>, snaps: &DecoupledSnapshots<T>, opts: &IpodOptions) -> Result<Irom<T>> {
    let vp = pod_basis(&snaps.xi_p, opts.r_p)?.basis;
    let vq = pod_basis(&snaps.xi_q, opts.r_q)?.basis;
    if opts.galerkin_only || dec.f.is_zero() {
        return build_irom(dec, &vp, &vq, None, None);
    }
    let dp = deim_interpolant(&snaps.f_p, opts.m_p.unwrap_or(vp.ncols()))?;
    let dq = match &snaps.f_q {
        Some(fq) => Some(deim_interpolant(fq, opts.m_q.unwrap_or(vq.ncols()))?),
        None => None,
    };
    build_irom(dec, &vp, &vq, Some(&dp), dq.as_ref())
}

/// Linear data and nonlinearity of a model reducible by one-sided POD.
pub trait Reducible<T: Scalar>: ImplicitModel<T> {
    fn mass_matrix(&self) -> CsrMatrix<T>;
    fn state_matrix(&self) -> CsrMatrix<T>;
    fn input_matrix(&self) -> CsrMatrix<T>;
    /// Map of `u'`, if the model uses it.
    fn input_rate_matrix(&self) -> Option<CsrMatrix<T>> {
        None
    }
    fn output_matrix(&self) -> CsrMatrix<T>;
    fn lifted(&self) -> Option<LiftedNonlinearity<T>>;
}

impl<T: Scalar> Reducible<T> for DescriptorSystem<T> {
    fn mass_matrix(&self) -> CsrMatrix<T> {
        self.e.clone()
    }
    fn state_matrix(&self) -> CsrMatrix<T> {
        self.a.clone()
    }
    fn input_matrix(&self) -> CsrMatrix<T> {
        self.b.clone()
    }
    fn output_matrix(&self) -> CsrMatrix<T> {
        self.c.clone()
    }
    fn lifted(&self) -> Option<LiftedNonlinearity<T>> {
        (!self.f.is_zero()).then(|| LiftedNonlinearity {
            f: self.f.clone(),
            lift: self.e.clone(),
            input_lift: None,
            proj: CsrMatrix::identity(self.n()),
        })
    }
}

/// State snapshots, nonlinear-term snapshots (if any) and the trajectory.
pub type ModelSnapshots<T> = (DMatrix<T>, Option<DMatrix<T>>, Trajectory<T>);

/// Runs a model and records states and its nonlinear term.
pub fn model_snapshots<T: Scalar, M: Reducible<T>>(
    model: &M,
    inputs: &Inputs,
    grid: &TimeGrid,
    x0: &DVector<T>,
    opts: &SimOptions,
) -> Result<ModelSnapshots<T>> {
    let start = Instant::now();
    let lifted = model.lifted();
    let (mut xs, mut fs) = (Vec::new(), Vec::new());
    let mut traj = Trajectory::default();
    let iters = march(model, inputs, grid, x0, opts, |_, t, x, u, store| {
        if store {
            traj.times.push(t);
            traj.outputs.push(model.output(x, u)?);
            if let Some(l) = &lifted {
                fs.push(l.eval(x, u)?);
            }
            xs.push(x.clone());
        }
        Ok(())
    })?;
    traj.newton_iterations = iters;
    traj.wall_time = start.elapsed().as_secs_f64();
    let n = model.dim();
    let f = lifted.map(|l| columns(&fs, l.rows()));
    Ok((columns(&xs, n), f, traj))
}

/// One-sided Galerkin projection `Vᵀ(·)V` of the undecoupled model.
pub fn baseline_pod_reduce<T: Scalar, M: Reducible<T>>(
    model: &M,
    v: &DMatrix<T>,
    deim: Option<&DeimInterpolant<T>>,
) -> Result<ReducedSystem<T>> {
    if v.nrows() != model.dim() {
        return Err(Error::Dimension(format!("basis has {} rows, model dimension {}", v.nrows(), model.dim())));
    }
    check_orthonormal(v, "V")?;
    let nl = match model.lifted() {
        Some(l) => Some(ReducedNonlinearity::new(&l, v, v, deim)?),
        None => None,
    };
    let red = ReducedSystem {
        mass: proj_sparse(v, &model.mass_matrix(), v),
        a: proj_sparse(v, &model.state_matrix(), v),
        b: model.input_matrix().tr_mul_dense(v).transpose(),
        b_dot: model.input_rate_matrix().map(|m| m.tr_mul_dense(v).transpose()),
        c: model.output_matrix().mul_dense(v),
        nl,
    };
    red.check_pencil()?;
    Ok(red)
}

/// Relative output errors per channel group.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ErrorReport {
    pub groups: Vec<f64>,
    pub output_error: f64,
    /// Groups whose reference norm was zero and therefore report an absolute error.
    pub absolute: Vec<bool>,
}

fn group_norms<T: Scalar>(y: &[DVector<T>], y_r: &[DVector<T>], g: &Range<usize>) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in y.iter().zip(y_r) {
        for i in g.clone() {
            let (a, b) = (a[i].as_f64(), b[i].as_f64());
            num += (a - b) * (a - b);
            den += a * a;
        }
    }
    (num.sqrt(), den.sqrt())
}

fn error_report<T: Scalar>(y: &[DVector<T>], y_r: &[DVector<T>], groups: &[Range<usize>], lenient: bool) -> Result<ErrorReport> {
    if y.len() != y_r.len() {
        return Err(Error::Dimension(format!("trajectories have {} and {} samples", y.len(), y_r.len())));
    }
    let l = y.first().map_or(0, |v| v.len());
    if y.iter().chain(y_r).any(|v| v.len() != l) {
        return Err(Error::Dimension("output lengths differ".into()));
    }
    if groups.iter().any(|g| g.end > l) {
        return Err(Error::Dimension(format!("output group beyond {l} channels")));
    }
    let mut out = ErrorReport { groups: Vec::new(), output_error: 0.0, absolute: Vec::new() };
    for (k, g) in groups.iter().enumerate() {
        let (num, den) = group_norms(y, y_r, g);
        let (e, abs) = if den > 0.0 {
            (num / den, false)
        } else if lenient {
            (num, true)
        } else {
            return Err(Error::ZeroReference { group: k });
        };
        out.groups.push(e);
        out.absolute.push(abs);
        out.output_error = out.output_error.max(e);
    }
    Ok(out)
}

/// `‖y − y_r‖₂ / ‖y‖₂` per group over all samples; the output error is the maximum.
pub fn relative_error<T: Scalar>(y: &[DVector<T>], y_r: &[DVector<T>], groups: &[Range<usize>]) -> Result<ErrorReport> {
    error_report(y, y_r, groups, false)
}

/// As [`relative_error`], but a zero reference yields the absolute error, flagged in the report.
pub fn relative_error_lenient<T: Scalar>(y: &[DVector<T>], y_r: &[DVector<T>], groups: &[Range<usize>]) -> Result<ErrorReport> {
    error_report(y, y_r, groups, true)
}

/// `100 (1 − r/n)`.
pub fn percent_reduction(r: usize, n: usize) -> f64 {
    100.0 * (1.0 - r as f64 / n as f64)
}
