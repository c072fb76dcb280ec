//! Fixed-step implicit Euler with Newton, decoupled marching and steady states.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decouple::DecoupledSystem;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::{CsrMatrix, LuSolver, SparseLu, SysMatrix};
use crate::system::DescriptorSystem;

/// Input channel as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Signal {
    Constant(f64),
    /// Breakpoints `(t, value)` with increasing `t`; constant beyond both ends.
    Pwl(Vec<(f64, f64)>),
}

impl Signal {
    pub fn validate(&self) -> Result<()> {
        if let Signal::Pwl(pts) = self {
            if pts.is_empty() {
                return Err(Error::InvalidArgument("piecewise-linear signal without breakpoints".into()));
            }
            if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidArgument("signal breakpoints must increase strictly".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Signal::Constant(c) => *c,
            Signal::Pwl(pts) => {
                let k = pts.partition_point(|p| p.0 < t);
                if k == 0 {
                    return pts[0].1;
                }
                if k == pts.len() {
                    return pts[k - 1].1;
                }
                let (a, b) = (pts[k - 1], pts[k]);
                a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
            }
        }
    }

    /// Slope of the segment ending at or after `t` (left derivative at breakpoints).
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Signal::Constant(_) => 0.0,
            Signal::Pwl(pts) => {
                let k = pts.partition_point(|p| p.0 < t);
                if k == 0 || k == pts.len() {
                    return 0.0;
                }
                let (a, b) = (pts[k - 1], pts[k]);
                (b.1 - a.1) / (b.0 - a.0)
            }
        }
    }
}

/// Vector input `u(t)` made of independent channels.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Inputs {
    pub channels: Vec<Signal>,
}

impl Inputs {
    pub fn new(channels: Vec<Signal>) -> Result<Self> {
        for c in &channels {
            c.validate()?;
        }
        Ok(Self { channels })
    }

    pub fn constant(values: &[f64]) -> Self {
        Self { channels: values.iter().map(|&v| Signal::Constant(v)).collect() }
    }

    pub fn zero(m: usize) -> Self {
        Self::constant(&vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn value<T: Scalar>(&self, t: f64) -> DVector<T> {
        DVector::from_iterator(self.len(), self.channels.iter().map(|c| T::lit(c.value(t))))
    }

    pub fn derivative<T: Scalar>(&self, t: f64) -> DVector<T> {
        DVector::from_iterator(self.len(), self.channels.iter().map(|c| T::lit(c.derivative(t))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Uniform grid; `t_end − t0` must be a whole number of steps up to rounding.
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !(t_end > t0) {
            return Err(Error::InvalidArgument(format!("invalid time grid [{t0}, {t_end}] with dt = {dt}")));
        }
        let r = (t_end - t0) / dt;
        let steps = r.round() as usize;
        if steps == 0 || (r - steps as f64).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::InvalidArgument(format!("interval {} is not a multiple of dt = {dt}", t_end - t0)));
        }
        Ok(Self { t0, t_end, dt, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(self.t0, self.t_end, dt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub atol: f64,
    /// Converged once `‖Δx‖ ≤ step_rtol (1 + ‖x‖)`.
    pub step_rtol: f64,
    pub max_iter: usize,
    pub line_search: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { atol: 1e-10, step_rtol: 1e-10, max_iter: 25, line_search: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub newton: NewtonOptions,
    /// Store every `stride`-th step (and the last one).
    pub stride: usize,
    pub store_states: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { newton: NewtonOptions::default(), stride: 1, store_states: false }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<f64>,
    pub states: Vec<DVector<T>>,
    pub outputs: Vec<DVector<T>>,
    /// Seconds spent marching, output evaluation included.
    pub wall_time: f64,
    /// Newton iterations per step.
    pub newton_iterations: Vec<usize>,
    /// Number of algebraic solves performed.
    pub algebraic_solves: usize,
}

impl<T: Scalar> Default for Trajectory<T> {
    fn default() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
            wall_time: 0.0,
            newton_iterations: Vec::new(),
            algebraic_solves: 0,
        }
    }
}

impl<T: Scalar> Trajectory<T> {
    pub fn output_matrix(&self) -> DMatrix<T> {
        let l = self.outputs.first().map_or(0, |y| y.len());
        DMatrix::from_fn(self.outputs.len(), l, |k, i| self.outputs[k][i])
    }

    pub fn max_newton_iterations(&self) -> usize {
        self.newton_iterations.iter().copied().max().unwrap_or(0)
    }

    /// Rows `[t, y_1, …, y_ℓ]`.
    pub fn output_rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.times.iter().zip(&self.outputs).map(|(t, y)| {
            let mut row = Vec::with_capacity(y.len() + 1);
            row.push(*t);
            row.extend(y.iter().map(|v| v.as_f64()));
            row
        })
    }

    pub fn state_rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.times.iter().zip(&self.states).map(|(t, x)| {
            let mut row = Vec::with_capacity(x.len() + 1);
            row.push(*t);
            row.extend(x.iter().map(|v| v.as_f64()));
            row
        })
    }
}

/// `M x' = F(x, u, u')`, `y = h(x, u)`.
pub trait ImplicitModel<T: Scalar> {
    fn dim(&self) -> usize;

    /// `M v`.
    fn apply_mass(&self, v: &DVector<T>) -> DVector<T>;

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, udot: &DVector<T>) -> Result<DVector<T>>;

    /// `M − c ∂F/∂x`.
    fn iteration_matrix(&self, x: &DVector<T>, u: &DVector<T>, c: T) -> Result<SysMatrix<T>>;

    fn output(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>>;

    /// True when `∂F/∂x` does not depend on the state.
    fn is_linear(&self) -> bool {
        false
    }
}

enum Factor<T: Scalar> {
    Sparse(SparseLu<T>),
    Dense(nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>),
}

impl<T: Scalar> Factor<T> {
    fn solve(&self, b: &DVector<T>) -> Option<DVector<T>> {
        match self {
            Factor::Sparse(lu) => Some(lu.solve(b)),
            Factor::Dense(lu) => lu.solve(b),
        }
    }
}

fn factor<T: Scalar>(m: SysMatrix<T>, cache: &mut LuSolver, step: usize) -> Result<Factor<T>> {
    match m {
        SysMatrix::Sparse(m) => cache.factor(&m).map(Factor::Sparse).map_err(|_| Error::SingularIteration { step }),
        SysMatrix::Dense(m) => {
            let lu = m.lu();
            if !lu.is_invertible() {
                return Err(Error::SingularIteration { step });
            }
            Ok(Factor::Dense(lu))
        }
    }
}

fn finite<T: Scalar>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.as_f64().is_finite())
}

/// Solves `G(x) = 0` by Newton, where `jac` returns a factorable `∂G/∂x`.
struct Newton<'a> {
    opts: &'a NewtonOptions,
    cache: LuSolver,
}

impl<'a> Newton<'a> {
    fn solve<T: Scalar>(
        &mut self,
        step: usize,
        x: &mut DVector<T>,
        mut residual: impl FnMut(&DVector<T>) -> Result<DVector<T>>,
        mut jac: impl FnMut(&DVector<T>) -> Result<Option<SysMatrix<T>>>,
        frozen: Option<&Factor<T>>,
    ) -> Result<usize> {
        let o = self.opts;
        let mut r = residual(x)?;
        let mut rn = r.norm().as_f64();
        let mut own: Option<Factor<T>> = None;
        for it in 1..=o.max_iter {
            if rn <= o.atol {
                return Ok(it - 1);
            }
            let f = match frozen {
                Some(f) => f,
                None => {
                    if let Some(m) = jac(x)? {
                        own = Some(factor(m, &mut self.cache, step)?);
                    }
                    own.as_ref().expect("first iteration factors")
                }
            };
            let dx = f.solve(&(-&r)).ok_or(Error::SingularIteration { step })?;
            if !finite(&dx) {
                return Err(Error::SingularIteration { step });
            }
            let mut lambda = T::one();
            let mut trial = &*x + &dx;
            let mut rt = residual(&trial);
            if o.line_search {
                let mut halvings = 0;
                while halvings < 12 && rt.as_ref().map_or(true, |v| !(v.norm().as_f64() < rn) || !finite(v)) {
                    lambda *= T::lit(0.5);
                    trial = &*x + &dx * lambda;
                    rt = residual(&trial);
                    halvings += 1;
                }
            }
            let rt = rt?;
            let step_norm = (dx.norm() * lambda).as_f64();
            *x = trial;
            r = rt;
            rn = r.norm().as_f64();
            if !rn.is_finite() {
                break;
            }
            if rn <= o.atol || step_norm <= o.step_rtol * (1.0 + x.norm().as_f64()) {
                return Ok(it);
            }
        }
        Err(Error::NewtonDivergence { step, residual: rn })
    }
}

fn stored(k: usize, steps: usize, stride: usize) -> bool {
    k.is_multiple_of(stride.max(1)) || k == steps
}

/// Marches `M (x_{k+1} − x_k)/dt = F(x_{k+1}, u_{k+1}, u'_{k+1})`; `observe`
/// sees every step, with the last argument telling whether it is stored.
pub fn march<T: Scalar, M: ImplicitModel<T> + ?Sized>(
    model: &M,
    inputs: &Inputs,
    grid: &TimeGrid,
    x0: &DVector<T>,
    opts: &SimOptions,
    mut observe: impl FnMut(usize, f64, &DVector<T>, &DVector<T>, bool) -> Result<()>,
) -> Result<Vec<usize>> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension(format!("initial state has length {}, model {}", x0.len(), model.dim())));
    }
    let dt = T::lit(grid.dt);
    let mut x = x0.clone();
    observe(0, grid.t0, &x, &inputs.value(grid.t0), true)?;
    let mut newton = Newton { opts: &opts.newton, cache: LuSolver::new() };
    let frozen = if model.is_linear() {
        let u = inputs.value(grid.t0);
        Some(factor(model.iteration_matrix(&x, &u, dt)?, &mut newton.cache, 1)?)
    } else {
        None
    };
    let mut iters = Vec::with_capacity(grid.steps);
    for k in 1..=grid.steps {
        let t = grid.time(k);
        let u = inputs.value::<T>(t);
        let ud = inputs.derivative::<T>(t);
        let mx_old = model.apply_mass(&x);
        let res = |z: &DVector<T>| -> Result<DVector<T>> { Ok(model.apply_mass(z) - &mx_old - model.rhs(z, &u, &ud)? * dt) };
        let jac = |z: &DVector<T>| model.iteration_matrix(z, &u, dt).map(Some);
        let n = newton.solve(k, &mut x, res, jac, frozen.as_ref())?;
        iters.push(n);
        observe(k, t, &x, &u, stored(k, grid.steps, opts.stride))?;
    }
    Ok(iters)
}

/// Implicit Euler on any [`ImplicitModel`].
pub fn implicit_euler<T: Scalar, M: ImplicitModel<T> + ?Sized>(
    model: &M,
    inputs: &Inputs,
    grid: &TimeGrid,
    x0: &DVector<T>,
    opts: &SimOptions,
) -> Result<Trajectory<T>> {
    let start = Instant::now();
    let mut traj = Trajectory::default();
    let iters = march(model, inputs, grid, x0, opts, |_, t, x, u, store| {
        if !store {
            return Ok(());
        }
        traj.times.push(t);
        traj.outputs.push(model.output(x, u)?);
        if opts.store_states {
            traj.states.push(x.clone());
        }
        Ok(())
    })?;
    traj.newton_iterations = iters;
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

impl<T: Scalar> ImplicitModel<T> for DescriptorSystem<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_mass(&self, v: &DVector<T>) -> DVector<T> {
        self.e.mul_vec(v)
    }

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, _udot: &DVector<T>) -> Result<DVector<T>> {
        DescriptorSystem::rhs(self, x, u)
    }

    fn iteration_matrix(&self, x: &DVector<T>, _u: &DVector<T>, c: T) -> Result<SysMatrix<T>> {
        let mut j = self.a.clone();
        if !self.f.is_zero() {
            let jf = self.f.jacobian(&self.e.mul_vec(x))?.matmul(&self.e);
            j = j.add_scaled(T::one(), &jf, T::one());
        }
        Ok(SysMatrix::Sparse(self.e.add_scaled(T::one(), &j, -c)))
    }

    fn output(&self, x: &DVector<T>, _u: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.c.mul_vec(x))
    }

    fn is_linear(&self) -> bool {
        self.f.is_zero()
    }
}

/// Differential subsystem `E_p ξ_p' = A_p ξ_p + f_p(ξ_p) + B_p u` of a decoupled system.
pub struct DifferentialPart<'a, T: Scalar>(pub &'a DecoupledSystem<T>);

impl<T: Scalar> ImplicitModel<T> for DifferentialPart<'_, T> {
    fn dim(&self) -> usize {
        self.0.n_p()
    }

    fn apply_mass(&self, v: &DVector<T>) -> DVector<T> {
        match &self.0.e_p {
            Some(e) => e.mul_vec(v),
            None => v.clone(),
        }
    }

    fn rhs(&self, x: &DVector<T>, u: &DVector<T>, _udot: &DVector<T>) -> Result<DVector<T>> {
        let mut r = self.0.a_p.mul_vec(x) + self.0.f_p(x)?;
        self.0.b_p.mul_vec_acc(T::one(), u, &mut r);
        Ok(r)
    }

    fn iteration_matrix(&self, x: &DVector<T>, _u: &DVector<T>, c: T) -> Result<SysMatrix<T>> {
        let mut j = self.0.a_p.clone();
        if !self.0.f.is_zero() {
            j = j.add_scaled(T::one(), &self.0.jac_f_p(x)?, T::one());
        }
        Ok(SysMatrix::Sparse(self.0.e_p_matrix().add_scaled(T::one(), &j, -c)))
    }

    fn output(&self, _x: &DVector<T>, _u: &DVector<T>) -> Result<DVector<T>> {
        Err(Error::InvalidArgument("differential part alone has no output; use simulate_decoupled".into()))
    }

    fn is_linear(&self) -> bool {
        self.0.f.is_zero()
    }
}

/// When the algebraic subsystem is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlgebraicSchedule {
    #[default]
    EveryStep,
    /// Only at stored output times.
    OutputTimes,
}

/// Implicit Euler on the differential subsystem plus algebraic post-processing
/// through a cached factorization of `E_q`.
pub fn simulate_decoupled<T: Scalar>(
    dec: &DecoupledSystem<T>,
    inputs: &Inputs,
    grid: &TimeGrid,
    xi_p0: &DVector<T>,
    opts: &SimOptions,
    schedule: AlgebraicSchedule,
) -> Result<Trajectory<T>> {
    let start = Instant::now();
    let lu = dec.factor_e_q()?;
    let mut traj = Trajectory::default();
    let mut solves = 0;
    let part = DifferentialPart(dec);
    let iters = march(&part, inputs, grid, xi_p0, opts, |_, t, xi, u, store| {
        if !store && schedule == AlgebraicSchedule::OutputTimes {
            return Ok(());
        }
        let xq = dec.solve_algebraic(lu.as_ref(), xi, u)?;
        solves += 1;
        if store {
            traj.times.push(t);
            traj.outputs.push(dec.output(xi, &xq));
            if opts.store_states {
                traj.states.push(dec.recompose_state(xi, &xq));
            }
        }
        Ok(())
    })?;
    traj.newton_iterations = iters;
    traj.algebraic_solves = solves;
    traj.wall_time = start.elapsed().as_secs_f64();
    Ok(traj)
}

/// Newton solve of `0 = A x + f(E x) + B u`.
///
/// Returns the state and the residual relative to `1 + ‖A x‖`.
pub fn steady_state<T: Scalar>(
    sys: &DescriptorSystem<T>,
    u: &DVector<T>,
    x_guess: &DVector<T>,
    opts: &NewtonOptions,
) -> Result<(DVector<T>, f64)> {
    let mut x = x_guess.clone();
    let mut newton = Newton { opts, cache: LuSolver::new() };
    let zero = DVector::zeros(u.len());
    let res = |z: &DVector<T>| DescriptorSystem::rhs(sys, z, u);
    let jac = |z: &DVector<T>| -> Result<Option<SysMatrix<T>>> {
        // M − c J with M = 0, c = −1
        let m = ImplicitModel::iteration_matrix(sys, z, &zero, -T::one())?;
        Ok(Some(match m {
            SysMatrix::Sparse(s) => SysMatrix::Sparse(s.add_scaled(T::one(), &sys.e, -T::one())),
            d => d,
        }))
    };
    newton.solve(0, &mut x, res, jac, None)?;
    let r = DescriptorSystem::rhs(sys, &x, u)?.norm().as_f64();
    let scale = 1.0 + sys.a.mul_vec(&x).norm().as_f64();
    Ok((x, r / scale))
}

/// Dense matrix wrapper as a sparse matrix, for small models.
pub fn sparse_of<T: Scalar>(m: &DMatrix<T>) -> CsrMatrix<T> {
    CsrMatrix::from_dense(m, T::zero())
}
