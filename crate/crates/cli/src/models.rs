use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::DVector;
use nldae::decouple::DecoupledSystem;
use nldae::gasnet::{assemble_ode, structured_decouple, GasOde};
use nldae::integrate::{implicit_euler, simulate_decoupled, AlgebraicSchedule, SimOptions, Trajectory};
use nldae::mor::{
    baseline_pod_reduce, decoupled_snapshots, deim_interpolant, ipod_reduce, model_snapshots, percent_reduction, pod_basis,
    relative_error_lenient, simulate_irom, ErrorReport, IpodOptions, Irom, PodCriterion, Reducible, DEFAULT_ENERGY,
};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::setup::Setup;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dae,
    Ode,
    Decoupled,
    Ipod,
    DaePod,
    OdePod,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dae => "dae",
            ModelKind::Ode => "ode",
            ModelKind::Decoupled => "decoupled",
            ModelKind::Ipod => "ipod",
            ModelKind::DaePod => "dae-pod",
            ModelKind::OdePod => "ode-pod",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Dae => "DAE",
            ModelKind::Ode => "ODE",
            ModelKind::Decoupled => "Decoupled",
            ModelKind::Ipod => "I-POD",
            ModelKind::DaePod => "DAE-POD",
            ModelKind::OdePod => "ODE-POD",
        }
    }

    pub fn is_reduced(self) -> bool {
        matches!(self, ModelKind::Ipod | ModelKind::DaePod | ModelKind::OdePod)
    }

    /// Full model a reduced model is trained on and compared with.
    pub fn parent(self) -> ModelKind {
        match self {
            ModelKind::Ipod => ModelKind::Decoupled,
            ModelKind::DaePod => ModelKind::Dae,
            ModelKind::OdePod => ModelKind::Ode,
            full => full,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct ReductionArgs {
    /// Size of the differential basis (I-POD).
    #[arg(long)]
    pub rp: Option<usize>,
    /// Size of the algebraic basis (I-POD).
    #[arg(long)]
    pub rq: Option<usize>,
    /// Basis size of DAE-POD/ODE-POD.
    #[arg(long)]
    pub r: Option<usize>,
    /// DEIM points of the differential nonlinearity; defaults to the basis size.
    #[arg(long, alias = "mf")]
    pub mp: Option<usize>,
    /// DEIM points of the algebraic nonlinearity, if it does not vanish.
    #[arg(long)]
    pub mq: Option<usize>,
    /// Energy fraction used for any basis size not given explicitly.
    #[arg(long, default_value_t = DEFAULT_ENERGY)]
    pub energy: f64,
    /// Keep the full nonlinear term instead of DEIM.
    #[arg(long)]
    pub galerkin: bool,
}

impl ReductionArgs {
    fn criterion(&self, size: Option<usize>) -> PodCriterion {
        size.map_or(PodCriterion::Energy(self.energy), PodCriterion::Rank)
    }

    /// Same settings with every basis size set to `k`; DEIM sizes follow `k` unless given.
    pub fn with_size(&self, k: usize) -> Self {
        Self { rp: Some(k), rq: Some(k), r: Some(k), mp: self.mp.or(Some(k)), ..self.clone() }
    }

    pub fn describe(&self) -> Value {
        json!({"rp": self.rp, "rq": self.rq, "r": self.r, "mp": self.mp, "mq": self.mq,
               "energy": self.energy, "galerkin": self.galerkin})
    }
}

/// A simulated full-order model.
pub struct FullRun {
    pub traj: Trajectory<f64>,
    /// Time to build the model from the assembled DAE.
    pub build_time: f64,
}

pub struct Models<'a> {
    pub setup: &'a Setup,
    pub opts: SimOptions,
    dec: Option<(DecoupledSystem<f64>, f64)>,
    ode: Option<(GasOde, f64)>,
}

impl<'a> Models<'a> {
    pub fn new(setup: &'a Setup) -> Self {
        Self { setup, opts: SimOptions::default(), dec: None, ode: None }
    }

    pub fn decoupled(&mut self) -> CliResult<&DecoupledSystem<f64>> {
        if self.dec.is_none() {
            let start = Instant::now();
            let dec = structured_decouple(&self.setup.dae)?;
            self.dec = Some((dec, start.elapsed().as_secs_f64()));
        }
        Ok(&self.dec.as_ref().expect("built").0)
    }

    pub fn ode(&mut self) -> CliResult<&GasOde> {
        if self.ode.is_none() {
            let start = Instant::now();
            let ode = assemble_ode(&self.setup.dae)?;
            self.ode = Some((ode, start.elapsed().as_secs_f64()));
        }
        Ok(&self.ode.as_ref().expect("built").0)
    }

    pub fn decouple_time(&self) -> f64 {
        self.dec.as_ref().map_or(0.0, |d| d.1)
    }

    fn xi_p0(&mut self) -> CliResult<DVector<f64>> {
        let (x0, u0) = (self.setup.x0.clone(), self.setup.u0());
        Ok(self.decoupled()?.consistent_initialize(&x0, &u0)?.xi_p)
    }

    pub fn run_full(&mut self, kind: ModelKind) -> CliResult<FullRun> {
        let s = self.setup;
        let (inputs, grid) = (&s.scenario.inputs, &s.scenario.grid);
        let (traj, build_time) = match kind {
            ModelKind::Dae => (implicit_euler(&s.dae.sys, inputs, grid, &s.x0, &self.opts)?, 0.0),
            ModelKind::Ode => {
                let opts = self.opts;
                let ode = self.ode()?;
                let traj = implicit_euler(ode, inputs, grid, &ode.state_from_dae(&s.x0), &opts)?;
                (traj, self.ode.as_ref().expect("built").1)
            }
            ModelKind::Decoupled => {
                let xi = self.xi_p0()?;
                let opts = self.opts;
                let dec = self.decoupled()?;
                let traj = simulate_decoupled(dec, inputs, grid, &xi, &opts, AlgebraicSchedule::EveryStep)?;
                (traj, self.decouple_time())
            }
            other => return Err(CliError::Validation(format!("{} is a reduced model", other.name()))),
        };
        Ok(FullRun { traj, build_time })
    }

    /// Trains on the scenario itself, reduces and simulates the reduced model.
    pub fn run_reduced(&mut self, kind: ModelKind, red: &ReductionArgs) -> CliResult<ReducedRun> {
        let s = self.setup;
        let (inputs, grid) = (&s.scenario.inputs, &s.scenario.grid);
        let opts = self.opts;
        let offline = Instant::now();
        let (traj, r, sizes, irom) = match kind {
            ModelKind::Ipod => {
                let xi = self.xi_p0()?;
                let dec = self.decoupled()?;
                let snaps = decoupled_snapshots(dec, inputs, grid, &xi, &opts)?;
                let o = IpodOptions {
                    r_p: red.criterion(red.rp),
                    r_q: red.criterion(red.rq),
                    m_p: red.mp,
                    m_q: red.mq,
                    galerkin_only: red.galerkin,
                };
                let rom = ipod_reduce(dec, &snaps, &o)?;
                let offline_time = offline.elapsed().as_secs_f64();
                let traj = simulate_irom(&rom, inputs, grid, &(rom.v_p.transpose() * &xi), &opts)?;
                let m = rom.diff.nl.as_ref().map(|nl| nl.rows_per_eval());
                let sizes = json!({"r_p": rom.r_p(), "r_q": rom.r_q(), "f_rows_per_eval": m, "offline_time": offline_time});
                (traj, rom.r(), sizes, Some(rom))
            }
            ModelKind::DaePod => {
                let (traj, r, sizes) = baseline(&s.dae.sys, &s.x0, red, self)?;
                (traj, r, sizes, None)
            }
            ModelKind::OdePod => {
                self.ode()?;
                let ode = &self.ode.as_ref().expect("built").0;
                let w0 = ode.state_from_dae(&s.x0);
                let (traj, r, sizes) = baseline(ode, &w0, red, self)?;
                (traj, r, sizes, None)
            }
            other => return Err(CliError::Validation(format!("{} is not a reduced model", other.name()))),
        };
        let parent = self.run_full(kind.parent())?;
        let error = relative_error_lenient(&parent.traj.outputs, &traj.outputs, &s.dae.layout.output_groups())?;
        Ok(ReducedRun { kind, traj, r, n: s.dae.layout.n(), sizes, error, parent, irom })
    }
}

fn baseline<M: Reducible<f64>>(
    model: &M,
    x0: &DVector<f64>,
    red: &ReductionArgs,
    models: &Models,
) -> CliResult<(Trajectory<f64>, usize, Value)> {
    let s = models.setup;
    let (inputs, grid) = (&s.scenario.inputs, &s.scenario.grid);
    let start = Instant::now();
    let (xs, fs, _) = model_snapshots(model, inputs, grid, x0, &models.opts)?;
    let v = pod_basis(&xs, red.criterion(red.r))?.basis;
    let deim = match (&fs, red.galerkin) {
        (Some(f), false) => Some(deim_interpolant(f, red.mp.unwrap_or(v.ncols()))?),
        _ => None,
    };
    let rom = baseline_pod_reduce(model, &v, deim.as_ref())?;
    let offline_time = start.elapsed().as_secs_f64();
    let traj = implicit_euler(&rom, inputs, grid, &(v.transpose() * x0), &models.opts)?;
    let rows = rom.nl.as_ref().map(|nl| nl.rows_per_eval());
    Ok((traj, v.ncols(), json!({"f_rows_per_eval": rows, "offline_time": offline_time})))
}

pub struct ReducedRun {
    pub kind: ModelKind,
    pub traj: Trajectory<f64>,
    pub r: usize,
    /// Dimension of the assembled DAE, the reference for `% Red.`.
    pub n: usize,
    pub sizes: Value,
    pub error: ErrorReport,
    pub parent: FullRun,
    pub irom: Option<Irom<f64>>,
}

impl ReducedRun {
    pub fn speedup(&self) -> f64 {
        self.parent.traj.wall_time / self.traj.wall_time
    }

    pub fn percent_reduction(&self) -> f64 {
        percent_reduction(self.r, self.n)
    }

    pub fn summary(&self) -> Value {
        json!({
            "rom": self.kind.label(),
            "r": self.r,
            "n": self.n,
            "percent_reduction": self.percent_reduction(),
            "output_error": self.error.output_error,
            "pressure_error": self.error.groups.get(1),
            "flow_error": self.error.groups.first(),
            "absolute_error_groups": self.error.absolute,
            "speedup": self.speedup(),
            "full_time": self.parent.traj.wall_time,
            "reduced_time": self.traj.wall_time,
            "reference": self.kind.parent().name(),
            "sizes": self.sizes,
        })
    }

    /// `ROM, r, % Red., Output error, Speed-up`.
    pub fn table_row(&self) -> String {
        format!(
            "{},{},{:.2},{:.2e},{:.1}",
            self.kind.label(),
            self.r,
            self.percent_reduction(),
            self.error.output_error,
            self.speedup()
        )
    }
}
