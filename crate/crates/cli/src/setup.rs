use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::DVector;
use nldae::gasnet::{
    assemble_dae, chain_network, gas_steady_state, parse_network, parse_scenario, refine_network, ChainSpec, Friction,
    GasDae, GasNetwork, GasOptions, Scenario,
};
use nldae::integrate::{NewtonOptions, TimeGrid};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

/// Where the pipe network comes from.
#[derive(Args, Clone, Debug)]
pub struct NetworkArgs {
    /// Network JSON file.
    #[arg(long, conflicts_with = "chain")]
    pub network: Option<PathBuf>,
    /// Generate a chain of this many pipes instead of reading a file.
    #[arg(long)]
    pub chain: Option<usize>,
    /// Pipe length of the generated chain in m.
    #[arg(long, default_value_t = 18.15)]
    pub length: f64,
    /// Pipe diameter of the generated chain in m.
    #[arg(long, default_value_t = 1.422)]
    pub diameter: f64,
    /// Friction factor of the generated chain.
    #[arg(long, conflicts_with = "roughness")]
    pub lambda: Option<f64>,
    /// Wall roughness of the generated chain in m (default 1.5e-6 when no lambda is given).
    #[arg(long)]
    pub roughness: Option<f64>,
    /// Specific gas constant of the generated chain in J/(kg K).
    #[arg(long, default_value_t = 518.26)]
    pub rs: f64,
    /// Height gain per pipe of the generated chain in m.
    #[arg(long, default_value_t = 0.0)]
    pub slope: f64,
    /// Split every pipe into this many segments (on top of per-pipe `segments`).
    #[arg(long, default_value_t = 1)]
    pub refine: usize,
    /// Calibration factor of the momentum coupling.
    #[arg(long, default_value_t = 1.0)]
    pub c_cal: f64,
}

impl NetworkArgs {
    pub fn network(&self) -> CliResult<GasNetwork> {
        let net = match (&self.network, self.chain) {
            (Some(path), None) => parse_network(&read(path)?)?,
            (None, Some(n)) => {
                let friction = match (self.lambda, self.roughness) {
                    (Some(l), _) => Friction::Lambda(l),
                    (None, Some(k)) => Friction::Roughness(k),
                    (None, None) => Friction::Roughness(1.5e-6),
                };
                let mut spec = ChainSpec::new(n, self.length, self.diameter, friction);
                spec.gas.rs = self.rs;
                spec.slope = self.slope;
                chain_network(&spec)?
            }
            _ => return Err(CliError::Validation("give exactly one of --network or --chain".into())),
        };
        Ok(refine_network(&net, self.refine)?)
    }

    pub fn options(&self) -> GasOptions {
        GasOptions { c_cal: self.c_cal }
    }

    pub fn describe(&self) -> Value {
        match (&self.network, self.chain) {
            (Some(p), _) => json!({"file": p.display().to_string(), "refine": self.refine}),
            (_, n) => json!({
                "chain": n, "length": self.length, "diameter": self.diameter,
                "lambda": self.lambda, "roughness": self.roughness, "rs": self.rs,
                "slope": self.slope, "refine": self.refine
            }),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    /// Steady state at the inputs of the first time point.
    Steady,
    /// Steady state at the supply pressures with zero demand.
    Rest,
}

/// Boundary data, time grid and initial state.
#[derive(Args, Clone, Debug)]
pub struct ScenarioArgs {
    /// Scenario JSON file with supply and demand signals.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Constant supply pressure in Pa when no scenario file is given.
    #[arg(long, default_value_t = 50e5)]
    pub supply: f64,
    /// Constant demand flow in kg/s when no scenario file is given.
    #[arg(long, default_value_t = 10.0)]
    pub demand: f64,
    /// Step size; overrides the scenario.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time; overrides the scenario.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitialState::Steady)]
    pub init: InitialState,
}

impl ScenarioArgs {
    pub fn scenario(&self, net: &GasNetwork) -> CliResult<Scenario> {
        let mut sc = match &self.scenario {
            Some(path) => parse_scenario(&read(path)?, net)?,
            None => Scenario::constant(net, TimeGrid::new(0.0, 100.0, 1.0)?, self.supply, self.demand),
        };
        if self.dt.is_some() || self.t_end.is_some() {
            let dt = self.dt.unwrap_or(sc.grid.dt);
            let t_end = self.t_end.unwrap_or(sc.grid.t_end);
            sc.grid = TimeGrid::new(sc.grid.t0, t_end, dt)?;
        }
        Ok(sc)
    }
}

fn read(path: &PathBuf) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

/// Assembled network model with its scenario and a consistent initial state.
pub struct Setup {
    pub net: GasNetwork,
    pub dae: GasDae,
    pub scenario: Scenario,
    pub x0: DVector<f64>,
    pub assembly_time: f64,
}

impl Setup {
    pub fn new(net_args: &NetworkArgs, sc_args: &ScenarioArgs) -> CliResult<Self> {
        let start = Instant::now();
        let net = net_args.network()?;
        let dae = assemble_dae(&net, net_args.options())?;
        let assembly_time = start.elapsed().as_secs_f64();
        let scenario = sc_args.scenario(&net)?;
        let mut u0 = scenario.inputs.value(scenario.grid.t0);
        if sc_args.init == InitialState::Rest {
            for v in u0.as_mut_slice()[dae.layout.n_s..].iter_mut() {
                *v = 0.0;
            }
        }
        let (x0, _) = gas_steady_state(&dae, &u0, &NewtonOptions::default())?;
        Ok(Self { net, dae, scenario, x0, assembly_time })
    }

    pub fn u0(&self) -> DVector<f64> {
        self.scenario.inputs.value(self.scenario.grid.t0)
    }
}
