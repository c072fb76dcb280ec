//! Gas transport networks: parsing, assembly, ODE baseline and structured decoupling.

mod model;
mod network;
mod structured;

pub use model::{
    assemble_dae, assemble_ode, eval_friction_gravity, incidence_matrices, FrictionCoefficients, FrictionGravity, GasDae,
    GasLayout, GasOde, GasOptions, IncidenceSet,
};
pub use network::{
    chain_network, nikuradse, parse_network, refine_network, ChainSpec, Friction, GasConstants, GasNetwork, Node,
    NodeKind, Pipe, GRAVITY,
};
pub use structured::{split_e13, structured_decouple, E13Split, STRUCTURED_TOL};

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::integrate::{steady_state, ImplicitModel, Inputs, NewtonOptions, Signal, TimeGrid};
use crate::mor::{LiftedNonlinearity, Reducible};
use crate::sparse::{CsrMatrix, SparseLu, SysMatrix};

impl ImplicitModel<f64> for GasOde {
    fn dim(&self) -> usize {
        GasOde::dim(self)
    }

    fn apply_mass(&self, v: &DVector<f64>) -> DVector<f64> {
        self.mass.mul_vec(v)
    }

    fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>, udot: &DVector<f64>) -> Result<DVector<f64>> {
        let sdot = DVector::from_column_slice(&udot.as_slice()[..self.layout.n_s]);
        GasOde::rhs(self, x, u, &sdot)
    }

    fn iteration_matrix(&self, x: &DVector<f64>, u: &DVector<f64>, c: f64) -> Result<SysMatrix<f64>> {
        Ok(SysMatrix::Sparse(self.mass.add_scaled(1.0, &self.jacobian(x, u)?, -c)))
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(GasOde::output(self, x))
    }
}

impl Reducible<f64> for GasOde {
    fn mass_matrix(&self) -> CsrMatrix<f64> {
        self.mass.clone()
    }
    fn state_matrix(&self) -> CsrMatrix<f64> {
        self.a.clone()
    }
    fn input_matrix(&self) -> CsrMatrix<f64> {
        self.b.clone()
    }
    fn input_rate_matrix(&self) -> Option<CsrMatrix<f64>> {
        Some(GasOde::input_rate_matrix(self))
    }
    fn output_matrix(&self) -> CsrMatrix<f64> {
        self.c.clone()
    }
    fn lifted(&self) -> Option<LiftedNonlinearity<f64>> {
        let (lift, h, proj) = self.lifted_parts();
        Some(LiftedNonlinearity { f: self.f.clone(), lift, input_lift: Some(h), proj })
    }
}

#[derive(Debug, Deserialize)]
struct RawScenario {
    #[serde(default)]
    t0: f64,
    t_end: f64,
    dt: f64,
    supply: Vec<NodeSignal>,
    demand: Vec<NodeSignal>,
}

#[derive(Debug, Deserialize)]
struct NodeSignal {
    #[serde(deserialize_with = "node_id")]
    node: String,
    signal: Signal,
}

fn node_id<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    })
}

/// Boundary data and time window of a gas simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub grid: TimeGrid,
    /// `u = (s, d)` ordered like the supply and demand nodes of the network.
    pub inputs: Inputs,
}

impl Scenario {
    /// Constant supply pressures and demand flows.
    pub fn constant(net: &GasNetwork, grid: TimeGrid, supply: f64, demand: f64) -> Self {
        let mut v = vec![supply; net.n_s()];
        v.extend(std::iter::repeat_n(demand, net.n_d()));
        Self { grid, inputs: Inputs::constant(&v) }
    }
}

/// Parses `{t_end, dt, t0?, supply:[{node, signal}], demand:[{node, signal}]}`.
pub fn parse_scenario(text: &str, net: &GasNetwork) -> Result<Scenario> {
    let raw: RawScenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let grid = TimeGrid::new(raw.t0, raw.t_end, raw.dt)?;
    let mut channels = Vec::with_capacity(net.n_s() + net.n_d());
    for (nodes, given, what) in [(net.supply_nodes(), &raw.supply, "supply"), (net.demand_nodes(), &raw.demand, "demand")] {
        for ns in given {
            if !nodes.iter().any(|&v| net.nodes[v].id == ns.node) {
                return Err(Error::InvalidArgument(format!("'{}' is not a {what} node", ns.node)));
            }
        }
        for &v in &nodes {
            let id = &net.nodes[v].id;
            let mut hits = given.iter().filter(|s| &s.node == id);
            let sig = hits.next().ok_or_else(|| Error::InvalidArgument(format!("no signal for {what} node '{id}'")))?;
            if hits.next().is_some() {
                return Err(Error::InvalidArgument(format!("{what} node '{id}' has two signals")));
            }
            channels.push(sig.signal.clone());
        }
    }
    Ok(Scenario { grid, inputs: Inputs::new(channels)? })
}

/// Steady state of the gas DAE at input `u = (s, d)`.
///
/// Starts from uniform pressure `max s` and the minimum-norm flow satisfying
/// the nodal balance, then runs Newton with line search. Returns the state
/// and the relative residual.
pub fn gas_steady_state(dae: &GasDae, u: &DVector<f64>, opts: &NewtonOptions) -> Result<(DVector<f64>, f64)> {
    let l = dae.layout;
    if u.len() != l.inputs() {
        return Err(Error::Dimension(format!("input has length {}, expected {}", u.len(), l.inputs())));
    }
    let s = &u.as_slice()[..l.n_s];
    let d = DVector::from_column_slice(&u.as_slice()[l.n_s..]);
    let mut x = DVector::zeros(l.n());
    let p_ref = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    x.as_mut_slice()[l.p_d()].fill(p_ref);
    x.as_mut_slice()[l.p_s()].copy_from_slice(s);
    let a0 = &dae.inc.a_0;
    let lap = a0.matmul(&a0.transpose());
    let lu = SparseLu::new(&lap).map_err(|_| Error::InvalidNetwork("nodal balance is singular".into()))?;
    let q = a0.tr_mul_vec(&lu.solve(&dae.inc.b_d.mul_vec(&d)));
    x.as_mut_slice()[l.q_plus()].copy_from_slice(q.as_slice());
    let o = NewtonOptions { line_search: true, max_iter: opts.max_iter.max(50), ..*opts };
    steady_state(&dae.sys, u, &x, &o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_orders_channels_by_node() {
        let net = chain_network(&ChainSpec::new(2, 100.0, 0.5, Friction::Lambda(0.01))).unwrap();
        let sc = parse_scenario(
            r#"{"t_end": 10, "dt": 1, "demand": [{"node": 2, "signal": [[0, 1], [5, 2]]}], "supply": [{"node": "S", "signal": 5e6}]}"#,
            &net,
        )
        .unwrap();
        assert_eq!(sc.grid.steps, 10);
        let u: DVector<f64> = sc.inputs.value(2.5);
        assert_eq!(u.as_slice(), &[5e6, 1.5]);
        let missing = r#"{"t_end": 10, "dt": 1, "demand": [], "supply": [{"node": "S", "signal": 5e6}]}"#;
        assert!(matches!(parse_scenario(missing, &net), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn steady_state_conserves_mass() {
        let mut spec = ChainSpec::new(6, 2000.0, 0.5, Friction::Lambda(0.012));
        spec.slope = 5.0;
        let net = chain_network(&spec).unwrap();
        let dae = assemble_dae(&net, GasOptions::default()).unwrap();
        let u = DVector::from_vec(vec![5e6, 40.0]);
        let (x, res) = gas_steady_state(&dae, &u, &NewtonOptions::default()).unwrap();
        assert!(res < 1e-10, "residual {res}");
        let l = dae.layout;
        assert!(x.rows(0, l.n_e).norm() < 1e-8);
        let y = dae.sys.output(&x);
        assert!((y[0] - 40.0).abs() < 1e-8);
        // pressure drops toward the demand
        assert!(x[l.p_d().end - 1] < 5e6);
    }
}
