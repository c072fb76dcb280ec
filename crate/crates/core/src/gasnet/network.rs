use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Standard gravity in m/s².
pub const GRAVITY: f64 = 9.80665;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Supply,
    Demand,
    Interior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasConstants {
    #[serde(rename = "Rs")]
    pub rs: f64,
    #[serde(rename = "T0", default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_z0")]
    pub z0: f64,
}

fn default_t0() -> f64 {
    283.15
}

fn default_z0() -> f64 {
    1.0
}

impl Default for GasConstants {
    /// Methane at 283.15 K.
    fn default() -> Self {
        Self { rs: 518.26, t0: default_t0(), z0: default_z0() }
    }
}

impl GasConstants {
    /// `γ0 = R_s T0 z0`.
    pub fn gamma0(&self) -> f64 {
        self.rs * self.t0 * self.z0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    #[serde(deserialize_with = "id_string")]
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    #[serde(deserialize_with = "id_string")]
    pub id: String,
    #[serde(deserialize_with = "id_string")]
    pub from: String,
    #[serde(deserialize_with = "id_string")]
    pub to: String,
    pub length: f64,
    pub diameter: f64,
    /// Friction factor; derived from `roughness` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Wall roughness in m.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roughness: Option<f64>,
    /// Height difference; defaults to `height(to) − height(from)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh: Option<f64>,
    /// Number of equal segments this pipe is split into by [`refine_network`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
}

impl Pipe {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }
}

fn id_string<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        I(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::I(i) => i.to_string(),
    })
}

/// Friction factor of a fully rough pipe, `1/√λ = 2 log10(D/k) + 1.138`.
pub fn nikuradse(diameter: f64, roughness: f64) -> f64 {
    let s = 2.0 * (diameter / roughness).log10() + 1.138;
    1.0 / (s * s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawNetwork {
    #[serde(default)]
    gas: GasConstants,
    nodes: Vec<Node>,
    pipes: Vec<Pipe>,
}

/// Validated pipe network with resolved friction factors and height differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GasNetwork {
    pub gas: GasConstants,
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    /// Per pipe `(from, to)` node positions.
    pub ends: Vec<(usize, usize)>,
    /// Resolved `λ_k`.
    pub lambda: Vec<f64>,
    /// Resolved `Δh_k`.
    pub dh: Vec<f64>,
}

impl GasNetwork {
    pub fn new(gas: GasConstants, nodes: Vec<Node>, pipes: Vec<Pipe>) -> Result<Self> {
        let bad = |m: String| Error::InvalidNetwork(m);
        if !(gas.rs > 0.0 && gas.t0 > 0.0 && gas.z0 > 0.0) {
            return Err(bad("gas constants Rs, T0, z0 must be positive".into()));
        }
        let mut pos = HashMap::new();
        for (i, nd) in nodes.iter().enumerate() {
            if pos.insert(nd.id.as_str(), i).is_some() {
                return Err(bad(format!("duplicate node id '{}'", nd.id)));
            }
        }
        let mut pipe_ids = HashSet::new();
        let mut ends = Vec::with_capacity(pipes.len());
        let mut lambda = Vec::with_capacity(pipes.len());
        let mut dh = Vec::with_capacity(pipes.len());
        for p in &pipes {
            if !pipe_ids.insert(p.id.as_str()) {
                return Err(bad(format!("duplicate pipe id '{}'", p.id)));
            }
            let lookup = |id: &str| pos.get(id).copied().ok_or_else(|| bad(format!("pipe '{}' references unknown node '{id}'", p.id)));
            let (a, b) = (lookup(&p.from)?, lookup(&p.to)?);
            if a == b {
                return Err(bad(format!("pipe '{}' is a self loop", p.id)));
            }
            if !(p.length > 0.0 && p.diameter > 0.0) {
                return Err(bad(format!("pipe '{}' needs positive length and diameter", p.id)));
            }
            if p.segments == Some(0) {
                return Err(bad(format!("pipe '{}' has zero segments", p.id)));
            }
            let lam = match (p.lambda, p.roughness) {
                (Some(l), _) => l,
                (None, Some(k)) if k > 0.0 && k < p.diameter => nikuradse(p.diameter, k),
                (None, Some(_)) => return Err(bad(format!("pipe '{}' roughness must lie in (0, D)", p.id))),
                (None, None) => return Err(bad(format!("pipe '{}' needs lambda or roughness", p.id))),
            };
            if !(lam >= 0.0 && lam.is_finite()) {
                return Err(bad(format!("pipe '{}' has negative friction factor", p.id)));
            }
            ends.push((a, b));
            lambda.push(lam);
            dh.push(p.dh.unwrap_or(nodes[b].height - nodes[a].height));
        }
        let net = Self { gas, nodes, pipes, ends, lambda, dh };
        if net.count(NodeKind::Supply) == 0 {
            return Err(bad("network has no supply node".into()));
        }
        if net.count(NodeKind::Demand) == 0 {
            return Err(bad("network has no demand node".into()));
        }
        if !net.is_connected() {
            return Err(bad("network graph is disconnected".into()));
        }
        Ok(net)
    }

    fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.ends {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n_s(&self) -> usize {
        self.count(NodeKind::Supply)
    }

    pub fn n_d(&self) -> usize {
        self.count(NodeKind::Demand)
    }

    pub fn n_0(&self) -> usize {
        self.count(NodeKind::Interior)
    }

    pub fn n_e(&self) -> usize {
        self.pipes.len()
    }

    /// `n = 2 n_E + n_d + n_0 + n_s`.
    pub fn dae_dim(&self) -> usize {
        2 * self.n_e() + self.nodes.len()
    }

    /// `ñ = n_d + n_0 + n_E`.
    pub fn ode_dim(&self) -> usize {
        self.n_e() + self.nodes.len() - self.n_s()
    }

    pub fn gamma0(&self) -> f64 {
        self.gas.gamma0()
    }

    /// Positions of supply nodes, in file order.
    pub fn supply_nodes(&self) -> Vec<usize> {
        self.positions(|k| k == NodeKind::Supply)
    }

    /// Positions of demand nodes, in file order.
    pub fn demand_nodes(&self) -> Vec<usize> {
        self.positions(|k| k == NodeKind::Demand)
    }

    /// Positions of demand and interior nodes, in file order.
    pub fn pressure_nodes(&self) -> Vec<usize> {
        self.positions(|k| k != NodeKind::Supply)
    }

    fn positions(&self, keep: impl Fn(NodeKind) -> bool) -> Vec<usize> {
        self.nodes.iter().enumerate().filter(|(_, n)| keep(n.kind)).map(|(i, _)| i).collect()
    }

    pub fn node_position(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        let raw = RawNetwork { gas: self.gas, nodes: self.nodes.clone(), pipes: self.pipes.clone() };
        serde_json::to_string_pretty(&raw).expect("network serializes")
    }
}

/// Parses and validates a JSON network document.
pub fn parse_network(text: &str) -> Result<GasNetwork> {
    let raw: RawNetwork = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for p in &raw.pipes {
        if !seen.insert(p.id.as_str()) {
            let (line, column) = locate_duplicate(text, &p.id);
            return Err(Error::Parse { line, column, message: format!("duplicate pipe id '{}'", p.id) });
        }
    }
    GasNetwork::new(raw.gas, raw.nodes, raw.pipes)
}

/// Line and column of the last `"id"` field carrying `id`.
fn locate_duplicate(text: &str, id: &str) -> (usize, usize) {
    let quoted = format!("\"{id}\"");
    let mut hit = (0, 0);
    for (ln, line) in text.lines().enumerate() {
        let mut from = 0;
        while let Some(k) = line[from..].find("\"id\"") {
            let start = from + k;
            let rest = line[start + 4..].trim_start().trim_start_matches(':').trim_start();
            if rest.starts_with(&quoted) || rest.starts_with(id) && !id.is_empty() {
                hit = (ln + 1, start + 1);
            }
            from = start + 4;
        }
    }
    hit
}

/// Splits every pipe into `segments_per_pipe · pipe.segments` equal parts.
///
/// New junctions are interior nodes named `<pipe>#<k>` with linearly
/// interpolated heights; segment pipes are named `<pipe>/<k>`.
pub fn refine_network(net: &GasNetwork, segments_per_pipe: usize) -> Result<GasNetwork> {
    if segments_per_pipe == 0 {
        return Err(Error::InvalidArgument("segments per pipe must be at least 1".into()));
    }
    let mut nodes = net.nodes.clone();
    let mut pipes = Vec::new();
    for (k, p) in net.pipes.iter().enumerate() {
        let m = segments_per_pipe * p.segments.unwrap_or(1);
        let mut base = p.clone();
        base.segments = None;
        if m == 1 {
            pipes.push(base);
            continue;
        }
        let (a, b) = net.ends[k];
        let (ha, hb) = (net.nodes[a].height, net.nodes[b].height);
        let mut prev = p.from.clone();
        for s in 0..m {
            let next = if s + 1 == m {
                p.to.clone()
            } else {
                let id = format!("{}#{}", p.id, s + 1);
                let frac = (s + 1) as f64 / m as f64;
                nodes.push(Node { id: id.clone(), kind: NodeKind::Interior, height: ha + frac * (hb - ha) });
                id
            };
            pipes.push(Pipe {
                id: format!("{}/{}", p.id, s + 1),
                from: prev,
                to: next.clone(),
                length: p.length / m as f64,
                lambda: Some(net.lambda[k]),
                dh: Some(net.dh[k] / m as f64),
                ..base.clone()
            });
            prev = next;
        }
    }
    GasNetwork::new(net.gas, nodes, pipes)
}

/// Parameters of the built-in chain network.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    pub pipes: usize,
    /// Length of each pipe.
    pub length: f64,
    pub diameter: f64,
    pub friction: Friction,
    pub gas: GasConstants,
    /// Height increment per pipe.
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Friction {
    Lambda(f64),
    Roughness(f64),
}

impl ChainSpec {
    pub fn new(pipes: usize, length: f64, diameter: f64, friction: Friction) -> Self {
        Self { pipes, length, diameter, friction, gas: GasConstants::default(), slope: 0.0 }
    }
}

/// `S — 1 — 2 — … — N` with supply `S` and demand at node `N`.
pub fn chain_network(spec: &ChainSpec) -> Result<GasNetwork> {
    if spec.pipes == 0 {
        return Err(Error::InvalidArgument("chain needs at least one pipe".into()));
    }
    let n = spec.pipes;
    let mut nodes = vec![Node { id: "S".into(), kind: NodeKind::Supply, height: 0.0 }];
    for i in 1..=n {
        let kind = if i == n { NodeKind::Demand } else { NodeKind::Interior };
        nodes.push(Node { id: i.to_string(), kind, height: spec.slope * i as f64 });
    }
    let (lambda, roughness) = match spec.friction {
        Friction::Lambda(l) => (Some(l), None),
        Friction::Roughness(k) => (None, Some(k)),
    };
    let pipes = (1..=n)
        .map(|i| Pipe {
            id: format!("P{i}"),
            from: nodes[i - 1].id.clone(),
            to: nodes[i].id.clone(),
            length: spec.length,
            diameter: spec.diameter,
            lambda,
            roughness,
            dh: None,
            segments: None,
        })
        .collect();
    GasNetwork::new(spec.gas, nodes, pipes)
}
