//! Domain types shared by every solver: the capacitated topology, adaptive
//! sessions with their discrete rate ladders, flow assignments, emitted plans
//! and the solver configuration. All types are immutable after construction
//! and safe to share across threads.

mod io;
mod validate;

pub use io::{
    load_config, load_demands, load_topology, parse_config, parse_demands, parse_topology,
    sessions_to_json, topology_to_json, write_json,
};
pub use validate::{validate_plan, Violation};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used by the validator and all feasibility comparisons.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Parse failures; serde_json messages carry line/column context.
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// One directed link with a fixed energy draw while powered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
    /// Rate units per second, strictly positive.
    pub capacity: f64,
    /// Power drawn whenever the link is on, independent of load.
    pub energy: f64,
}

/// Directed capacitated graph. Parallel links are allowed and are told apart
/// by their index (position in the link list).
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<String>,
    links: Vec<Link>,
    endpoints: Vec<(usize, usize)>,
    index: BTreeMap<String, usize>,
}

impl Topology {
    pub fn new(nodes: Vec<String>, links: Vec<Link>) -> Result<Self, ModelError> {
        if nodes.is_empty() {
            return Err(ModelError::Invalid("empty topology".into()));
        }
        let mut index = BTreeMap::new();
        for (i, name) in nodes.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(ModelError::Invalid(format!(
                    "nodes[{i}]: duplicate node id {name:?}"
                )));
            }
        }
        let mut endpoints = Vec::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            let from = *index.get(&link.from).ok_or_else(|| {
                ModelError::Invalid(format!("links[{i}].from: unknown node {:?}", link.from))
            })?;
            let to = *index.get(&link.to).ok_or_else(|| {
                ModelError::Invalid(format!("links[{i}].to: unknown node {:?}", link.to))
            })?;
            if from == to {
                return Err(ModelError::Invalid(format!(
                    "links[{i}]: self-loop on node {:?}",
                    link.from
                )));
            }
            if !(link.capacity.is_finite() && link.capacity > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "links[{i}].capacity: must be > 0 (got {})",
                    link.capacity
                )));
            }
            if !(link.energy.is_finite() && link.energy >= 0.0) {
                return Err(ModelError::Invalid(format!(
                    "links[{i}].energy: must be >= 0 (got {})",
                    link.energy
                )));
            }
            endpoints.push((from, to));
        }
        Ok(Self {
            nodes,
            links,
            endpoints,
            index,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// (tail, head) node indices of link `l`.
    pub fn endpoints(&self, l: usize) -> (usize, usize) {
        self.endpoints[l]
    }
}

/// Concave, nondecreasing benefit of receiving a given rate. Evaluates to 0
/// at rate 0 so dropped sessions contribute nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityFunction {
    /// `ln(1 + scale * r)`
    Log1p { scale: f64 },
    /// `slope * r`
    Linear { slope: f64 },
    /// `r / top`, normalized so the top of the session's ladder scores 1.
    NormalizedLadder { top: f64 },
}

impl UtilityFunction {
    /// Evaluate at a non-negative rate. Callers pass validated rates; use
    /// [`utility_eval`] for untrusted input.
    pub fn eval(&self, rate: f64) -> f64 {
        debug_assert!(rate >= 0.0, "negative rate {rate}");
        match *self {
            UtilityFunction::Log1p { scale } => (1.0 + scale * rate).ln(),
            UtilityFunction::Linear { slope } => slope * rate,
            UtilityFunction::NormalizedLadder { top } => rate / top,
        }
    }

    fn check_parameters(&self) -> Result<(), ModelError> {
        let ok = match *self {
            UtilityFunction::Log1p { scale } => scale.is_finite() && scale > 0.0,
            UtilityFunction::Linear { slope } => slope.is_finite() && slope > 0.0,
            UtilityFunction::NormalizedLadder { top } => top.is_finite() && top > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Invalid(format!(
                "utility parameter out of range: {self:?}"
            )))
        }
    }

    /// Numeric shape check: positive for r > 0, nondecreasing, and midpoint
    /// concavity over a sample grid up to `probe_max`.
    fn check_shape(&self, probe_max: f64) -> Result<(), ModelError> {
        let n = 17;
        let grid: Vec<f64> = (1..=n).map(|i| probe_max * i as f64 / n as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&r| self.eval(r)).collect();
        for (i, &v) in vals.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "utility not positive at r={}",
                    grid[i]
                )));
            }
            if i > 0 && v < vals[i - 1] - 1e-12 {
                return Err(ModelError::Invalid(format!(
                    "utility decreasing near r={}",
                    grid[i]
                )));
            }
        }
        for w in grid.windows(3).zip(vals.windows(3)) {
            let ((a, b, c), (ua, ub, uc)) = (
                (w.0[0], w.0[1], w.0[2]),
                (w.1[0], w.1[1], w.1[2]),
            );
            let t = (b - a) / (c - a);
            let chord = ua + t * (uc - ua);
            if ub < chord - 1e-12 {
                return Err(ModelError::Invalid(format!(
                    "utility not concave near r={b}"
                )));
            }
        }
        Ok(())
    }
}

/// Checked utility evaluation; rejects negative rates.
pub fn utility_eval(u: &UtilityFunction, rate: f64) -> Result<f64, ModelError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(ModelError::Invalid(format!(
            "rate must be non-negative and finite (got {rate})"
        )));
    }
    Ok(u.eval(rate))
}

/// One source/destination demand with its discrete rate ladder. An inelastic
/// session has a single-entry ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    source: String,
    destination: String,
    rates: Vec<f64>,
    utility: UtilityFunction,
}

impl Session {
    pub fn new(
        id: String,
        source: String,
        destination: String,
        rates: Vec<f64>,
        utility: UtilityFunction,
    ) -> Result<Self, ModelError> {
        if id.is_empty() {
            return Err(ModelError::Invalid("session id must not be empty".into()));
        }
        if source == destination {
            return Err(ModelError::Invalid(format!(
                "session {id:?}: source equals destination ({source:?})"
            )));
        }
        if rates.is_empty() {
            return Err(ModelError::Invalid(format!(
                "session {id:?}: rate ladder is empty"
            )));
        }
        for (i, &r) in rates.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "session {id:?}: rates[{i}] must be > 0 (got {r})"
                )));
            }
            if i > 0 && r <= rates[i - 1] {
                return Err(ModelError::Invalid(format!(
                    "session {id:?}: rates must be strictly increasing at index {i}"
                )));
            }
        }
        utility.check_parameters()?;
        utility.check_shape(rates[rates.len() - 1] * 1.5)?;
        Ok(Self {
            id,
            source,
            destination,
            rates,
            utility,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn destination(&self) -> &str {
        &self.destination
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn min_rate(&self) -> f64 {
        self.rates[0]
    }

    pub fn max_rate(&self) -> f64 {
        self.rates[self.rates.len() - 1]
    }

    pub fn utility(&self) -> &UtilityFunction {
        &self.utility
    }

    /// Rate candidates for a solver: the ladder, plus 0 when dropping is on.
    /// Ascending, so "ties prefer smaller" falls out of a first-strict-min scan.
    pub fn candidates(&self, allow_drop: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rates.len() + 1);
        if allow_drop {
            out.push(0.0);
        }
        out.extend_from_slice(&self.rates);
        out
    }
}

/// Per-(session, link) flow values plus the chosen per-session rates.
/// Rows are indexed by position in the session list a solver was given.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAssignment {
    /// `flows[session][link]`
    pub flows: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
}

impl FlowAssignment {
    pub fn zero(num_sessions: usize, num_links: usize) -> Self {
        Self {
            flows: vec![vec![0.0; num_links]; num_sessions],
            rates: vec![0.0; num_sessions],
        }
    }

    /// Total traffic over link `l`, summed across sessions.
    pub fn link_load(&self, l: usize) -> f64 {
        self.flows.iter().map(|row| row[l]).sum()
    }

    /// Outgoing minus incoming flow of session `k` at node `node`.
    pub fn net_outflow(&self, topo: &Topology, k: usize, node: usize) -> f64 {
        let mut net = 0.0;
        for (l, &(from, to)) in topo.endpoints.iter().enumerate() {
            if from == node {
                net += self.flows[k][l];
            }
            if to == node {
                net -= self.flows[k][l];
            }
        }
        net
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Unweighted sum of session utilities at the chosen rates.
    pub utility_sum: f64,
    /// Sum of energy over active links; no load dependence.
    pub energy_sum: f64,
    /// Mode objective: `-alpha*utility_sum + beta*energy_sum` in joint mode,
    /// `energy_sum` in constrained mode.
    pub combined: f64,
}

impl ObjectiveBreakdown {
    pub fn compute(
        topo: &Topology,
        sessions: &[Session],
        rates: &BTreeMap<String, f64>,
        active: &BTreeSet<usize>,
        cfg: &SolverConfig,
    ) -> Self {
        let utility_sum: f64 = sessions
            .iter()
            .map(|s| s.utility().eval(rates.get(s.id()).copied().unwrap_or(0.0)))
            .sum();
        let energy_sum: f64 = active.iter().map(|&l| topo.links()[l].energy).sum();
        let combined = match cfg.mode {
            SolveMode::Joint => -cfg.alpha * utility_sum + cfg.beta * energy_sum,
            SolveMode::Constrained => energy_sum,
        };
        Self {
            utility_sum,
            energy_sum,
            combined,
        }
    }
}

/// Solver output: which links stay powered, one route per session, the rate
/// each session was granted, and the objective breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub active_links: BTreeSet<usize>,
    /// Ordered link indices from source to destination; empty when dropped.
    pub routes: BTreeMap<String, Vec<usize>>,
    pub rates: BTreeMap<String, f64>,
    pub objective: ObjectiveBreakdown,
}

impl NetworkPlan {
    pub fn empty() -> Self {
        Self {
            active_links: BTreeSet::new(),
            routes: BTreeMap::new(),
            rates: BTreeMap::new(),
            objective: ObjectiveBreakdown {
                utility_sum: 0.0,
                energy_sum: 0.0,
                combined: 0.0,
            },
        }
    }
}

/// A plan together with the flow assignment that realizes it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub plan: NetworkPlan,
    pub flows: FlowAssignment,
    /// The mode objective of `plan` (joint combined value, or energy sum in
    /// constrained mode).
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Joint,
    Constrained,
}

/// Subgradient master-loop knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubgradientConfig {
    /// Step size at iteration t is `theta0 / sqrt(t)`.
    pub theta0: f64,
    pub max_iters: usize,
    pub stall_tolerance: f64,
    /// Iterations without a primal improvement before the stall test applies.
    pub stall_window: usize,
    /// Solve the link sub-problem exactly by subset enumeration (small
    /// instances only); makes the dual estimate a true lower bound.
    pub exact_subproblem1: bool,
    /// Pick rates by continuous relaxation + round-down instead of ladder
    /// enumeration.
    pub continuous_rates: bool,
    /// Initial multiplier; defaults to `beta * mean(energy) / mean(capacity)`.
    pub lambda0: Option<f64>,
}

impl Default for SubgradientConfig {
    fn default() -> Self {
        Self {
            theta0: 1.0,
            max_iters: 200,
            stall_tolerance: 1e-3,
            stall_window: 25,
            exact_subproblem1: false,
            continuous_rates: false,
            lambda0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mode: SolveMode,
    pub alpha: f64,
    pub beta: f64,
    /// Minimum acceptable utility; constrained mode only.
    pub u_floor: f64,
    pub allow_drop: bool,
    pub subgradient: SubgradientConfig,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: SolveMode::Joint,
            alpha: 1.0,
            beta: 1.0,
            u_floor: 0.0,
            allow_drop: false,
            subgradient: SubgradientConfig::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::Invalid(format!(
                "alpha must be > 0 (got {})",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ModelError::Invalid(format!(
                "beta must be > 0 (got {})",
                self.beta
            )));
        }
        if !self.u_floor.is_finite() {
            return Err(ModelError::Invalid("u_floor must be finite".into()));
        }
        let sg = &self.subgradient;
        if !(sg.theta0.is_finite() && sg.theta0 > 0.0) {
            return Err(ModelError::Invalid(format!(
                "subgradient.theta0 must be > 0 (got {})",
                sg.theta0
            )));
        }
        if sg.max_iters < 1 {
            return Err(ModelError::Invalid(
                "subgradient.max_iters must be >= 1".into(),
            ));
        }
        if !(sg.stall_tolerance.is_finite() && sg.stall_tolerance > 0.0) {
            return Err(ModelError::Invalid(
                "subgradient.stall_tolerance must be > 0".into(),
            ));
        }
        if let Some(l0) = sg.lambda0 {
            if !(l0.is_finite() && l0 >= 0.0) {
                return Err(ModelError::Invalid(
                    "subgradient.lambda0 must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Joint objective `-alpha * sum(U(r_k)) + beta * sum(energy of active links)`.
/// Dropped sessions contribute `U(0) = 0`.
pub fn objective_joint(
    plan: &NetworkPlan,
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
) -> f64 {
    let utility_sum: f64 = sessions
        .iter()
        .map(|s| {
            s.utility()
                .eval(plan.rates.get(s.id()).copied().unwrap_or(0.0))
        })
        .sum();
    let energy_sum: f64 = plan
        .active_links
        .iter()
        .map(|&l| topo.links()[l].energy)
        .sum();
    -cfg.alpha * utility_sum + cfg.beta * energy_sum
}

/// Energy sum if every non-dropped session meets the utility floor, `None`
/// (infeasible) otherwise. The floor comparison is `>=`.
pub fn objective_constrained(
    plan: &NetworkPlan,
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
) -> Option<f64> {
    for s in sessions {
        let rate = plan.rates.get(s.id()).copied().unwrap_or(0.0);
        if rate > 0.0 && s.utility().eval(rate) < cfg.u_floor {
            return None;
        }
    }
    Some(
        plan.active_links
            .iter()
            .map(|&l| topo.links()[l].energy)
            .sum(),
    )
}
