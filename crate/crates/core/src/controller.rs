//! Discrete-epoch control loop at desk scale. Each epoch the active session
//! set is updated from the trace, the chosen solver recomputes a plan, and
//! the result is turned into a provisioning order (link power states plus
//! per-node routing tables) and a telemetry report for the epoch duration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lagrangian::{self, LagrangianError};
use crate::model::{
    FlowAssignment, NetworkPlan, Session, SolverConfig, Topology, UtilityFunction,
};
use crate::oracle::{self, OracleError, OracleLimits};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("solver failure at epoch {epoch}: {message}")]
    Solver { epoch: usize, message: String },
    #[error("epoch {epoch}: emitted plan failed validation: {detail}")]
    Invariant { epoch: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Epoch {
    pub index: usize,
    /// Seconds; demand is fixed for the whole epoch.
    pub duration: f64,
    pub arrivals: Vec<Session>,
    pub departures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochTrace {
    pub epochs: Vec<Epoch>,
}

impl EpochTrace {
    /// Departures are applied before arrivals within an epoch, so a departure
    /// must reference a session active at the end of the previous epoch.
    pub fn validate(&self, topo: &Topology) -> Result<(), SimError> {
        let mut active: BTreeSet<String> = BTreeSet::new();
        for (i, epoch) in self.epochs.iter().enumerate() {
            if epoch.index != i {
                return Err(SimError::InvalidTrace(format!(
                    "epochs[{i}] has index {}, expected {i}",
                    epoch.index
                )));
            }
            if !(epoch.duration.is_finite() && epoch.duration > 0.0) {
                return Err(SimError::InvalidTrace(format!(
                    "epochs[{i}]: duration must be > 0 (got {})",
                    epoch.duration
                )));
            }
            for dep in &epoch.departures {
                if !active.remove(dep) {
                    return Err(SimError::InvalidTrace(format!(
                        "epochs[{i}]: departure {dep:?} is not an active session"
                    )));
                }
            }
            for s in &epoch.arrivals {
                if topo.node_index(s.source()).is_none() || topo.node_index(s.destination()).is_none()
                {
                    return Err(SimError::InvalidTrace(format!(
                        "epochs[{i}]: session {:?} references an unknown node",
                        s.id()
                    )));
                }
                if !active.insert(s.id().to_string()) {
                    return Err(SimError::InvalidTrace(format!(
                        "epochs[{i}]: session id {:?} already active",
                        s.id()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_trace(text: &str, origin: &str) -> Result<EpochTrace, SimError> {
    serde_json::from_str(text)
        .map_err(|e| SimError::InvalidTrace(format!("{origin}: {e}")))
}

pub fn load_trace(path: &Path) -> Result<EpochTrace, SimError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Oracle,
    Lagrangian,
}

/// State pushed to the forwarding elements for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisioningOrder {
    pub epoch: usize,
    pub links_on: BTreeSet<usize>,
    pub links_off: BTreeSet<usize>,
    /// node -> (session id -> next-hop node)
    pub routing_tables: BTreeMap<String, BTreeMap<String, String>>,
    pub rates: BTreeMap<String, f64>,
    /// True when the solver found no feasible plan and the previous epoch's
    /// provisioning was kept installed.
    pub retained: bool,
}

impl ProvisioningOrder {
    fn from_plan(epoch: usize, topo: &Topology, plan: &NetworkPlan, retained: bool) -> Self {
        let mut routing_tables: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (sid, route) in &plan.routes {
            for &l in route {
                let link = &topo.links()[l];
                routing_tables
                    .entry(link.from.clone())
                    .or_default()
                    .insert(sid.clone(), link.to.clone());
            }
        }
        let links_on = plan.active_links.clone();
        let links_off = (0..topo.num_links())
            .filter(|l| !links_on.contains(l))
            .collect();
        Self {
            epoch,
            links_on,
            links_off,
            routing_tables,
            rates: plan.rates.clone(),
            retained,
        }
    }

    /// Follow the tables hop by hop. Returns the node path when the session
    /// reaches `dest` without revisiting a node, `None` otherwise.
    pub fn replay(&self, session: &str, source: &str, dest: &str) -> Option<Vec<String>> {
        let mut path = vec![source.to_string()];
        let mut current = source.to_string();
        let mut visited: BTreeSet<String> = [current.clone()].into_iter().collect();
        while current != dest {
            let next = self.routing_tables.get(&current)?.get(session)?.clone();
            if !visited.insert(next.clone()) {
                return None; // loop
            }
            path.push(next.clone());
            current = next;
        }
        Some(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkTelemetry {
    pub on: bool,
    /// Allocated bandwidth over capacity, in [0, 1].
    pub utilization: f64,
    /// `energy_rate * duration` while on, 0 while off.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionTelemetry {
    pub rate: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryReport {
    pub epoch: usize,
    pub duration: f64,
    pub links: Vec<LinkTelemetry>,
    pub sessions: BTreeMap<String, SessionTelemetry>,
    pub energy_total: f64,
    pub utility_total: f64,
}

impl TelemetryReport {
    fn build(
        epoch: usize,
        duration: f64,
        topo: &Topology,
        plan: &NetworkPlan,
        flows: &FlowAssignment,
        sessions: &[Session],
    ) -> Self {
        let links: Vec<LinkTelemetry> = (0..topo.num_links())
            .map(|l| {
                let on = plan.active_links.contains(&l);
                let load = if flows.flows.is_empty() {
                    0.0
                } else {
                    flows.link_load(l)
                };
                LinkTelemetry {
                    on,
                    utilization: load / topo.links()[l].capacity,
                    energy: if on {
                        topo.links()[l].energy * duration
                    } else {
                        0.0
                    },
                }
            })
            .collect();
        let mut session_rows = BTreeMap::new();
        let mut utility_total = 0.0;
        for s in sessions {
            let rate = plan.rates.get(s.id()).copied().unwrap_or(0.0);
            let utility = s.utility().eval(rate);
            utility_total += utility;
            session_rows.insert(s.id().to_string(), SessionTelemetry { rate, utility });
        }
        let energy_total = plan
            .active_links
            .iter()
            .map(|&l| topo.links()[l].energy)
            .sum::<f64>()
            * duration;
        Self {
            epoch,
            duration,
            links,
            sessions: session_rows,
            energy_total,
            utility_total,
        }
    }
}

/// Run the control loop over a trace. Per epoch: apply departures then
/// arrivals, re-solve with the chosen solver, provision, and report. When the
/// solver finds no feasible plan the previous provisioning stays installed
/// and the epoch is flagged.
pub fn run_simulation(
    topo: &Topology,
    trace: &EpochTrace,
    cfg: &SolverConfig,
    solver: SolverKind,
) -> Result<Vec<(ProvisioningOrder, TelemetryReport)>, SimError> {
    trace.validate(topo)?;
    cfg.validate()
        .map_err(|e| SimError::InvalidParams(e.to_string()))?;

    let mut active: BTreeMap<String, Session> = BTreeMap::new();
    let mut installed: Option<(NetworkPlan, FlowAssignment, Vec<Session>)> = None;
    let mut out = Vec::with_capacity(trace.epochs.len());

    for epoch in &trace.epochs {
        for dep in &epoch.departures {
            active.remove(dep);
        }
        for s in &epoch.arrivals {
            active.insert(s.id().to_string(), s.clone());
        }
        let sessions: Vec<Session> = active.values().cloned().collect();

        match solve(topo, &sessions, cfg, solver) {
            Ok(Some(solution)) => {
                let violations =
                    crate::model::validate_plan(&solution.plan, topo, &sessions, &solution.flows);
                if let Some(first) = violations.first() {
                    return Err(SimError::Invariant {
                        epoch: epoch.index,
                        detail: format!("{first:?} (+{} more)", violations.len() - 1),
                    });
                }
                let order =
                    ProvisioningOrder::from_plan(epoch.index, topo, &solution.plan, false);
                let telemetry = TelemetryReport::build(
                    epoch.index,
                    epoch.duration,
                    topo,
                    &solution.plan,
                    &solution.flows,
                    &sessions,
                );
                installed = Some((solution.plan, solution.flows, sessions));
                out.push((order, telemetry));
            }
            Ok(None) => {
                // Infeasible: keep the installed state, flag the epoch.
                let (plan, flows, snapshot) = match &installed {
                    Some((p, f, s)) => (p.clone(), f.clone(), s.clone()),
                    None => (NetworkPlan::empty(), FlowAssignment::zero(0, 0), Vec::new()),
                };
                let order = ProvisioningOrder::from_plan(epoch.index, topo, &plan, true);
                let telemetry = TelemetryReport::build(
                    epoch.index,
                    epoch.duration,
                    topo,
                    &plan,
                    &flows,
                    &snapshot,
                );
                out.push((order, telemetry));
            }
            Err(message) => {
                return Err(SimError::Solver {
                    epoch: epoch.index,
                    message,
                });
            }
        }
    }
    Ok(out)
}

/// `Ok(None)` marks solver infeasibility (to be handled by retention).
fn solve(
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
    solver: SolverKind,
) -> Result<Option<crate::model::Solution>, String> {
    match solver {
        SolverKind::Oracle => {
            match oracle::solve_exact(topo, sessions, cfg, &OracleLimits::default()) {
                Ok(sol) => Ok(Some(sol)),
                Err(OracleError::NoFeasiblePlan) => Ok(None),
                Err(e) => Err(e.to_string()),
            }
        }
        SolverKind::Lagrangian => match lagrangian::solve_lagrangian(topo, sessions, cfg) {
            Ok(sol) => Ok(Some(sol.solution)),
            Err(LagrangianError::NoFeasiblePlan) => Ok(None),
            Err(e) => Err(e.to_string()),
        },
    }
}

#[derive(Debug, Clone)]
pub struct TraceParams {
    pub num_epochs: usize,
    /// Mean arrivals per epoch (Poisson).
    pub arrival_rate: f64,
    /// Mean session lifetime in epochs (geometric, at least 1).
    pub mean_holding_epochs: f64,
    pub ladder: Vec<f64>,
    pub epoch_duration: f64,
    pub utility: UtilityFunction,
    pub seed: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            num_epochs: 10,
            arrival_rate: 1.0,
            mean_holding_epochs: 3.0,
            ladder: vec![0.25, 0.5, 1.0],
            epoch_duration: 1.0,
            utility: UtilityFunction::Log1p { scale: 1.0 },
            seed: 0,
        }
    }
}

/// Reproducible synthetic trace. The draw order per epoch is fixed and part
/// of the contract: one Poisson arrival count, then per arrival a uniform
/// source index in `0..n`, a uniform offset in `1..n` (destination is
/// `(source + offset) % n`), and a geometric holding time `1 + G(1/mean)`.
pub fn generate_trace(topo: &Topology, params: &TraceParams) -> Result<EpochTrace, SimError> {
    let n = topo.num_nodes();
    if n < 2 {
        return Err(SimError::InvalidParams(
            "trace generation needs at least 2 nodes".into(),
        ));
    }
    if !(params.arrival_rate.is_finite() && params.arrival_rate >= 0.0) {
        return Err(SimError::InvalidParams(format!(
            "arrival_rate must be >= 0 (got {})",
            params.arrival_rate
        )));
    }
    if !(params.mean_holding_epochs.is_finite() && params.mean_holding_epochs >= 1.0) {
        return Err(SimError::InvalidParams(format!(
            "mean_holding_epochs must be >= 1 (got {})",
            params.mean_holding_epochs
        )));
    }
    if !(params.epoch_duration.is_finite() && params.epoch_duration > 0.0) {
        return Err(SimError::InvalidParams(format!(
            "epoch_duration must be > 0 (got {})",
            params.epoch_duration
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let poisson = if params.arrival_rate > 0.0 {
        Some(Poisson::new(params.arrival_rate).map_err(|e| {
            SimError::InvalidParams(format!("arrival_rate: {e:?}"))
        })?)
    } else {
        None
    };
    let geometric = Geometric::new(1.0 / params.mean_holding_epochs)
        .map_err(|e| SimError::InvalidParams(format!("mean_holding_epochs: {e:?}")))?;

    let mut epochs: Vec<Epoch> = (0..params.num_epochs)
        .map(|index| Epoch {
            index,
            duration: params.epoch_duration,
            arrivals: Vec::new(),
            departures: Vec::new(),
        })
        .collect();
    let mut counter = 0usize;
    for e in 0..params.num_epochs {
        let count = match &poisson {
            Some(p) => p.sample(&mut rng) as usize,
            None => 0,
        };
        for _ in 0..count {
            let src = rng.gen_range(0..n);
            let offset = rng.gen_range(1..n);
            let dst = (src + offset) % n;
            let holding = 1 + geometric.sample(&mut rng) as usize;
            let id = format!("s{counter:05}");
            counter += 1;
            let session = Session::new(
                id.clone(),
                topo.nodes()[src].clone(),
                topo.nodes()[dst].clone(),
                params.ladder.clone(),
                params.utility,
            )
            .map_err(|err| SimError::InvalidParams(err.to_string()))?;
            epochs[e].arrivals.push(session);
            let departs = e + holding;
            if departs < params.num_epochs {
                epochs[departs].departures.push(id);
            }
        }
    }
    Ok(EpochTrace { epochs })
}

/// One CSV in long format: epoch-level totals repeated per session row;
/// epochs without sessions emit a single row with empty session fields.
pub fn write_telemetry_csv(
    path: &Path,
    results: &[(ProvisioningOrder, TelemetryReport)],
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "duration_s",
        "energy_total",
        "utility_total",
        "links_on_count",
        "session_id",
        "rate",
        "utility",
    ])?;
    for (order, telemetry) in results {
        let prefix = [
            telemetry.epoch.to_string(),
            telemetry.duration.to_string(),
            telemetry.energy_total.to_string(),
            telemetry.utility_total.to_string(),
            order.links_on.len().to_string(),
        ];
        if telemetry.sessions.is_empty() {
            let mut record = prefix.to_vec();
            record.extend(["".to_string(), "".to_string(), "".to_string()]);
            w.write_record(&record)?;
        } else {
            for (sid, row) in &telemetry.sessions {
                let mut record = prefix.to_vec();
                record.extend([sid.clone(), row.rate.to_string(), row.utility.to_string()]);
                w.write_record(&record)?;
            }
        }
    }
    w.flush().map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn write_orders_json(
    path: &Path,
    results: &[(ProvisioningOrder, TelemetryReport)],
) -> Result<(), SimError> {
    let orders: Vec<&ProvisioningOrder> = results.iter().map(|(o, _)| o).collect();
    crate::model::write_json(path, &orders)
        .map_err(|e| SimError::InvalidParams(e.to_string()))
}
