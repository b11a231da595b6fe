//! Exact solver for desk-size instances: enumerate every active-link subset
//! and every ladder rate vector, test multicommodity feasibility, and keep
//! the best plan under a deterministic tie-break. Ground truth for all
//! heuristic testing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::graph;
use crate::lp::{self, Demand};
use crate::model::{
    FlowAssignment, NetworkPlan, ObjectiveBreakdown, Session, SolveMode, SolverConfig, Solution,
    Topology, TOLERANCE,
};

#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_links: usize,
    /// Cap on `2^links * product(ladder sizes)`.
    pub max_rate_combos: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_links: 14,
            max_rate_combos: 2_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("no feasible plan exists under the given constraints")]
    NoFeasiblePlan,
    #[error("{0}")]
    Invalid(String),
    #[error("lp failure: {0}")]
    Lp(#[from] lp::LpError),
}

struct Candidate {
    value: f64,
    energy: f64,
    active: BTreeSet<usize>,
    rates: Vec<f64>,
    flows: Vec<Vec<f64>>,
}

/// Signature of an aggregated demand set; commodities sharing (source, dest)
/// are interchangeable for splittable feasibility, so the witness cache keys
/// on totals per pair.
type DemandSig = Vec<(usize, usize, u64)>;

pub fn solve_exact(
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
    limits: &OracleLimits,
) -> Result<Solution, OracleError> {
    cfg.validate().map_err(|e| OracleError::Invalid(e.to_string()))?;
    let endpoints = resolve_endpoints(topo, sessions)?;
    let num_links = topo.num_links();

    let candidates: Vec<Vec<f64>> = sessions
        .iter()
        .map(|s| s.candidates(cfg.allow_drop))
        .collect();
    let combos: u128 = candidates.iter().map(|c| c.len() as u128).product();
    let pairs = combos.saturating_mul(1u128 << num_links.min(127));
    if num_links > limits.max_links || pairs > limits.max_rate_combos as u128 {
        return Err(OracleError::TooLarge(format!(
            "{num_links} links x {combos} rate vectors"
        )));
    }

    let mut memo: HashMap<(u64, DemandSig), Option<Vec<Vec<f64>>>> = HashMap::new();
    let mut best: Option<Candidate> = None;

    let mut odometer = vec![0usize; sessions.len()];
    loop {
        let rates: Vec<f64> = odometer
            .iter()
            .enumerate()
            .map(|(k, &i)| candidates[k][i])
            .collect();
        if passes_floor(sessions, &rates, cfg) {
            evaluate_rate_vector(
                topo, sessions, cfg, &endpoints, &rates, &mut memo, &mut best,
            )?;
        }
        if !advance(&mut odometer, &candidates) {
            break;
        }
    }

    let best = best.ok_or(OracleError::NoFeasiblePlan)?;
    Ok(build_solution(topo, sessions, cfg, &endpoints, best))
}

fn resolve_endpoints(
    topo: &Topology,
    sessions: &[Session],
) -> Result<Vec<(usize, usize)>, OracleError> {
    sessions
        .iter()
        .map(|s| {
            let src = topo.node_index(s.source()).ok_or_else(|| {
                OracleError::Invalid(format!(
                    "session {:?}: unknown node {:?}",
                    s.id(),
                    s.source()
                ))
            })?;
            let dst = topo.node_index(s.destination()).ok_or_else(|| {
                OracleError::Invalid(format!(
                    "session {:?}: unknown node {:?}",
                    s.id(),
                    s.destination()
                ))
            })?;
            Ok((src, dst))
        })
        .collect()
}

fn passes_floor(sessions: &[Session], rates: &[f64], cfg: &SolverConfig) -> bool {
    if cfg.mode != SolveMode::Constrained {
        return true;
    }
    sessions
        .iter()
        .zip(rates.iter())
        .all(|(s, &r)| r == 0.0 || s.utility().eval(r) >= cfg.u_floor)
}

fn advance(odometer: &mut [usize], candidates: &[Vec<f64>]) -> bool {
    for k in (0..odometer.len()).rev() {
        odometer[k] += 1;
        if odometer[k] < candidates[k].len() {
            return true;
        }
        odometer[k] = 0;
    }
    false
}

#[allow(clippy::too_many_arguments)]
fn evaluate_rate_vector(
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
    endpoints: &[(usize, usize)],
    rates: &[f64],
    memo: &mut HashMap<(u64, DemandSig), Option<Vec<Vec<f64>>>>,
    best: &mut Option<Candidate>,
) -> Result<(), OracleError> {
    let num_links = topo.num_links();

    // Aggregate same-(source, dest) commodities; feasibility only depends on
    // the totals, and a proportional split recovers per-session flows.
    let mut totals: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (k, &r) in rates.iter().enumerate() {
        if r > 0.0 {
            *totals.entry(endpoints[k]).or_insert(0.0) += r;
        }
    }
    let sig: DemandSig = totals
        .iter()
        .map(|(&(s, d), &r)| (s, d, r.to_bits()))
        .collect();
    let demands: Vec<Demand> = totals
        .iter()
        .map(|(&(source, dest), &rate)| Demand { source, dest, rate })
        .collect();

    for mask in 0u64..(1u64 << num_links) {
        let witness = match memo.entry((mask, sig.clone())) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let active: BTreeSet<usize> =
                    (0..num_links).filter(|l| mask & (1 << l) != 0).collect();
                let outcome = lp::mcf_feasible(topo, &active, &demands)?;
                e.insert(outcome.feasible.then_some(outcome.flows))
            }
        };
        let agg_flows = match witness {
            Some(f) => f,
            None => continue,
        };

        // Proportional disaggregation back to per-session flows.
        let mut flows = vec![vec![0.0; num_links]; sessions.len()];
        for (k, &r) in rates.iter().enumerate() {
            if r <= 0.0 {
                continue;
            }
            let pair = endpoints[k];
            let total = totals[&pair];
            let idx = totals.keys().position(|&p| p == pair).expect("pair present");
            let share = r / total;
            for l in 0..num_links {
                flows[k][l] = agg_flows[idx][l] * share;
            }
        }

        let active: BTreeSet<usize> = (0..num_links)
            .filter(|&l| flows.iter().map(|f| f[l]).sum::<f64>() > TOLERANCE)
            .collect();
        let energy: f64 = active.iter().map(|&l| topo.links()[l].energy).sum();
        let value = match cfg.mode {
            SolveMode::Joint => {
                let utility: f64 = sessions
                    .iter()
                    .zip(rates.iter())
                    .map(|(s, &r)| s.utility().eval(r))
                    .sum();
                -cfg.alpha * utility + cfg.beta * energy
            }
            SolveMode::Constrained => energy,
        };

        let better = match best {
            None => true,
            Some(b) => match value.total_cmp(&b.value) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => match energy.total_cmp(&b.energy) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => active < b.active,
                },
            },
        };
        if better {
            *best = Some(Candidate {
                value,
                energy,
                active,
                rates: rates.to_vec(),
                flows,
            });
        }
    }
    Ok(())
}

/// Turn the winning candidate into a plan. Prefer single-path routes that
/// carry each session's full rate; when the witness genuinely needs to split
/// a session across paths, keep the witness flows and emit the widest path
/// as the representative route.
fn build_solution(
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
    endpoints: &[(usize, usize)],
    best: Candidate,
) -> Solution {
    let mut routes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut rates: BTreeMap<String, f64> = BTreeMap::new();
    for (k, s) in sessions.iter().enumerate() {
        rates.insert(s.id().to_string(), best.rates[k]);
        routes.insert(s.id().to_string(), Vec::new());
    }

    let extraction = extract_single_paths(topo, sessions, endpoints, &best);
    let (active, flows) = match extraction {
        Some((paths, pushed)) => {
            let mut active = BTreeSet::new();
            for (k, s) in sessions.iter().enumerate() {
                for &l in &paths[k] {
                    active.insert(l);
                }
                routes.insert(s.id().to_string(), paths[k].clone());
            }
            (active, pushed)
        }
        None => {
            for (k, s) in sessions.iter().enumerate() {
                if best.rates[k] <= 0.0 {
                    continue;
                }
                let (src, dst) = endpoints[k];
                let flow = &best.flows[k];
                let path = graph::widest_path(
                    topo,
                    src,
                    dst,
                    |l| flow[l] > TOLERANCE,
                    |l| flow[l],
                )
                .expect("witness delivers the session, so a positive-flow path exists");
                routes.insert(s.id().to_string(), path);
            }
            (best.active.clone(), best.flows.clone())
        }
    };

    let objective = ObjectiveBreakdown::compute(topo, sessions, &rates, &active, cfg);
    debug_assert!(
        objective.combined <= best.value + 1e-9,
        "plan construction must not worsen the enumerated optimum"
    );
    let plan = NetworkPlan {
        active_links: active,
        routes,
        rates,
        objective,
    };
    let value = plan.objective.combined;
    Solution {
        plan,
        flows: FlowAssignment {
            flows,
            rates: best.rates,
        },
        value,
    }
}

/// Greedy single-path extraction over the witness support: largest rates
/// first, fewest hops, capacity respected. Returns `None` when some session
/// cannot carry its full rate on one path.
fn extract_single_paths(
    topo: &Topology,
    sessions: &[Session],
    endpoints: &[(usize, usize)],
    best: &Candidate,
) -> Option<(Vec<Vec<usize>>, Vec<Vec<f64>>)> {
    let num_links = topo.num_links();
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.sort_by(|&a, &b| {
        best.rates[b]
            .total_cmp(&best.rates[a])
            .then_with(|| sessions[a].id().cmp(sessions[b].id()))
    });
    let mut residual: Vec<f64> = topo.links().iter().map(|l| l.capacity).collect();
    let mut paths = vec![Vec::new(); sessions.len()];
    let mut flows = vec![vec![0.0; num_links]; sessions.len()];
    for &k in &order {
        let rate = best.rates[k];
        if rate <= 0.0 {
            continue;
        }
        let (src, dst) = endpoints[k];
        let path = graph::shortest_hop_path(topo, src, dst, |l| {
            best.active.contains(&l) && residual[l] >= rate - TOLERANCE
        })?;
        for &l in &path {
            residual[l] -= rate;
            flows[k][l] = rate;
        }
        paths[k] = path;
    }
    Some((paths, flows))
}
