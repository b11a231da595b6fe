//! Subgradient-driven decomposition. Relaxing the source delivery constraint
//! with multipliers splits the problem in two: a fixed-charge flow problem
//! over the links (which links to power, priced by the multipliers) and an
//! independent per-session rate choice. A primal recovery step routes
//! sessions over the opened links and rounds rates down the ladder; the best
//! feasible plan across iterations is returned.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph;
use crate::lp::{self, LinearProgram, LpStatus, RowOp};
use crate::model::{
    FlowAssignment, NetworkPlan, ObjectiveBreakdown, Session, SolveMode, SolverConfig, Solution,
    Topology, UtilityFunction, TOLERANCE,
};
use crate::oracle::OracleLimits;

#[derive(Debug, Error)]
pub enum LagrangianError {
    /// The recovery step never produced a feasible plan. This signals
    /// heuristic incompleteness, not proven infeasibility.
    #[error("no feasible plan found")]
    NoFeasiblePlan,
    #[error("instance too large for the exact link sub-problem: {0}")]
    TooLarge(String),
    #[error("{0}")]
    Invalid(String),
    #[error("lp failure: {0}")]
    Lp(#[from] lp::LpError),
}

/// One master-loop iteration, as emitted to the CLI trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub dual_estimate: f64,
    pub best_value: Option<f64>,
    pub subgradient_norm: f64,
}

/// Multiplier state and iteration history of a finished solve.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub dual_estimate: f64,
    pub trace: Vec<IterationRow>,
}

#[derive(Debug, Clone)]
pub struct LagrangianSolution {
    pub solution: Solution,
    pub dual: DualState,
}

/// Result of the link sub-problem: opened links, per-session flows over the
/// full link set, and the sub-problem objective
/// `beta * sum(energy of opened) - sum(lambda_k * delivered_k)`.
#[derive(Debug, Clone)]
pub struct LinkSubproblem {
    pub active: BTreeSet<usize>,
    pub flows: Vec<Vec<f64>>,
    pub value: f64,
}

/// Per-session rate choice: minimize `-alpha*U(r) + lambda_k*r` over the
/// ladder (plus 0 when dropping is allowed). Ties go to the smaller rate.
pub fn subproblem2_rates(sessions: &[Session], lambda: &[f64], cfg: &SolverConfig) -> Vec<f64> {
    sessions
        .iter()
        .zip(lambda.iter())
        .map(|(s, &l)| {
            if cfg.subgradient.continuous_rates {
                continuous_rate(s, l, cfg)
            } else {
                let mut best_rate = 0.0;
                let mut best_score = f64::INFINITY;
                for r in s.candidates(cfg.allow_drop) {
                    let score = -cfg.alpha * s.utility().eval(r) + l * r;
                    if score < best_score {
                        best_score = score;
                        best_rate = r;
                    }
                }
                best_rate
            }
        })
        .collect()
}

/// Continuous relaxation of the rate choice, then round down to the nearest
/// ladder value. Below the ladder the session drops when allowed, otherwise
/// it takes the smallest rung.
fn continuous_rate(s: &Session, lambda: f64, cfg: &SolverConfig) -> f64 {
    let top = s.max_rate();
    let unconstrained = match *s.utility() {
        UtilityFunction::Linear { slope } => {
            if cfg.alpha * slope > lambda {
                top
            } else {
                0.0
            }
        }
        UtilityFunction::NormalizedLadder { top: t } => {
            if cfg.alpha / t > lambda {
                top
            } else {
                0.0
            }
        }
        UtilityFunction::Log1p { scale } => {
            if lambda <= 0.0 {
                top
            } else {
                ((cfg.alpha * scale / lambda - 1.0) / scale).clamp(0.0, top)
            }
        }
    };
    let rounded = s
        .rates()
        .iter()
        .rev()
        .find(|&&r| r <= unconstrained + TOLERANCE)
        .copied();
    match rounded {
        Some(r) => r,
        None if cfg.allow_drop => 0.0,
        None => s.min_rate(),
    }
}

fn sp2_value(sessions: &[Session], lambda: &[f64], cfg: &SolverConfig, rates: &[f64]) -> f64 {
    sessions
        .iter()
        .zip(lambda.iter())
        .zip(rates.iter())
        .map(|((s, &l), &r)| -cfg.alpha * s.utility().eval(r) + l * r)
        .sum()
}

fn net_outflow(topo: &Topology, flow: &[f64], node: usize) -> f64 {
    let mut net = 0.0;
    for (l, &f) in flow.iter().enumerate() {
        let (from, to) = topo.endpoints(l);
        if from == node {
            net += f;
        }
        if to == node {
            net -= f;
        }
    }
    net
}

/// Session processing order: descending multiplier, then session id.
fn session_order(sessions: &[Session], lambda: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.sort_by(|&a, &b| {
        lambda[b]
            .total_cmp(&lambda[a])
            .then_with(|| sessions[a].id().cmp(sessions[b].id()))
    });
    order
}

/// Greedy heuristic for the fixed-charge link sub-problem. Sessions are
/// processed by descending multiplier; each takes the path of least marginal
/// opening cost among links with residual capacity, and commits only when the
/// collected reward strictly beats the opening cost.
pub fn subproblem1_flows(
    topo: &Topology,
    sessions: &[Session],
    lambda: &[f64],
    cfg: &SolverConfig,
) -> Result<LinkSubproblem, LagrangianError> {
    let endpoints = resolve_endpoints(topo, sessions)?;
    let num_links = topo.num_links();
    let mut opened: BTreeSet<usize> = BTreeSet::new();
    let mut residual: Vec<f64> = topo.links().iter().map(|l| l.capacity).collect();
    let mut flows = vec![vec![0.0; num_links]; sessions.len()];
    let mut reward = 0.0;

    for &k in &session_order(sessions, lambda) {
        if lambda[k] <= 0.0 {
            continue;
        }
        let (src, dst) = endpoints[k];
        let path = graph::cheapest_path(
            topo,
            src,
            dst,
            |l| residual[l] > TOLERANCE,
            |l| {
                if opened.contains(&l) {
                    0.0
                } else {
                    cfg.beta * topo.links()[l].energy
                }
            },
        );
        let path = match path {
            Some(p) => p,
            None => continue,
        };
        let bottleneck = path
            .iter()
            .map(|&l| residual[l])
            .fold(f64::INFINITY, f64::min);
        let rho = bottleneck.min(sessions[k].max_rate());
        let opening_cost: f64 = path
            .iter()
            .filter(|l| !opened.contains(l))
            .map(|&l| cfg.beta * topo.links()[l].energy)
            .sum();
        if lambda[k] * rho > opening_cost {
            for &l in &path {
                opened.insert(l);
                residual[l] -= rho;
                flows[k][l] = rho;
            }
            reward += lambda[k] * rho;
        }
    }

    let energy: f64 = opened.iter().map(|&l| topo.links()[l].energy).sum();
    Ok(LinkSubproblem {
        active: opened,
        flows,
        value: cfg.beta * energy - reward,
    })
}

/// Exact link sub-problem by subset enumeration: for each candidate link set,
/// an LP maximizes the multiplier-weighted delivery with per-session flow
/// capped at the top ladder rate. Ties prefer less energy, then the
/// lexicographically smaller subset (so an indifferent link stays off).
pub fn exact_subproblem1(
    topo: &Topology,
    sessions: &[Session],
    lambda: &[f64],
    cfg: &SolverConfig,
    limits: &OracleLimits,
) -> Result<LinkSubproblem, LagrangianError> {
    let endpoints = resolve_endpoints(topo, sessions)?;
    let num_links = topo.num_links();
    if num_links > limits.max_links {
        return Err(LagrangianError::TooLarge(format!("{num_links} links")));
    }
    let priced: Vec<usize> = (0..sessions.len())
        .filter(|&k| lambda[k] > TOLERANCE)
        .collect();

    let mut best: Option<(f64, f64, BTreeSet<usize>, Vec<Vec<f64>>)> = None;
    for mask in 0u64..(1u64 << num_links) {
        let subset: BTreeSet<usize> = (0..num_links).filter(|l| mask & (1 << l) != 0).collect();
        let subset_energy: f64 = subset.iter().map(|&l| topo.links()[l].energy).sum();
        let (reward, flows) = if priced.is_empty() || subset.is_empty() {
            (0.0, vec![vec![0.0; num_links]; sessions.len()])
        } else {
            best_reward_on(topo, sessions, lambda, &endpoints, &priced, &subset)?
        };
        let value = cfg.beta * subset_energy - reward;
        let better = match &best {
            None => true,
            Some((bv, be, bs, _)) => match value.total_cmp(bv) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => match subset_energy.total_cmp(be) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => subset < *bs,
                },
            },
        };
        if better {
            best = Some((value, subset_energy, subset, flows));
        }
    }

    let (value, _, _, flows) = best.expect("subset enumeration is non-empty");
    let active: BTreeSet<usize> = (0..num_links)
        .filter(|&l| flows.iter().map(|f| f[l]).sum::<f64>() > TOLERANCE)
        .collect();
    Ok(LinkSubproblem {
        active,
        flows,
        value,
    })
}

/// LP inner problem of the exact link sub-problem: maximize
/// `sum(lambda_k * net_outflow_k(source))` over the subset, subject to
/// capacity, conservation at intermediate nodes, and delivery caps.
fn best_reward_on(
    topo: &Topology,
    sessions: &[Session],
    lambda: &[f64],
    endpoints: &[(usize, usize)],
    priced: &[usize],
    subset: &BTreeSet<usize>,
) -> Result<(f64, Vec<Vec<f64>>), LagrangianError> {
    let links: Vec<usize> = subset.iter().copied().collect();
    let a = links.len();
    let var = |ke: usize, ai: usize| ke * a + ai;
    let mut prog = LinearProgram::new(priced.len() * a);

    for (ke, &k) in priced.iter().enumerate() {
        let (src, _) = endpoints[k];
        for (ai, &l) in links.iter().enumerate() {
            let (from, to) = topo.endpoints(l);
            if from == src {
                prog.objective[var(ke, ai)] -= lambda[k];
            }
            if to == src {
                prog.objective[var(ke, ai)] += lambda[k];
            }
        }
    }
    for (ai, &l) in links.iter().enumerate() {
        let mut coeffs = vec![0.0; prog.num_vars];
        for ke in 0..priced.len() {
            coeffs[var(ke, ai)] = 1.0;
        }
        prog.add_row(coeffs, RowOp::Le, topo.links()[l].capacity);
    }
    for (ke, &k) in priced.iter().enumerate() {
        let (src, dst) = endpoints[k];
        for v in 0..topo.num_nodes() {
            if v == src || v == dst {
                continue;
            }
            let mut coeffs = vec![0.0; prog.num_vars];
            let mut touched = false;
            for (ai, &l) in links.iter().enumerate() {
                let (from, to) = topo.endpoints(l);
                if from == v {
                    coeffs[var(ke, ai)] += 1.0;
                    touched = true;
                }
                if to == v {
                    coeffs[var(ke, ai)] -= 1.0;
                    touched = true;
                }
            }
            if touched {
                prog.add_row(coeffs, RowOp::Eq, 0.0);
            }
        }
        // Delivery beyond the top ladder rate can never become utility.
        let mut coeffs = vec![0.0; prog.num_vars];
        let mut touched = false;
        for (ai, &l) in links.iter().enumerate() {
            let (from, to) = topo.endpoints(l);
            if from == src {
                coeffs[var(ke, ai)] += 1.0;
                touched = true;
            }
            if to == src {
                coeffs[var(ke, ai)] -= 1.0;
                touched = true;
            }
        }
        if touched {
            prog.add_row(coeffs, RowOp::Le, sessions[k].max_rate());
        }
    }

    let sol = lp::solve_lp(&prog)?;
    if sol.status != LpStatus::Optimal {
        return Err(LagrangianError::Lp(lp::LpError::Internal(format!(
            "reward LP ended {:?}",
            sol.status
        ))));
    }
    let mut flows = vec![vec![0.0; topo.num_links()]; sessions.len()];
    for (ke, &k) in priced.iter().enumerate() {
        for (ai, &l) in links.iter().enumerate() {
            flows[k][l] = sol.values[var(ke, ai)].max(0.0);
        }
    }
    Ok((-sol.objective, flows))
}

/// Master loop: alternate the two sub-problems, recover a feasible plan on
/// the opened links, and walk the multipliers along the delivery residual
/// with a `theta0/sqrt(t)` step.
pub fn solve_lagrangian(
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
) -> Result<LagrangianSolution, LagrangianError> {
    cfg.validate()
        .map_err(|e| LagrangianError::Invalid(e.to_string()))?;
    let endpoints = resolve_endpoints(topo, sessions)?;
    if sessions.is_empty() {
        let plan = NetworkPlan::empty();
        return Ok(LagrangianSolution {
            solution: Solution {
                plan,
                flows: FlowAssignment::zero(0, topo.num_links()),
                value: 0.0,
            },
            dual: DualState {
                lambda: Vec::new(),
                iterations: 1,
                dual_estimate: 0.0,
                trace: vec![IterationRow {
                    iteration: 1,
                    dual_estimate: 0.0,
                    best_value: Some(0.0),
                    subgradient_norm: 0.0,
                }],
            },
        });
    }

    let lambda0 = cfg.subgradient.lambda0.unwrap_or_else(|| {
        if topo.num_links() == 0 {
            cfg.beta
        } else {
            let mean_energy: f64 = topo.links().iter().map(|l| l.energy).sum::<f64>()
                / topo.num_links() as f64;
            let mean_capacity: f64 = topo.links().iter().map(|l| l.capacity).sum::<f64>()
                / topo.num_links() as f64;
            cfg.beta * mean_energy / mean_capacity
        }
    });
    let mut lambda = vec![lambda0; sessions.len()];

    let limits = OracleLimits::default();
    let use_exact = cfg.subgradient.exact_subproblem1 && topo.num_links() <= limits.max_links;

    let mut best: Option<(NetworkPlan, FlowAssignment, f64)> = None;
    let mut last_improvement = 0usize;
    let mut trace = Vec::new();
    let mut dual_estimate = f64::NEG_INFINITY;
    let mut iterations = 0;

    for t in 1..=cfg.subgradient.max_iters {
        iterations = t;
        let rates = subproblem2_rates(sessions, &lambda, cfg);
        let sp1 = if use_exact {
            exact_subproblem1(topo, sessions, &lambda, cfg, &limits)?
        } else {
            subproblem1_flows(topo, sessions, &lambda, cfg)?
        };
        let delivered: Vec<f64> = (0..sessions.len())
            .map(|k| net_outflow(topo, &sp1.flows[k], endpoints[k].0))
            .collect();
        dual_estimate = sp1.value + sp2_value(sessions, &lambda, cfg, &rates);

        if let Some((plan, flows)) = recover_plan(topo, sessions, &endpoints, &sp1.active, cfg, &lambda) {
            let value = plan.objective.combined;
            let improved = match &best {
                None => true,
                Some((_, _, bv)) => value < *bv,
            };
            if improved {
                best = Some((plan, flows, value));
                last_improvement = t;
            }
        }

        let g: Vec<f64> = rates
            .iter()
            .zip(delivered.iter())
            .map(|(r, d)| r - d)
            .collect();
        let g_norm = g.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        trace.push(IterationRow {
            iteration: t,
            dual_estimate,
            best_value: best.as_ref().map(|(_, _, v)| *v),
            subgradient_norm: g_norm,
        });

        let step = cfg.subgradient.theta0 / (t as f64).sqrt();
        for (l, gi) in lambda.iter_mut().zip(g.iter()) {
            *l = (*l + step * gi).max(0.0);
        }

        if t.saturating_sub(last_improvement) >= cfg.subgradient.stall_window
            && g_norm < cfg.subgradient.stall_tolerance
        {
            break;
        }
    }

    let (plan, flows, value) = best.ok_or(LagrangianError::NoFeasiblePlan)?;
    Ok(LagrangianSolution {
        solution: Solution { plan, flows, value },
        dual: DualState {
            lambda,
            iterations,
            dual_estimate,
            trace,
        },
    })
}

/// Route each session over the opened links (fewest hops among links that can
/// still fit its smallest rung) and grant the largest ladder rate at or below
/// the path bottleneck. Constrained mode discards plans under the floor.
fn recover_plan(
    topo: &Topology,
    sessions: &[Session],
    endpoints: &[(usize, usize)],
    opened: &BTreeSet<usize>,
    cfg: &SolverConfig,
    lambda: &[f64],
) -> Option<(NetworkPlan, FlowAssignment)> {
    let num_links = topo.num_links();
    let mut residual: Vec<f64> = topo.links().iter().map(|l| l.capacity).collect();
    let mut rates = vec![0.0; sessions.len()];
    let mut routes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut flows = vec![vec![0.0; num_links]; sessions.len()];

    for &k in &session_order(sessions, lambda) {
        let s = &sessions[k];
        let (src, dst) = endpoints[k];
        let min_rung = s.min_rate();
        let path = graph::shortest_hop_path(topo, src, dst, |l| {
            opened.contains(&l) && residual[l] >= min_rung - TOLERANCE
        });
        match path {
            Some(p) => {
                let bottleneck = p
                    .iter()
                    .map(|&l| residual[l])
                    .fold(f64::INFINITY, f64::min);
                let rate = s
                    .rates()
                    .iter()
                    .rev()
                    .find(|&&r| r <= bottleneck + TOLERANCE)
                    .copied()
                    .expect("path admits at least the smallest rung");
                for &l in &p {
                    residual[l] -= rate;
                    flows[k][l] = rate;
                }
                rates[k] = rate;
                routes.insert(s.id().to_string(), p);
            }
            None => {
                if !cfg.allow_drop {
                    return None;
                }
                routes.insert(s.id().to_string(), Vec::new());
            }
        }
    }

    if cfg.mode == SolveMode::Constrained {
        for (k, s) in sessions.iter().enumerate() {
            if rates[k] > 0.0 && s.utility().eval(rates[k]) < cfg.u_floor {
                return None;
            }
        }
    }

    let active: BTreeSet<usize> = (0..num_links)
        .filter(|&l| flows.iter().map(|f| f[l]).sum::<f64>() > TOLERANCE)
        .collect();
    let rate_map: BTreeMap<String, f64> = sessions
        .iter()
        .zip(rates.iter())
        .map(|(s, &r)| (s.id().to_string(), r))
        .collect();
    let objective = ObjectiveBreakdown::compute(topo, sessions, &rate_map, &active, cfg);
    let plan = NetworkPlan {
        active_links: active,
        routes,
        rates: rate_map,
        objective,
    };
    Some((plan, FlowAssignment { flows, rates }))
}

fn resolve_endpoints(
    topo: &Topology,
    sessions: &[Session],
) -> Result<Vec<(usize, usize)>, LagrangianError> {
    sessions
        .iter()
        .map(|s| {
            let src = topo.node_index(s.source()).ok_or_else(|| {
                LagrangianError::Invalid(format!(
                    "session {:?}: unknown node {:?}",
                    s.id(),
                    s.source()
                ))
            })?;
            let dst = topo.node_index(s.destination()).ok_or_else(|| {
                LagrangianError::Invalid(format!(
                    "session {:?}: unknown node {:?}",
                    s.id(),
                    s.destination()
                ))
            })?;
            Ok((src, dst))
        })
        .collect()
}
