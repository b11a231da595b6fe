//! Feasibility validator. Violations are data, not errors: an empty list
//! means the (plan, flows) pair satisfies capacity, per-session flow
//! conservation, source/destination rate delivery, active-link/indicator
//! consistency and route well-formedness.

use serde::Serialize;

use super::{FlowAssignment, NetworkPlan, Session, Topology, TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Total flow over a link exceeds its capacity.
    Capacity {
        link: usize,
        load: f64,
        capacity: f64,
    },
    /// Net flow at a node that is neither source nor destination is nonzero.
    FlowConservation {
        session: String,
        node: String,
        imbalance: f64,
    },
    /// Net outflow at the session source differs from the chosen rate.
    SourceImbalance {
        session: String,
        expected: f64,
        actual: f64,
    },
    /// Net inflow at the session destination differs from the chosen rate.
    DestinationImbalance {
        session: String,
        expected: f64,
        actual: f64,
    },
    InactiveLinkCarriesFlow {
        link: usize,
        load: f64,
    },
    UnusedActiveLink {
        link: usize,
    },
    NegativeFlow {
        session: String,
        link: usize,
        value: f64,
    },
    NonFiniteFlow {
        session: String,
        link: usize,
    },
    /// Chosen rate is neither 0 nor on the session's ladder.
    RateOffLadder {
        session: String,
        rate: f64,
    },
    /// Plan rate and flow-assignment rate disagree.
    RateMismatch {
        session: String,
        plan_rate: f64,
        flow_rate: f64,
    },
    MissingSession {
        session: String,
    },
    UnknownNode {
        session: String,
        node: String,
    },
    RouteBroken {
        session: String,
        detail: String,
    },
    RouteLoop {
        session: String,
        node: String,
    },
    RouteInactiveLink {
        session: String,
        link: usize,
    },
    DimensionMismatch {
        detail: String,
    },
}

pub fn validate_plan(
    plan: &NetworkPlan,
    topo: &Topology,
    sessions: &[Session],
    flows: &FlowAssignment,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let num_links = topo.num_links();

    if flows.flows.len() != sessions.len() || flows.rates.len() != sessions.len() {
        out.push(Violation::DimensionMismatch {
            detail: format!(
                "flow assignment covers {} sessions, expected {}",
                flows.flows.len(),
                sessions.len()
            ),
        });
        return out;
    }
    for (k, row) in flows.flows.iter().enumerate() {
        if row.len() != num_links {
            out.push(Violation::DimensionMismatch {
                detail: format!(
                    "session {:?} has {} link flows, expected {num_links}",
                    sessions[k].id(),
                    row.len()
                ),
            });
            return out;
        }
    }
    for &l in &plan.active_links {
        if l >= num_links {
            out.push(Violation::DimensionMismatch {
                detail: format!("active link index {l} out of range"),
            });
            return out;
        }
    }

    // Flow sanity per (session, link).
    for (k, session) in sessions.iter().enumerate() {
        for (l, &f) in flows.flows[k].iter().enumerate() {
            if !f.is_finite() {
                out.push(Violation::NonFiniteFlow {
                    session: session.id().to_string(),
                    link: l,
                });
            } else if f < -TOLERANCE {
                out.push(Violation::NegativeFlow {
                    session: session.id().to_string(),
                    link: l,
                    value: f,
                });
            }
        }
    }

    // Link capacity.
    for l in 0..num_links {
        let load = flows.link_load(l);
        let capacity = topo.links()[l].capacity;
        if load > capacity + TOLERANCE {
            out.push(Violation::Capacity {
                link: l,
                load,
                capacity,
            });
        }
    }

    // Per-session conservation and delivery.
    for (k, session) in sessions.iter().enumerate() {
        let sid = session.id().to_string();
        let (src, dst) = match (
            topo.node_index(session.source()),
            topo.node_index(session.destination()),
        ) {
            (Some(s), Some(d)) => (s, d),
            (s, _) => {
                let node = if s.is_none() {
                    session.source()
                } else {
                    session.destination()
                };
                out.push(Violation::UnknownNode {
                    session: sid,
                    node: node.to_string(),
                });
                continue;
            }
        };

        let plan_rate = match plan.rates.get(session.id()) {
            Some(&r) => r,
            None => {
                out.push(Violation::MissingSession { session: sid });
                continue;
            }
        };

        if (plan_rate - flows.rates[k]).abs() > TOLERANCE {
            out.push(Violation::RateMismatch {
                session: sid.clone(),
                plan_rate,
                flow_rate: flows.rates[k],
            });
        }
        let on_ladder = plan_rate.abs() <= TOLERANCE
            || session
                .rates()
                .iter()
                .any(|&r| (r - plan_rate).abs() <= TOLERANCE);
        if !on_ladder {
            out.push(Violation::RateOffLadder {
                session: sid.clone(),
                rate: plan_rate,
            });
        }

        for v in 0..topo.num_nodes() {
            let net = flows.net_outflow(topo, k, v);
            if v == src {
                if (net - plan_rate).abs() > TOLERANCE {
                    out.push(Violation::SourceImbalance {
                        session: sid.clone(),
                        expected: plan_rate,
                        actual: net,
                    });
                }
            } else if v == dst {
                if (-net - plan_rate).abs() > TOLERANCE {
                    out.push(Violation::DestinationImbalance {
                        session: sid.clone(),
                        expected: plan_rate,
                        actual: -net,
                    });
                }
            } else if net.abs() > TOLERANCE {
                out.push(Violation::FlowConservation {
                    session: sid.clone(),
                    node: topo.nodes()[v].clone(),
                    imbalance: net,
                });
            }
        }

        check_route(plan, topo, session, plan_rate, &mut out);
    }

    // Indicator semantics: active iff carrying flow.
    for l in 0..num_links {
        let load = flows.link_load(l);
        let active = plan.active_links.contains(&l);
        if load > TOLERANCE && !active {
            out.push(Violation::InactiveLinkCarriesFlow { link: l, load });
        }
        if active && load <= TOLERANCE {
            out.push(Violation::UnusedActiveLink { link: l });
        }
    }

    out
}

fn check_route(
    plan: &NetworkPlan,
    topo: &Topology,
    session: &Session,
    plan_rate: f64,
    out: &mut Vec<Violation>,
) {
    let sid = session.id().to_string();
    let route = match plan.routes.get(session.id()) {
        Some(r) => r,
        None => {
            if plan_rate > TOLERANCE {
                out.push(Violation::RouteBroken {
                    session: sid,
                    detail: "no route for a routed session".into(),
                });
            }
            return;
        }
    };
    if route.is_empty() {
        if plan_rate > TOLERANCE {
            out.push(Violation::RouteBroken {
                session: sid,
                detail: "empty route for a routed session".into(),
            });
        }
        return;
    }
    if plan_rate <= TOLERANCE {
        out.push(Violation::RouteBroken {
            session: sid,
            detail: "route present for a dropped session".into(),
        });
        return;
    }

    let src = topo.node_index(session.source());
    let dst = topo.node_index(session.destination());
    let (src, dst) = match (src, dst) {
        (Some(s), Some(d)) => (s, d),
        _ => return, // already reported as UnknownNode
    };

    let mut current = src;
    let mut visited = vec![false; topo.num_nodes()];
    visited[current] = true;
    for &l in route {
        if l >= topo.num_links() {
            out.push(Violation::RouteBroken {
                session: sid,
                detail: format!("link index {l} out of range"),
            });
            return;
        }
        if !plan.active_links.contains(&l) {
            out.push(Violation::RouteInactiveLink {
                session: sid.clone(),
                link: l,
            });
        }
        let (from, to) = topo.endpoints(l);
        if from != current {
            out.push(Violation::RouteBroken {
                session: sid,
                detail: format!("link {l} does not continue the walk"),
            });
            return;
        }
        if visited[to] {
            out.push(Violation::RouteLoop {
                session: sid,
                node: topo.nodes()[to].clone(),
            });
            return;
        }
        visited[to] = true;
        current = to;
    }
    if current != dst {
        out.push(Violation::RouteBroken {
            session: sid,
            detail: "route does not end at the destination".into(),
        });
    }
}
