//! Energy-aware network planning. Decides which links to power, how to route,
//! and which ladder rate each adaptive session receives, trading link energy
//! against user experience. Ships an exact enumeration solver for desk-size
//! instances, a subgradient decomposition heuristic, and a discrete-epoch
//! controller simulation around either.

pub mod cli;
pub mod controller;
mod graph;
pub mod lagrangian;
pub mod lp;
pub mod model;
pub mod oracle;

pub use model::{
    objective_constrained, objective_joint, utility_eval, validate_plan, FlowAssignment, Link,
    ModelError, NetworkPlan, ObjectiveBreakdown, Session, SolveMode, SolverConfig, Solution,
    Topology, UtilityFunction, Violation,
};
