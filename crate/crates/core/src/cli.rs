//! Batch command-line front end. Exit codes are part of the contract:
//! 0 success, 1 input error, 2 infeasible instance, 3 internal invariant
//! failure. Machine-readable artifacts go to `--out`; stdout carries a
//! single summary line.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{
    generate_trace, load_trace, run_simulation, write_orders_json, write_telemetry_csv, SimError,
    SolverKind, TraceParams,
};
use crate::lagrangian::{self, IterationRow, LagrangianError};
use crate::model::{
    self, load_config, load_demands, load_topology, validate_plan, Link, Session, SolverConfig,
    Solution, Topology, UtilityFunction, Violation,
};
use crate::oracle::{self, OracleError, OracleLimits};

#[derive(Debug, Parser)]
#[command(
    name = "greennet",
    about = "Energy-aware network planning: link sleeping, routing, adaptive rates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance; writes plan.json and validation.json.
    Solve(SolveArgs),
    /// Run both solvers over seeded perturbations; writes compare.csv.
    Compare(CompareArgs),
    /// Drive the epoch controller; writes orders.json and telemetry.csv.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Oracle,
    Lagrangian,
}

impl From<SolverArg> for SolverKind {
    fn from(value: SolverArg) -> Self {
        match value {
            SolverArg::Oracle => SolverKind::Oracle,
            SolverArg::Lagrangian => SolverKind::Lagrangian,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    pub solver: SolverArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-iteration subgradient trace (lagrangian solver only).
    #[arg(long)]
    pub iter_trace: bool,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Number of instances; trial 0 is the unperturbed input, later trials
    /// scale link capacities and energies by +/-20%.
    #[arg(long)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "lagrangian")]
    pub solver: SolverArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch trace file; omit to generate one instead.
    #[arg(long, conflicts_with_all = ["gen_epochs"])]
    pub trace: Option<PathBuf>,
    /// Generate a synthetic trace with this many epochs.
    #[arg(long)]
    pub gen_epochs: Option<usize>,
    /// Mean arrivals per epoch for the generated trace.
    #[arg(long, default_value_t = 1.0)]
    pub gen_arrival_rate: f64,
    /// Mean session lifetime in epochs for the generated trace.
    #[arg(long, default_value_t = 3.0)]
    pub gen_mean_holding: f64,
    /// Comma-separated rate ladder for generated sessions.
    #[arg(long, default_value = "0.25,0.5,1.0")]
    pub gen_ladder: String,
    /// Epoch duration in seconds for the generated trace.
    #[arg(long, default_value_t = 1.0)]
    pub gen_epoch_duration: f64,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Infeasible(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Internal(m) => write!(f, "internal: {m}"),
        }
    }
}

impl From<model::ModelError> for CliError {
    fn from(e: model::ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    }
}

#[derive(Serialize)]
struct ValidationReport {
    ok: bool,
    violations: Vec<Violation>,
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_inputs(
    topology: &Path,
    demand: &Path,
    config: &Path,
    seed: Option<u64>,
) -> Result<(Topology, Vec<Session>, SolverConfig), CliError> {
    let topo = load_topology(topology)?;
    let sessions = load_demands(demand)?;
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for s in &sessions {
        for node in [s.source(), s.destination()] {
            if topo.node_index(node).is_none() {
                return Err(CliError::Input(format!(
                    "session {:?} references node {node:?} missing from the topology",
                    s.id()
                )));
            }
        }
    }
    Ok((topo, sessions, cfg))
}

fn solve_with(
    solver: SolverArg,
    topo: &Topology,
    sessions: &[Session],
    cfg: &SolverConfig,
) -> Result<(Solution, Option<Vec<IterationRow>>), CliError> {
    match solver {
        SolverArg::Oracle => {
            match oracle::solve_exact(topo, sessions, cfg, &OracleLimits::default()) {
                Ok(sol) => Ok((sol, None)),
                Err(OracleError::NoFeasiblePlan) => {
                    Err(CliError::Infeasible("no plan satisfies the constraints".into()))
                }
                Err(e @ OracleError::TooLarge(_)) | Err(e @ OracleError::Invalid(_)) => {
                    Err(CliError::Input(e.to_string()))
                }
                Err(e) => Err(CliError::Internal(e.to_string())),
            }
        }
        SolverArg::Lagrangian => match lagrangian::solve_lagrangian(topo, sessions, cfg) {
            Ok(sol) => Ok((sol.solution, Some(sol.dual.trace))),
            Err(LagrangianError::NoFeasiblePlan) => Err(CliError::Infeasible(
                "the heuristic found no feasible plan".into(),
            )),
            Err(e @ LagrangianError::TooLarge(_)) | Err(e @ LagrangianError::Invalid(_)) => {
                Err(CliError::Input(e.to_string()))
            }
            Err(e) => Err(CliError::Internal(e.to_string())),
        },
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<String, CliError> {
    let (topo, sessions, cfg) = load_inputs(&args.topology, &args.demand, &args.config, args.seed)?;
    ensure_out_dir(&args.out)?;
    let (solution, trace) = solve_with(args.solver, &topo, &sessions, &cfg)?;

    let violations = validate_plan(&solution.plan, &topo, &sessions, &solution.flows);
    let report = ValidationReport {
        ok: violations.is_empty(),
        violations,
    };
    model::write_json(&args.out.join("plan.json"), &solution.plan)?;
    model::write_json(&args.out.join("validation.json"), &report)?;
    if args.iter_trace {
        if let Some(rows) = &trace {
            write_iteration_csv(&args.out.join("iterations.csv"), rows)?;
        }
    }
    if !report.ok {
        return Err(CliError::Internal(format!(
            "emitted plan failed validation with {} violation(s); see validation.json",
            report.violations.len()
        )));
    }
    Ok(format!(
        "solve ok: combined={} energy={} utility={} active_links={} out={}",
        solution.plan.objective.combined,
        solution.plan.objective.energy_sum,
        solution.plan.objective.utility_sum,
        solution.plan.active_links.len(),
        args.out.display()
    ))
}

fn write_iteration_csv(path: &Path, rows: &[IterationRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    w.write_record(["t", "dual_estimate", "best_primal", "subgradient_norm"])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    for row in rows {
        w.write_record([
            row.iteration.to_string(),
            row.dual_estimate.to_string(),
            row.best_value.map(|v| v.to_string()).unwrap_or_default(),
            row.subgradient_norm.to_string(),
        ])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

fn perturbed(topo: &Topology, rng: &mut ChaCha8Rng) -> Topology {
    let links: Vec<Link> = topo
        .links()
        .iter()
        .map(|l| Link {
            from: l.from.clone(),
            to: l.to.clone(),
            capacity: l.capacity * rng.gen_range(0.8..1.2),
            energy: l.energy * rng.gen_range(0.8..1.2),
        })
        .collect();
    Topology::new(topo.nodes().to_vec(), links).expect("perturbation preserves validity")
}

fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let (topo, sessions, cfg) = load_inputs(&args.topology, &args.demand, &args.config, args.seed)?;
    ensure_out_dir(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let path = args.out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    w.write_record([
        "instance",
        "oracle_value",
        "lagrangian_value",
        "gap",
        "oracle_ms",
        "lagrangian_ms",
    ])
    .map_err(|e| CliError::Internal(e.to_string()))?;

    let mut gaps: Vec<f64> = Vec::new();
    for trial in 0..args.trials {
        let instance = if trial == 0 {
            topo.clone()
        } else {
            perturbed(&topo, &mut rng)
        };

        let started = Instant::now();
        let exact = oracle::solve_exact(&instance, &sessions, &cfg, &OracleLimits::default());
        let oracle_ms = started.elapsed().as_secs_f64() * 1e3;
        let exact = match exact {
            Ok(sol) => {
                check_emitted(&sol, &instance, &sessions, trial, "oracle")?;
                Some(sol)
            }
            Err(OracleError::NoFeasiblePlan) => None,
            Err(e @ OracleError::TooLarge(_)) => return Err(CliError::Input(e.to_string())),
            Err(e) => return Err(CliError::Internal(e.to_string())),
        };

        let started = Instant::now();
        let heuristic = lagrangian::solve_lagrangian(&instance, &sessions, &cfg);
        let lagrangian_ms = started.elapsed().as_secs_f64() * 1e3;
        let heuristic = match heuristic {
            Ok(sol) => {
                check_emitted(&sol.solution, &instance, &sessions, trial, "lagrangian")?;
                Some(sol.solution)
            }
            Err(LagrangianError::NoFeasiblePlan) => None,
            Err(e) => return Err(CliError::Internal(e.to_string())),
        };

        let (o_str, l_str, gap_str) = match (&exact, &heuristic) {
            (Some(o), Some(h)) => {
                let gap = h.value - o.value;
                if gap < -1e-6 {
                    return Err(CliError::Internal(format!(
                        "trial {trial}: heuristic value {} beats the exact optimum {}",
                        h.value, o.value
                    )));
                }
                gaps.push(gap);
                (o.value.to_string(), h.value.to_string(), gap.to_string())
            }
            (Some(o), None) => (o.value.to_string(), String::new(), String::new()),
            (None, Some(h)) => {
                return Err(CliError::Internal(format!(
                    "trial {trial}: heuristic found a plan ({}) on an instance the exact solver \
                     proved infeasible",
                    h.value
                )));
            }
            (None, None) => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            trial.to_string(),
            o_str,
            l_str,
            gap_str,
            format!("{oracle_ms:.3}"),
            format!("{lagrangian_ms:.3}"),
        ])
        .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Internal(e.to_string()))?;

    let summary = if gaps.is_empty() {
        format!("compare ok: trials={} out={}", args.trials, args.out.display())
    } else {
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let max = gaps.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        format!(
            "compare ok: trials={} mean_gap={mean:.6} max_gap={max:.6} out={}",
            args.trials,
            args.out.display()
        )
    };
    Ok(summary)
}

fn check_emitted(
    solution: &Solution,
    topo: &Topology,
    sessions: &[Session],
    trial: usize,
    which: &str,
) -> Result<(), CliError> {
    let violations = validate_plan(&solution.plan, topo, sessions, &solution.flows);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!(
            "trial {trial}: {which} plan failed validation with {} violation(s)",
            violations.len()
        )))
    }
}

fn parse_ladder(text: &str) -> Result<Vec<f64>, CliError> {
    let ladder: Result<Vec<f64>, _> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect();
    ladder.map_err(|e| CliError::Input(format!("--gen-ladder: {e}")))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let topo = load_topology(&args.topology)?;
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    ensure_out_dir(&args.out)?;

    let trace = match (&args.trace, args.gen_epochs) {
        (Some(path), _) => load_trace(path).map_err(sim_to_cli)?,
        (None, Some(num_epochs)) => {
            let params = TraceParams {
                num_epochs,
                arrival_rate: args.gen_arrival_rate,
                mean_holding_epochs: args.gen_mean_holding,
                ladder: parse_ladder(&args.gen_ladder)?,
                epoch_duration: args.gen_epoch_duration,
                utility: UtilityFunction::Log1p { scale: 1.0 },
                seed: cfg.seed,
            };
            generate_trace(&topo, &params).map_err(sim_to_cli)?
        }
        (None, None) => {
            return Err(CliError::Input(
                "either --trace or --gen-epochs is required".into(),
            ));
        }
    };

    let results =
        run_simulation(&topo, &trace, &cfg, args.solver.into()).map_err(sim_to_cli)?;
    write_orders_json(&args.out.join("orders.json"), &results).map_err(sim_to_cli)?;
    write_telemetry_csv(&args.out.join("telemetry.csv"), &results).map_err(sim_to_cli)?;

    let total_energy: f64 = results.iter().map(|(_, t)| t.energy_total).sum();
    let links_on: BTreeSet<usize> = results
        .iter()
        .flat_map(|(o, _)| o.links_on.iter().copied())
        .collect();
    Ok(format!(
        "simulate ok: epochs={} total_energy={} links_ever_on={} out={}",
        results.len(),
        total_energy,
        links_on.len(),
        args.out.display()
    ))
}

fn sim_to_cli(e: SimError) -> CliError {
    match e {
        SimError::InvalidTrace(_) | SimError::InvalidParams(_) => CliError::Input(e.to_string()),
        SimError::Invariant { .. } => CliError::Internal(e.to_string()),
        SimError::Solver { .. } | SimError::Io { .. } | SimError::Csv(_) => {
            CliError::Internal(e.to_string())
        }
    }
}
