//! Reference controllers and exact schedule solvers.

pub mod audit;
pub mod bnb;
pub mod heuristics;
pub mod mpc;
pub mod oracle;
pub mod plan;
pub mod problem;
pub mod relax;

pub use audit::{audit, AuditReport};
pub use heuristics::{Afap, Alap, RoundRobin};
pub use mpc::Mpc;
pub use oracle::{brute_force_oracle, Enumeration};
pub use plan::PlanController;
pub use problem::{ScheduleProblem, Solution, SolveStatus};

use crate::config::{Problem, SimConfig};
use crate::engine::{resimulate, run_episode, sample_replay, Controller, Replay, SimTrace, Simulation};
use crate::error::{Result, SimError};

pub const ALGORITHMS: [&str; 5] = ["afap", "alap", "rr", "mpc", "optimal"];

/// Solves a full-horizon tracking problem.
pub fn solve_pst(problem: &ScheduleProblem, node_limit: usize) -> Result<Solution> {
    if problem.kind != Problem::Pst {
        return Err(SimError::Solver("solve_pst needs a tracking problem".into()));
    }
    bnb::solve(problem, node_limit)
}

/// Solves a full-horizon profit problem.
pub fn solve_profit(problem: &ScheduleProblem, node_limit: usize) -> Result<Solution> {
    if problem.kind != Problem::Profit {
        return Err(SimError::Solver("solve_profit needs a profit problem".into()));
    }
    bnb::solve(problem, node_limit)
}

/// Solves the clairvoyant problem of a replay and re-runs it as a plan.
pub fn solve_replay(replay: &Replay) -> Result<(Solution, SimTrace)> {
    let problem = ScheduleProblem::from_replay(replay);
    let sol = bnb::solve(&problem, replay.config.solver.node_limit)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(SimError::Solver(format!("no feasible schedule: {}", sol.report.join("; "))));
    }
    let trace = resimulate(replay, &mut PlanController::from_solution("optimal", &sol, 0))?;
    Ok((sol, trace))
}

/// Builds a causal controller by name: `afap`, `alap`, `rr` (or
/// `round_robin`), `mpc` or `mpc:<horizon>`.
pub fn make_controller(name: &str, config: &SimConfig) -> Result<Box<dyn Controller + Send>> {
    let lower = name.trim().to_ascii_lowercase();
    Ok(match lower.as_str() {
        "afap" => Box::new(Afap),
        "alap" => Box::new(Alap),
        "rr" | "round_robin" => Box::new(RoundRobin::default()),
        "mpc" => Box::new(Mpc::new(config.solver.mpc_horizon, config.solver.node_limit)),
        other => match other.strip_prefix("mpc:").map(str::parse::<usize>) {
            Some(Ok(h)) if h > 0 => Box::new(Mpc::new(h, config.solver.node_limit)),
            _ => return Err(SimError::UnknownAlgorithm(name.to_string())),
        },
    })
}

/// One seeded run of any algorithm, including the clairvoyant `optimal`.
pub fn run_algorithm(name: &str, config: &SimConfig, seed: u64) -> Result<(SimTrace, Replay)> {
    if name.trim().eq_ignore_ascii_case("optimal") {
        let replay = sample_replay(config, seed)?;
        let (_, trace) = solve_replay(&replay)?;
        return Ok((trace, replay));
    }
    let mut ctrl = make_controller(name, config)?;
    run_episode(Simulation::new(config.clone(), seed)?, ctrl.as_mut())
}
