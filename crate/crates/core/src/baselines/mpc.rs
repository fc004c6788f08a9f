//! Receding-horizon control for the profit problem.

use super::bnb;
use super::heuristics::afap_actions;
use super::plan::action_for_current;
use super::problem::{ScheduleProblem, SolveStatus};
use crate::config::Problem;
use crate::engine::{Controller, Simulation};
use crate::error::{Result, SimError};

/// Re-solves the profit problem over `[t, t + horizon)` every step with the
/// currently connected EVs and the current forecasts, then applies the
/// first step. Falls back to AFAP when the window cannot be solved cleanly.
#[derive(Debug, Clone)]
pub struct Mpc {
    horizon: usize,
    node_limit: usize,
    fallbacks: usize,
}

impl Mpc {
    pub fn new(horizon: usize, node_limit: usize) -> Self {
        Self {
            horizon: horizon.max(1),
            node_limit,
            fallbacks: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn plan(&self, sim: &Simulation) -> Result<Option<Vec<f64>>> {
        let problem = ScheduleProblem::profit_window(sim, self.horizon);
        if problem.sessions.is_empty() {
            return Ok(Some(vec![0.0; sim.slots().len()]));
        }
        let sol = bnb::solve(&problem, self.node_limit)?;
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Feasible) {
            log::debug!("mpc step {}: {} window", sim.current_step(), sol.status.name());
            return Ok(None);
        }
        let current = sol.current_a();
        Ok(Some(
            (0..sim.slots().len())
                .map(|k| action_for_current(current[k][0], sim.charger_of_slot(k)))
                .collect(),
        ))
    }
}

impl Controller for Mpc {
    fn name(&self) -> String {
        format!("mpc:{}", self.horizon)
    }

    fn reset(&mut self, sim: &Simulation) -> Result<()> {
        self.fallbacks = 0;
        if sim.config().problem != Problem::Profit {
            return Err(SimError::Capability {
                controller: "mpc".into(),
                needs: "prices, forecasts and departure times",
                problem: "pst".into(),
            });
        }
        Ok(())
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>> {
        match self.plan(sim) {
            Ok(Some(a)) => Ok(a),
            Ok(None) => {
                self.fallbacks += 1;
                Ok(afap_actions(sim))
            }
            Err(e @ SimError::Solver(_)) => {
                log::warn!("mpc step {}: {e}; falling back to afap", sim.current_step());
                self.fallbacks += 1;
                Ok(afap_actions(sim))
            }
            Err(e) => Err(e),
        }
    }

    fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}
