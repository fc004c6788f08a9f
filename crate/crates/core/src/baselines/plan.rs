//! Replays a precomputed current schedule as a controller.

use crate::engine::{Controller, Simulation};
use crate::error::Result;
use crate::station::{encode_current, ChargerSpec};

use super::problem::Solution;

/// Keeps a planned current on the intended side of every threshold after
/// the normalized-action round trip.
const NUDGE: f64 = 1e-12;

/// Normalized action that reproduces `current_a` at an EVSE of `spec`.
pub fn action_for_current(current_a: f64, spec: &ChargerSpec) -> f64 {
    if current_a == 0.0 {
        return 0.0;
    }
    let a = encode_current(current_a, spec) * (1.0 + NUDGE);
    a.clamp(-1.0, 1.0)
}

/// Applies slot currents planned for absolute steps `offset..`.
#[derive(Debug, Clone)]
pub struct PlanController {
    name: String,
    offset: usize,
    current_a: Vec<Vec<f64>>,
}

impl PlanController {
    pub fn new(name: impl Into<String>, current_a: Vec<Vec<f64>>, offset: usize) -> Self {
        Self {
            name: name.into(),
            offset,
            current_a,
        }
    }

    pub fn from_solution(name: impl Into<String>, solution: &Solution, offset: usize) -> Self {
        Self::new(name, solution.current_a(), offset)
    }
}

impl Controller for PlanController {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>> {
        let t = sim.current_step();
        Ok((0..sim.slots().len())
            .map(|k| {
                let i = t
                    .checked_sub(self.offset)
                    .and_then(|u| self.current_a.get(k).and_then(|row| row.get(u)))
                    .copied()
                    .unwrap_or(0.0);
                if sim.slots()[k].is_some() {
                    action_for_current(i, sim.charger_of_slot(k))
                } else {
                    0.0
                }
            })
            .collect())
    }
}
