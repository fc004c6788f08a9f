//! Gym-style encodings of the two control problems.
//!
//! Tracking observation: `[t, P_set_t, P_tot_{t-1}]` followed by
//! `[d, E - E_arr, t - t_arr]` per EVSE slot, where `d` is 0 for an empty
//! slot, 1 once the EV is known to be full and 0.5 otherwise.
//!
//! Profit observation: `[t, P_tot_{t-1}, c_ch[t..t+h]]`, then per
//! transformer the forecast inflexible load and the announced DR reduction
//! over `h` steps, then `[SoC, t_dep - t]` per EVSE slot. Its length is
//! `2 + h + 2h|W| + 2N`.

use crate::config::{Problem, SimConfig};
use crate::engine::{Replay, StepResult, Simulation};
use crate::error::Result;
use crate::grid::padded;
use crate::metrics::{compute_metrics, Metrics};

pub const OVERLOAD_PENALTY: f64 = 100.0;
pub const SATISFACTION_PENALTY: f64 = 100.0;
pub const SATISFACTION_SHARPNESS: f64 = 10.0;

pub fn observation_len(config: &SimConfig) -> usize {
    let n = config.evse_count();
    match config.problem {
        Problem::Pst => 3 + 3 * n,
        Problem::Profit => {
            let h = config.forecast.horizon;
            2 + h + 2 * h * config.transformers.len() + 2 * n
        }
    }
}

pub fn encode(sim: &Simulation) -> Vec<f64> {
    match sim.config().problem {
        Problem::Pst => encode_pst(sim),
        Problem::Profit => encode_profit(sim),
    }
}

pub fn encode_pst(sim: &Simulation) -> Vec<f64> {
    let t = sim.current_step();
    let mut obs = Vec::with_capacity(3 + 3 * sim.slots().len());
    obs.extend([t as f64, sim.setpoint_at(t), sim.last_total_power()]);
    for (k, slot) in sim.slots().iter().enumerate() {
        match slot {
            None => obs.extend([0.0, 0.0, 0.0]),
            Some(ev) => {
                let d = if sim.full_flags()[k] { 1.0 } else { 0.5 };
                obs.extend([d, ev.energy_kwh() - ev.e_arrival_kwh, (t - ev.t_arr) as f64]);
            }
        }
    }
    obs
}

pub fn encode_profit(sim: &Simulation) -> Vec<f64> {
    let t = sim.current_step();
    let h = sim.config().forecast.horizon;
    let mut obs = Vec::with_capacity(observation_len(sim.config()));
    obs.push(t as f64);
    obs.push(sim.last_total_power());
    obs.extend((0..h).map(|k| padded(&sim.exogenous().charge_price, t + k)));
    let fc = sim.forecast();
    for w in 0..sim.config().transformers.len() {
        match (fc.net_load_kw.get(w), fc.dr_kw.get(w)) {
            (Some(net), Some(dr)) => {
                obs.extend_from_slice(net);
                obs.extend_from_slice(dr);
            }
            _ => obs.extend(std::iter::repeat_n(0.0, 2 * h)),
        }
    }
    for slot in sim.slots() {
        match slot {
            None => obs.extend([0.0, 0.0]),
            Some(ev) => obs.extend([ev.soc, (ev.t_dep - t) as f64]),
        }
    }
    obs
}

/// Negated squared tracking error of the step just executed.
pub fn reward_pst(p_set_kw: f64, p_total_kw: f64) -> f64 {
    let e = p_set_kw - p_total_kw;
    -(e * e)
}

/// Cash flow minus overload and unsatisfied-departure penalties.
pub fn reward_profit(cashflow: f64, overload_kwh: f64, departing_satisfaction: &[f64]) -> f64 {
    let unsatisfied: f64 = departing_satisfaction
        .iter()
        .map(|s| (-SATISFACTION_SHARPNESS * s).exp())
        .sum();
    cashflow - OVERLOAD_PENALTY * overload_kwh - SATISFACTION_PENALTY * unsatisfied
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpace {
    pub len: usize,
    pub low: f64,
    pub high: f64,
}

/// Environment wrapper with reset/step semantics over [`Simulation`].
pub struct Env {
    config: SimConfig,
    sim: Simulation,
}

impl Env {
    pub fn new(config: SimConfig) -> Result<Self> {
        let sim = Simulation::new(config.clone(), config.seed)?;
        Ok(Self { config, sim })
    }

    pub fn observation_space(&self) -> BoxSpace {
        BoxSpace {
            len: observation_len(&self.config),
            low: f64::NEG_INFINITY,
            high: f64::INFINITY,
        }
    }

    pub fn action_space(&self) -> BoxSpace {
        let r = self.sim.action_range();
        BoxSpace {
            len: self.config.evse_count(),
            low: r.low,
            high: r.high,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.sim = Simulation::new(self.config.clone(), seed)?;
        Ok(self.sim.observation())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.sim.step(action)
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Metrics over the steps executed so far.
    pub fn metrics(&self) -> Metrics {
        compute_metrics(self.sim.trace())
    }

    pub fn save_replay(&self) -> Result<Replay> {
        self.sim.save_replay()
    }
}
