//! Exhaustive search over discretized action plans, run through the
//! simulator itself. Only for tiny instances.

use super::problem::{ScheduleProblem, Solution, SolveStatus};
use crate::config::Problem;
use crate::engine::{Replay, Simulation};
use crate::error::{Result, SimError};

pub const MAX_PLANS: f64 = 1e6;

/// Tolerance (kWh, kW) for target and transformer checks on enumerated plans.
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Best admissible plan; `status` is infeasible when none is admissible.
    pub best: Solution,
    /// Normalized actions of the best plan per step and slot.
    pub best_actions: Vec<Vec<f64>>,
    pub plans: usize,
    /// Objective of every plan in enumeration order; `None` when the plan
    /// misses a departure target or overloads a transformer.
    pub objectives: Vec<Option<f64>>,
}

/// Evaluates every plan that assigns one of `levels` (normalized actions) to
/// each connected (slot, step) cell of the replay.
pub fn brute_force_oracle(replay: &Replay, levels: &[f64]) -> Result<Enumeration> {
    let cfg = &replay.config;
    let mut cells = Vec::new();
    for s in &replay.schedule {
        for t in s.t_arr..s.t_dep {
            cells.push((t, s.slot));
        }
    }
    let plans = (levels.len() as f64).powi(cells.len() as i32);
    if plans > MAX_PLANS || levels.is_empty() {
        return Err(SimError::TooLarge {
            plans,
            limit: MAX_PLANS,
        });
    }
    let plans = plans as usize;
    let enforce = cfg.problem == Problem::Profit || cfg.solver.pst_enforce_targets;
    let n = cfg.evse_count();
    let mut digits = vec![0usize; cells.len()];
    let mut objectives = Vec::with_capacity(plans);
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    for _ in 0..plans {
        let mut actions = vec![vec![0.0; n]; cfg.sim_length];
        for (d, &(t, slot)) in digits.iter().zip(&cells) {
            actions[t][slot] = levels[*d];
        }
        let mut sim = Simulation::from_replay(replay)?;
        let mut objective = 0.0;
        let mut admissible = true;
        for a in &actions {
            let r = sim.step(a)?.record;
            objective -= match cfg.problem {
                Problem::Pst => r.reward,
                Problem::Profit => r.cashflow,
            };
            if r.overload_kw.iter().chain(&r.undershoot_kw).any(|v| *v > FEAS_TOL) {
                admissible = false;
            }
        }
        let trace = sim.into_trace();
        if enforce && trace.sessions.iter().any(|s| s.energy_kwh() < s.e_target_kwh - FEAS_TOL) {
            admissible = false;
        }
        objectives.push(admissible.then_some(objective));
        if admissible && best.as_ref().is_none_or(|b| objective < b.0) {
            let mut power = vec![vec![0.0; cfg.sim_length]; n];
            for r in &trace.steps {
                for k in 0..n {
                    power[k][r.step] = r.power_kw[k];
                }
            }
            best = Some((objective, power, actions));
        }
        // next plan (mixed-radix counter)
        for d in digits.iter_mut() {
            *d += 1;
            if *d < levels.len() {
                break;
            }
            *d = 0;
        }
    }

    let problem = ScheduleProblem::from_replay(replay);
    let (best, best_actions) = match best {
        Some((objective, power, actions)) => {
            let p_ch = power.iter().map(|r| r.iter().map(|p| p.max(0.0)).collect()).collect();
            let p_dis = power.iter().map(|r| r.iter().map(|p| p.min(0.0)).collect()).collect();
            let mut s = Solution::from_powers(&problem, p_ch, p_dis, SolveStatus::Optimal);
            s.objective = objective;
            s.bound = objective;
            (s, actions)
        }
        None => (Solution::empty(&problem, SolveStatus::Infeasible), Vec::new()),
    };
    let mut best = best;
    best.nodes = plans;
    Ok(Enumeration {
        best,
        best_actions,
        plans,
        objectives,
    })
}
