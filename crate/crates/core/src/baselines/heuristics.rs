//! Rule-based controllers: as fast as possible, as late as possible, and
//! round robin under a power budget.

use crate::config::Problem;
use crate::engine::{max_charge_energy, Controller, Simulation};
use crate::error::{Result, SimError};
use crate::ev::power_from_current;

/// Full charging current for every connected EV; in the profit problem an
/// EV stops once it holds its departure energy.
#[derive(Debug, Default, Clone)]
pub struct Afap;

impl Controller for Afap {
    fn name(&self) -> String {
        "afap".into()
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>> {
        Ok(afap_actions(sim))
    }
}

pub fn afap_actions(sim: &Simulation) -> Vec<f64> {
    let profit = sim.config().problem == Problem::Profit;
    sim.slots()
        .iter()
        .map(|slot| match slot {
            Some(ev) if !(profit && ev.energy_kwh() >= ev.e_target_kwh) => 1.0,
            _ => 0.0,
        })
        .collect()
}

/// Charges at full current only once idling for one more step would leave
/// the departure energy out of reach. Needs departure times, so it only
/// runs in the profit problem.
#[derive(Debug, Default, Clone)]
pub struct Alap;

impl Controller for Alap {
    fn name(&self) -> String {
        "alap".into()
    }

    fn reset(&mut self, sim: &Simulation) -> Result<()> {
        check_departures_visible("alap", sim)
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>> {
        check_departures_visible("alap", sim)?;
        let t = sim.current_step();
        let dt = sim.config().dt_h();
        Ok(sim
            .slots()
            .iter()
            .enumerate()
            .map(|(k, slot)| {
                let Some(ev) = slot else { return 0.0 };
                if ev.energy_kwh() >= ev.e_target_kwh {
                    return 0.0;
                }
                let later = ev.t_dep - t - 1;
                let reachable = max_charge_energy(&ev.spec, sim.charger_of_slot(k), ev.soc, later, dt);
                if reachable < ev.e_target_kwh {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

fn check_departures_visible(controller: &'static str, sim: &Simulation) -> Result<()> {
    match sim.config().problem {
        Problem::Profit => Ok(()),
        Problem::Pst => Err(SimError::Capability {
            controller: controller.into(),
            needs: "departure times",
            problem: "pst".into(),
        }),
    }
}

/// Grants full current to EVs in turn, starting from a pointer that
/// persists across steps, until the next grant would exceed the budget.
/// The budget is the setpoint when there is one, otherwise the forecast
/// transformer headroom.
#[derive(Debug, Default, Clone)]
pub struct RoundRobin {
    pointer: usize,
}

impl RoundRobin {
    pub fn pointer(&self) -> usize {
        self.pointer
    }
}

impl Controller for RoundRobin {
    fn name(&self) -> String {
        "rr".into()
    }

    fn reset(&mut self, _sim: &Simulation) -> Result<()> {
        self.pointer = 0;
        Ok(())
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>> {
        let cfg = sim.config();
        let n = sim.slots().len();
        let mut actions = vec![0.0; n];
        if n == 0 {
            return Ok(actions);
        }
        let t = sim.current_step();
        let profit = cfg.problem == Problem::Profit;
        // one budget for a setpoint, one per transformer otherwise
        let (mut budget, per_transformer) = if cfg.has_setpoint() {
            (vec![sim.setpoint_at(t)], false)
        } else {
            let fc = sim.forecast();
            let b = cfg
                .transformers
                .iter()
                .enumerate()
                .map(|(w, spec)| {
                    let net = fc.net_load_kw.get(w).and_then(|v| v.first()).copied().unwrap_or(0.0);
                    let dr = fc.dr_kw.get(w).and_then(|v| v.first()).copied().unwrap_or(0.0);
                    (spec.max_power_kw - dr - net).max(0.0)
                })
                .collect();
            (b, true)
        };
        for i in 0..n {
            let k = (self.pointer + i) % n;
            let Some(ev) = &sim.slots()[k] else { continue };
            let done = if profit {
                ev.energy_kwh() >= ev.e_target_kwh
            } else {
                sim.full_flags()[k]
            };
            if done {
                continue;
            }
            let ch = sim.charger_of_slot(k);
            let evse_kw = power_from_current(ch.max_charge_current_a, ch.voltage_v, ch.phases, ev.spec.charge_efficiency);
            let p = ev.spec.max_charge_kw(ch.charger_type).min(evse_kw);
            let b = if per_transformer { ch.transformer } else { 0 };
            if p > budget[b] {
                self.pointer = k;
                return Ok(actions);
            }
            budget[b] -= p;
            actions[k] = 1.0;
        }
        Ok(actions)
    }
}
