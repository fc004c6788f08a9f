//! Scheduling problems handed to the exact solver: a window of steps, the
//! sessions connected inside it, and the grid data that bounds them.

use crate::config::Problem;
use crate::engine::{Replay, Simulation};
use crate::ev::{current_from_power, EvSpec};
use crate::station::ChargerSpec;

/// One EV session restricted to the window. Steps are window-relative and
/// the EV is connected during `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionWindow {
    pub id: usize,
    pub slot: usize,
    pub start: usize,
    pub end: usize,
    pub e_init_kwh: f64,
    /// Lower bound on the stored energy at `end`, if any.
    pub e_final_min_kwh: Option<f64>,
    pub spec: EvSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleProblem {
    pub kind: Problem,
    pub dt_h: f64,
    pub steps: usize,
    /// Absolute simulation step of window step 0.
    pub start_step: usize,
    pub chargers: Vec<ChargerSpec>,
    pub slot_charger: Vec<usize>,
    pub sessions: Vec<SessionWindow>,
    /// EV-only transformer bounds per transformer and step, after inflexible
    /// load, PV and demand response.
    pub transformer_upper_kw: Vec<Vec<f64>>,
    pub transformer_lower_kw: Vec<Vec<f64>>,
    pub setpoint_kw: Vec<f64>,
    pub charge_price: Vec<f64>,
    pub discharge_price: Vec<f64>,
    pub allow_discharge: bool,
}

/// Power limits of one connected cell, derived from the EV and EVSE.
/// Discharge limits are magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLimits {
    pub k_ch: f64,
    pub k_dis: f64,
    pub ch_min: f64,
    pub ch_max: f64,
    pub dis_min: f64,
    pub dis_max: f64,
}

impl CellLimits {
    pub fn can_charge(&self) -> bool {
        self.ch_max > 0.0
    }

    pub fn can_discharge(&self) -> bool {
        self.dis_max > 0.0
    }

    /// Whether the cell carries an on/off decision: a dead-band, or a
    /// choice between charging and discharging.
    pub fn is_binary(&self) -> bool {
        (self.can_charge() && self.can_discharge())
            || (self.can_charge() && self.ch_min > 0.0)
            || (self.can_discharge() && self.dis_min > 0.0)
    }
}

impl ScheduleProblem {
    /// Full-horizon problem over a realized schedule.
    pub fn from_replay(replay: &Replay) -> Self {
        let cfg = &replay.config;
        let exo = &replay.exogenous;
        let t_len = cfg.sim_length;
        let enforce = cfg.problem == Problem::Profit || cfg.solver.pst_enforce_targets;
        let sessions = replay
            .schedule
            .iter()
            .map(|s| SessionWindow {
                id: s.id,
                slot: s.slot,
                start: s.t_arr,
                end: s.t_dep,
                e_init_kwh: s.e_arrival_kwh,
                e_final_min_kwh: enforce.then_some(s.e_target_kwh),
                spec: s.spec.clone(),
            })
            .collect();
        let (upper, lower) = cfg
            .transformers
            .iter()
            .zip(&exo.transformers)
            .map(|(spec, series)| {
                let up = (0..t_len)
                    .map(|t| spec.max_power_kw - series.dr_kw[t] - series.inflexible_kw(t))
                    .collect();
                let lo = (0..t_len).map(|t| spec.min_power_kw - series.inflexible_kw(t)).collect();
                (up, lo)
            })
            .unzip();
        Self {
            kind: cfg.problem,
            dt_h: cfg.dt_h(),
            steps: t_len,
            start_step: 0,
            chargers: cfg.chargers.clone(),
            slot_charger: cfg.slot_chargers(),
            sessions,
            transformer_upper_kw: upper,
            transformer_lower_kw: lower,
            setpoint_kw: exo.setpoint.as_ref().map_or_else(|| vec![0.0; t_len], |s| s[..t_len].to_vec()),
            charge_price: exo.charge_price[..t_len].to_vec(),
            discharge_price: exo.discharge_price[..t_len].to_vec(),
            allow_discharge: cfg.problem == Problem::Profit && cfg.v2g_enabled,
        }
    }

    /// Profit problem over `[t, t + h)` seen from a running simulation:
    /// connected EVs only, grid data from the current forecasts. EVs leaving
    /// after the window must end it no lower than what full-power charging
    /// could still repair before they leave.
    pub fn profit_window(sim: &Simulation, horizon: usize) -> Self {
        let cfg = sim.config();
        let t = sim.current_step();
        let h = horizon.min(cfg.sim_length - t).max(1);
        let dt_h = cfg.dt_h();
        let slot_charger = cfg.slot_chargers();
        let mut sessions = Vec::new();
        for (slot, ev) in sim.slots().iter().enumerate() {
            let Some(ev) = ev else { continue };
            let end = (ev.t_dep - t).min(h);
            let charger = &cfg.chargers[slot_charger[slot]];
            let final_min = if ev.t_dep <= t + h {
                ev.e_target_kwh
            } else {
                let lim = cell_limits(&ev.spec, charger, false);
                ev.e_target_kwh - lim.ch_max * (ev.t_dep - t - h) as f64 * dt_h
            };
            sessions.push(SessionWindow {
                id: ev.id,
                slot,
                start: 0,
                end,
                e_init_kwh: ev.energy_kwh(),
                e_final_min_kwh: (final_min > ev.spec.min_capacity_kwh).then_some(final_min),
                spec: ev.spec.clone(),
            });
        }
        let fc = sim.forecast();
        let exo = sim.exogenous();
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for (w, spec) in cfg.transformers.iter().enumerate() {
            let net = |k: usize| fc.net_load_kw.get(w).and_then(|v| v.get(k)).copied().unwrap_or(0.0);
            let dr = |k: usize| fc.dr_kw.get(w).and_then(|v| v.get(k)).copied().unwrap_or(0.0);
            upper.push((0..h).map(|k| spec.max_power_kw - dr(k) - net(k)).collect());
            lower.push((0..h).map(|k| spec.min_power_kw - net(k)).collect());
        }
        let prices = |v: &[f64]| (0..h).map(|k| crate::grid::padded(v, t + k)).collect::<Vec<_>>();
        Self {
            kind: Problem::Profit,
            dt_h,
            steps: h,
            start_step: t,
            chargers: cfg.chargers.clone(),
            slot_charger,
            sessions,
            transformer_upper_kw: upper,
            transformer_lower_kw: lower,
            setpoint_kw: vec![0.0; h],
            charge_price: prices(&exo.charge_price),
            discharge_price: prices(&exo.discharge_price),
            allow_discharge: cfg.v2g_enabled,
        }
    }

    pub fn slots(&self) -> usize {
        self.slot_charger.len()
    }

    pub fn charger_of(&self, session: &SessionWindow) -> &ChargerSpec {
        &self.chargers[self.slot_charger[session.slot]]
    }

    pub fn limits(&self, session: &SessionWindow) -> CellLimits {
        cell_limits(&session.spec, self.charger_of(session), self.allow_discharge)
    }

    /// Objective of a power schedule (`[slot][step]`, kW, signed): squared
    /// tracking error for PST, net energy cost for profit.
    pub fn objective_of(&self, power_kw: &[Vec<f64>]) -> f64 {
        let total = |t: usize| power_kw.iter().map(|p| p[t]).sum::<f64>();
        match self.kind {
            Problem::Pst => (0..self.steps).map(|t| (self.setpoint_kw[t] - total(t)).powi(2)).sum(),
            Problem::Profit => power_kw
                .iter()
                .flat_map(|p| p.iter().enumerate())
                .map(|(t, &p)| {
                    let c = if p >= 0.0 { self.charge_price[t] } else { self.discharge_price[t] };
                    p * c * self.dt_h
                })
                .sum(),
        }
    }
}

pub fn cell_limits(spec: &EvSpec, charger: &ChargerSpec, allow_discharge: bool) -> CellLimits {
    let root = f64::from(charger.phases).sqrt() * charger.voltage_v / 1000.0;
    let k_ch = spec.charge_efficiency * root;
    let k_dis = spec.discharge_efficiency * root;
    let i_ch = charger.max_charge_current_a.min(charger.max_station_current_a.max(0.0));
    let mut ch_max = spec.max_charge_kw(charger.charger_type).min(k_ch * i_ch).max(0.0);
    let ch_min = spec.min_charge_kw(charger.charger_type).max(k_ch * charger.min_charge_current_a);
    if ch_min > ch_max {
        ch_max = 0.0;
    }
    let (mut dis_min, mut dis_max) = (0.0, 0.0);
    if allow_discharge && spec.can_discharge() && charger.can_discharge() {
        let i_dis = (-charger.max_discharge_current_a).min((-charger.min_station_current_a).max(0.0));
        dis_max = spec.max_discharge_kw.min(k_dis * i_dis).max(0.0);
        dis_min = spec.min_discharge_kw.max(k_dis * -charger.min_discharge_current_a);
        if dis_min > dis_max {
            dis_max = 0.0;
        }
    }
    CellLimits {
        k_ch,
        k_dis,
        ch_min: if ch_max > 0.0 { ch_min } else { 0.0 },
        ch_max,
        dis_min: if dis_max > 0.0 { dis_min } else { 0.0 },
        dis_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// The branch-and-bound gap closed.
    Optimal,
    /// An integer-feasible schedule was found but the node limit stopped
    /// the search first.
    Feasible,
    /// Targets or transformer limits could not all be met; the schedule
    /// minimizes the total violation first.
    Relaxed,
    Infeasible,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Relaxed => "relaxed",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Solver output. Matrices are indexed `[slot][window step]`; discharge
/// currents and powers are negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    /// Best lower bound proven by the search.
    pub bound: f64,
    /// Branch-and-bound nodes, or plans for enumeration.
    pub nodes: usize,
    pub i_ch: Vec<Vec<f64>>,
    pub i_dis: Vec<Vec<f64>>,
    pub omega_ch: Vec<Vec<bool>>,
    pub omega_dis: Vec<Vec<bool>>,
    pub p_ch: Vec<Vec<f64>>,
    pub p_dis: Vec<Vec<f64>>,
    /// Per session (problem order): energy missing at the end of the window.
    pub shortfall_kwh: Vec<f64>,
    /// Violated constraints, for relaxed or infeasible results.
    pub report: Vec<String>,
}

impl Solution {
    pub fn empty(problem: &ScheduleProblem, status: SolveStatus) -> Self {
        let z = vec![vec![0.0; problem.steps]; problem.slots()];
        let b = vec![vec![false; problem.steps]; problem.slots()];
        Self {
            status,
            objective: f64::INFINITY,
            bound: f64::NEG_INFINITY,
            nodes: 0,
            i_ch: z.clone(),
            i_dis: z.clone(),
            omega_ch: b.clone(),
            omega_dis: b,
            p_ch: z.clone(),
            p_dis: z,
            shortfall_kwh: vec![0.0; problem.sessions.len()],
            report: Vec::new(),
        }
    }

    /// Fills currents, binaries, shortfalls and the objective from the
    /// per-slot powers.
    pub fn from_powers(problem: &ScheduleProblem, p_ch: Vec<Vec<f64>>, p_dis: Vec<Vec<f64>>, status: SolveStatus) -> Self {
        let mut s = Self::empty(problem, status);
        for sess in &problem.sessions {
            let ch = problem.charger_of(sess);
            for t in sess.start..sess.end {
                let (pc, pd) = (p_ch[sess.slot][t], p_dis[sess.slot][t]);
                if pc > 0.0 {
                    s.omega_ch[sess.slot][t] = true;
                    s.i_ch[sess.slot][t] =
                        current_from_power(pc, ch.voltage_v, ch.phases, sess.spec.charge_efficiency);
                }
                if pd < 0.0 {
                    s.omega_dis[sess.slot][t] = true;
                    s.i_dis[sess.slot][t] =
                        current_from_power(pd, ch.voltage_v, ch.phases, sess.spec.discharge_efficiency);
                }
            }
        }
        s.p_ch = p_ch;
        s.p_dis = p_dis;
        for (k, sess) in problem.sessions.iter().enumerate() {
            let e_end = s.energy_at(problem, k, sess.end);
            s.shortfall_kwh[k] = sess.e_final_min_kwh.map_or(0.0, |m| (m - e_end).max(0.0));
        }
        s.objective = problem.objective_of(&s.power_kw());
        s
    }

    /// Net power per slot and step.
    pub fn power_kw(&self) -> Vec<Vec<f64>> {
        self.p_ch
            .iter()
            .zip(&self.p_dis)
            .map(|(c, d)| c.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// Net EVSE current per slot and step.
    pub fn current_a(&self) -> Vec<Vec<f64>> {
        self.i_ch
            .iter()
            .zip(&self.i_dis)
            .map(|(c, d)| c.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// Stored energy of session `k` at the start of window step `t`.
    pub fn energy_at(&self, problem: &ScheduleProblem, k: usize, t: usize) -> f64 {
        let s = &problem.sessions[k];
        let moved: f64 = (s.start..t.min(s.end))
            .map(|u| self.p_ch[s.slot][u] + self.p_dis[s.slot][u])
            .sum();
        s.e_init_kwh + moved * problem.dt_h
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ev::ChargerType;

    pub(crate) fn charger() -> ChargerSpec {
        ChargerSpec {
            min_station_current_a: -64.0,
            max_station_current_a: 64.0,
            min_charge_current_a: 0.0,
            max_charge_current_a: 32.0,
            min_discharge_current_a: 0.0,
            max_discharge_current_a: -32.0,
            voltage_v: 230.0,
            phases: 3,
            evse_count: 1,
            charger_type: ChargerType::Ac,
            transformer: 0,
        }
    }

    /// Replay with one charger per EVSE slot and hand-placed sessions
    /// `(slot, t_arr, t_dep, e_arrival, e_target)`.
    pub(crate) fn hand_replay(
        problem: &str,
        slots: usize,
        sessions: &[(usize, usize, usize, f64, f64)],
        setpoint: Option<Vec<f64>>,
        prices: Vec<f64>,
        extra: &str,
    ) -> Replay {
        let steps = prices.len();
        let text = format!(
            r#"
[simulation]
timescale_minutes = 15
sim_length = {steps}
start_datetime = "2024-03-04T08:00:00"
scenario = "public"
problem = "{problem}"
v2g_enabled = true

[ev]
transition_soc = 1.0

[charging_station]
count = {slots}

[setpoint]
source = "none"
{extra}
"#
        );
        let mut config = crate::config::SimConfig::from_toml_str(&text, std::path::Path::new(".")).unwrap();
        config.charge_price = prices.clone();
        config.discharge_price = prices.clone();
        if let Some(values) = &setpoint {
            config.setpoint = crate::config::SetpointSource::Series { values: values.clone() };
        }
        let schedule = sessions
            .iter()
            .enumerate()
            .map(|(id, &(slot, t_arr, t_dep, e_arr, e_target))| crate::engine::ScheduledSession {
                id,
                slot,
                t_arr,
                t_dep,
                e_arrival_kwh: e_arr,
                e_target_kwh: e_target,
                battery_age_days: 0.0,
                spec: ev(),
            })
            .collect();
        Replay {
            format_version: crate::engine::REPLAY_FORMAT_VERSION,
            seed: 0,
            exogenous: crate::engine::Exogenous {
                charge_price: prices.clone(),
                discharge_price: prices,
                setpoint,
                transformers: vec![crate::grid::TransformerSeries::zeros(steps); config.transformers.len()],
            },
            config,
            schedule,
            dropped_arrivals: Vec::new(),
        }
    }

    pub(crate) fn ev() -> EvSpec {
        EvSpec {
            model_name: "x".into(),
            sales_weight: 1,
            max_capacity_kwh: 50.0,
            min_capacity_kwh: 5.0,
            max_ac_charge_kw: 11.0,
            min_ac_charge_kw: 0.0,
            max_dc_charge_kw: 50.0,
            min_dc_charge_kw: 0.0,
            max_discharge_kw: 7.0,
            min_discharge_kw: 0.0,
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
            transition_soc: 1.0,
        }
    }

    #[test]
    fn limits_take_the_tighter_side() {
        let l = cell_limits(&ev(), &charger(), true);
        assert_eq!(l.ch_max, 11.0);
        assert_eq!(l.dis_max, 7.0);
        assert!(l.is_binary());
        let l = cell_limits(&ev(), &charger(), false);
        assert_eq!(l.dis_max, 0.0);
        assert!(!l.is_binary());
        let mut c = charger();
        c.max_charge_current_a = 10.0;
        c.min_charge_current_a = 6.0;
        let l = cell_limits(&ev(), &c, false);
        assert!((l.ch_max - 10.0 * 230.0 * 3f64.sqrt() / 1000.0).abs() < 1e-12);
        assert!((l.ch_min - 6.0 * 230.0 * 3f64.sqrt() / 1000.0).abs() < 1e-12);
        assert!(l.is_binary());
    }

    #[test]
    fn dead_band_wider_than_range_disables_charging() {
        let mut e = ev();
        e.min_ac_charge_kw = 20.0;
        let l = cell_limits(&e, &charger(), false);
        assert!(!l.can_charge());
        assert_eq!(l.ch_min, 0.0);
    }
}
