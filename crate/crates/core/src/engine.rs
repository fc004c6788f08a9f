//! The simulation clock: reset, the per-step update loop, traces and replays.
//!
//! Step `t` covers the interval `[t, t+1)`. An EV is controllable during
//! `[t_arr, t_dep)`; sessions with `t_dep = t + 1` leave at the end of step
//! `t`, and arrivals for step `t + 1` are drawn right after, so a controller
//! never sees an EV before it is plugged in.

use serde::{Deserialize, Serialize};

use crate::config::{Problem, SetpointSource, SimConfig};
use crate::error::{Result, SimError};
use crate::ev::{clamp_ev_power, power_from_current, step_soc, EvSession, EvSpec};
use crate::grid::{self, TransformerSeries};
use crate::rl;
use crate::rng::SimRng;
use crate::station::{self, ActionRange, ChargerSpec};

pub const REPLAY_FORMAT_VERSION: u32 = 1;

/// Exogenous inputs realized for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    pub charge_price: Vec<f64>,
    pub discharge_price: Vec<f64>,
    pub setpoint: Option<Vec<f64>>,
    pub transformers: Vec<TransformerSeries>,
}

impl Exogenous {
    pub fn realize(config: &SimConfig, rng: &mut SimRng) -> Self {
        let t_len = config.sim_length;
        let transformers = config
            .transformers
            .iter()
            .map(|spec| {
                grid::realize_series(
                    spec,
                    t_len,
                    |t| config.hour_of_day(t),
                    |t| config.day_index(t),
                    &mut rng.loads,
                )
            })
            .collect();
        let charge_price = config.charge_price[..t_len].to_vec();
        let setpoint = match &config.setpoint {
            SetpointSource::None => None,
            SetpointSource::Series { values } => Some(values[..t_len].to_vec()),
            SetpointSource::Builtin { kw_per_charger, low, high } => {
                use rand::Rng;
                let u = if high > low { rng.loads.random_range(*low..=*high) } else { *low };
                let (lo, hi) = charge_price
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(*p), b.max(*p)));
                let span = if hi > lo { hi - lo } else { 1.0 };
                let scale = config.chargers.len() as f64 * kw_per_charger * u;
                Some(charge_price.iter().map(|p| scale * (1.0 - 0.5 * (p - lo) / span)).collect())
            }
        };
        Self {
            discharge_price: config.discharge_price[..t_len].to_vec(),
            charge_price,
            setpoint,
            transformers,
        }
    }
}

/// One session of the realized EV schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSession {
    pub id: usize,
    pub slot: usize,
    pub t_arr: usize,
    pub t_dep: usize,
    pub e_arrival_kwh: f64,
    pub e_target_kwh: f64,
    pub battery_age_days: f64,
    pub spec: EvSpec,
}

impl ScheduledSession {
    pub fn to_session(&self) -> EvSession {
        EvSession {
            id: self.id,
            spec: self.spec.clone(),
            slot: self.slot,
            soc: self.e_arrival_kwh / self.spec.max_capacity_kwh,
            e_arrival_kwh: self.e_arrival_kwh,
            e_target_kwh: self.e_target_kwh,
            t_arr: self.t_arr,
            t_dep: self.t_dep,
            battery_age_days: self.battery_age_days,
            soc_history: Vec::new(),
            power_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub format_version: u32,
    pub seed: u64,
    pub config: SimConfig,
    pub schedule: Vec<ScheduledSession>,
    pub exogenous: Exogenous,
    /// Arrivals turned away at each step for lack of a free EVSE.
    #[serde(default)]
    pub dropped_arrivals: Vec<usize>,
}

impl Replay {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| SimError::ReplayDecode(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| SimError::DataSource {
            path: path.to_path_buf(),
            source,
        })?;
        load_replay(&bytes)
    }
}

/// Decodes a replay, checking the format version before the body.
pub fn load_replay(bytes: &[u8]) -> Result<Replay> {
    #[derive(Deserialize)]
    struct Header {
        format_version: u32,
    }
    let header: Header = serde_json::from_slice(bytes).map_err(|e| SimError::ReplayDecode(e.to_string()))?;
    if header.format_version != REPLAY_FORMAT_VERSION {
        return Err(SimError::ReplayVersion {
            found: header.format_version,
            expected: REPLAY_FORMAT_VERSION,
        });
    }
    serde_json::from_slice(bytes).map_err(|e| SimError::ReplayDecode(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Departure {
    pub session: usize,
    pub slot: usize,
    pub satisfaction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFlags {
    pub clamped_actions: usize,
    pub dead_banded: usize,
    pub clipped: usize,
    pub normalized_chargers: usize,
    pub discharge_blocked: usize,
    pub dropped_arrivals: usize,
}

/// Everything observed during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub actions: Vec<f64>,
    pub occupied: Vec<bool>,
    /// EVSE currents after station limits.
    pub current_a: Vec<f64>,
    /// Realized EV power per slot (kW, negative = discharge).
    pub power_kw: Vec<f64>,
    /// SoC at the end of the step, 0 for empty slots.
    pub soc: Vec<f64>,
    pub charger_current_a: Vec<f64>,
    pub transformer_kw: Vec<f64>,
    pub overload_kw: Vec<f64>,
    pub undershoot_kw: Vec<f64>,
    pub p_total_kw: f64,
    pub p_set_kw: Option<f64>,
    pub charge_price: f64,
    pub discharge_price: f64,
    pub cashflow: f64,
    pub departures: Vec<Departure>,
    /// Sessions plugged in for the next step.
    pub arrivals: Vec<usize>,
    pub reward: f64,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt_h: f64,
    pub problem: Problem,
    pub steps: Vec<StepRecord>,
    /// Departed sessions in departure order.
    pub sessions: Vec<EvSession>,
    pub degradation: crate::ev::DegradationParams,
    pub controller_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub record: StepRecord,
}

/// What a controller may read about the exogenous future at the current step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastView {
    /// Per transformer: forecast load plus PV over the next `h` steps.
    pub net_load_kw: Vec<Vec<f64>>,
    /// Per transformer: announced demand-response reductions.
    pub dr_kw: Vec<Vec<f64>>,
}

enum ArrivalSource {
    Sample,
    Schedule(Vec<Vec<ScheduledSession>>),
}

pub trait Controller {
    fn name(&self) -> String;

    fn reset(&mut self, _sim: &Simulation) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, sim: &Simulation) -> Result<Vec<f64>>;

    /// Steps in which the controller fell back to a simpler policy.
    fn fallbacks(&self) -> usize {
        0
    }
}

/// Energy (kWh) an EV ends with after charging at the EVSE maximum for
/// `steps` steps, through the same arithmetic the engine uses.
pub fn max_charge_energy(spec: &EvSpec, charger: &ChargerSpec, soc: f64, steps: usize, dt_h: f64) -> f64 {
    let current = charger.max_charge_current_a.min(charger.max_station_current_a.max(0.0));
    let p = power_from_current(current, charger.voltage_v, charger.phases, spec.charge_efficiency);
    let mut s = soc;
    for _ in 0..steps {
        let c = clamp_ev_power(spec, s, p, charger.charger_type, dt_h);
        s = step_soc(s, c.power_kw, dt_h, spec.max_capacity_kwh, spec.transition_soc, spec.min_soc());
    }
    s * spec.max_capacity_kwh
}

pub struct Simulation {
    config: SimConfig,
    seed: u64,
    t: usize,
    slot_charger: Vec<usize>,
    slots: Vec<Option<EvSession>>,
    rng: SimRng,
    source: ArrivalSource,
    exo: Exogenous,
    schedule: Vec<ScheduledSession>,
    next_id: usize,
    dropped: Vec<usize>,
    full: Vec<bool>,
    last_p_total: f64,
    forecast: ForecastView,
    trace: SimTrace,
}

impl Simulation {
    /// Starts a run that samples EV sessions from the behavior model.
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::new(seed);
        let exo = Exogenous::realize(&config, &mut rng);
        Self::build(config, seed, rng, exo, ArrivalSource::Sample)
    }

    /// Starts a run that replays a recorded schedule and exogenous series.
    pub fn from_replay(replay: &Replay) -> Result<Self> {
        let config = replay.config.clone();
        config.validate()?;
        let n_slots = config.evse_count();
        let mut by_step = vec![Vec::new(); config.sim_length];
        for s in &replay.schedule {
            if s.slot >= n_slots || s.t_arr >= s.t_dep || s.t_dep > config.sim_length {
                return Err(SimError::ReplayDecode(format!("session {} has an invalid slot or stay", s.id)));
            }
            by_step[s.t_arr].push(s.clone());
        }
        let rng = SimRng::new(replay.seed);
        let mut sim = Self::build(
            config,
            replay.seed,
            rng,
            replay.exogenous.clone(),
            ArrivalSource::Schedule(by_step),
        )?;
        sim.dropped = replay.dropped_arrivals.clone();
        sim.dropped.resize(sim.config.sim_length, 0);
        Ok(sim)
    }

    fn build(config: SimConfig, seed: u64, rng: SimRng, exo: Exogenous, source: ArrivalSource) -> Result<Self> {
        let n = config.evse_count();
        if exo.transformers.len() != config.transformers.len()
            || exo.charge_price.len() < config.sim_length
            || exo.transformers.iter().any(|s| s.len() < config.sim_length)
        {
            return Err(SimError::ReplayDecode("exogenous series do not match the config".into()));
        }
        let trace = SimTrace {
            dt_h: config.dt_h(),
            problem: config.problem,
            steps: Vec::with_capacity(config.sim_length),
            sessions: Vec::new(),
            degradation: config.degradation,
            controller_fallbacks: 0,
        };
        let mut sim = Self {
            slot_charger: config.slot_chargers(),
            slots: vec![None; n],
            seed,
            t: 0,
            rng,
            source,
            exo,
            schedule: Vec::new(),
            next_id: 0,
            dropped: vec![0; config.sim_length],
            full: vec![false; n],
            last_p_total: 0.0,
            forecast: ForecastView::default(),
            trace,
            config,
        };
        // Only hand-built replays can plug EVs in at step 0.
        sim.admit_scheduled(0)?;
        sim.refresh_forecast();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn current_step(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.config.sim_length
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.sim_length
    }

    pub fn slots(&self) -> &[Option<EvSession>] {
        &self.slots
    }

    pub fn slot_charger(&self, slot: usize) -> usize {
        self.slot_charger[slot]
    }

    pub fn charger_of_slot(&self, slot: usize) -> &ChargerSpec {
        &self.config.chargers[self.slot_charger[slot]]
    }

    pub fn exogenous(&self) -> &Exogenous {
        &self.exo
    }

    pub fn forecast(&self) -> &ForecastView {
        &self.forecast
    }

    /// Slots known to be full: the EV took no energy although charging was
    /// requested in its last step.
    pub fn full_flags(&self) -> &[bool] {
        &self.full
    }

    pub fn last_total_power(&self) -> f64 {
        self.last_p_total
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn action_range(&self) -> ActionRange {
        match self.config.problem {
            Problem::Pst => ActionRange::CHARGE_ONLY,
            Problem::Profit => ActionRange::BIDIRECTIONAL,
        }
    }

    pub fn setpoint_at(&self, step: usize) -> f64 {
        self.exo.setpoint.as_ref().map_or(0.0, |s| grid::padded(s, step))
    }

    pub fn observation(&self) -> Vec<f64> {
        rl::encode(self)
    }

    fn refresh_forecast(&mut self) {
        if self.config.problem != Problem::Profit || self.is_done() {
            return;
        }
        let h = self.config.forecast.horizon;
        let sigma = self.config.forecast.sigma_kw;
        let t = self.t;
        let mut view = ForecastView::default();
        for (spec, series) in self.config.transformers.iter().zip(&self.exo.transformers) {
            let net: Vec<f64> = (0..series.len()).map(|k| series.inflexible_kw(k)).collect();
            view.net_load_kw
                .push(grid::forecast(&net, t, h, sigma, &mut self.rng.forecasts));
            view.dr_kw.push(grid::visible_dr(&series.dr_kw, t, h, spec.dr_notice_steps));
        }
        self.forecast = view;
    }

    fn place(&mut self, s: &ScheduledSession) -> Result<()> {
        if self.slots[s.slot].is_some() {
            return Err(SimError::ReplayDecode(format!("session {} arrives at an occupied slot", s.id)));
        }
        self.slots[s.slot] = Some(s.to_session());
        self.full[s.slot] = false;
        self.schedule.push(s.clone());
        Ok(())
    }

    fn admit_scheduled(&mut self, step: usize) -> Result<Vec<usize>> {
        let arriving = match &self.source {
            ArrivalSource::Schedule(by_step) => by_step[step].clone(),
            ArrivalSource::Sample => return Ok(Vec::new()),
        };
        let mut ids = Vec::with_capacity(arriving.len());
        for s in &arriving {
            self.place(s)?;
            ids.push(s.id);
        }
        Ok(ids)
    }

    fn sample_arrivals(&mut self, step: usize) -> Result<(Vec<usize>, usize)> {
        let free: Vec<usize> = (0..self.slots.len()).filter(|&i| self.slots[i].is_none()).collect();
        let (draws, dropped) = self.config.behavior.sample_arrivals(
            self.config.hour_of_week(step),
            &free,
            self.slots.len(),
            self.config.timescale_minutes,
            &self.config.registry,
            &mut self.rng.arrivals,
            &mut self.rng.specs,
        )?;
        let dt_h = self.config.dt_h();
        let mut ids = Vec::with_capacity(draws.len());
        for d in draws {
            let spec = self.config.registry.specs[d.spec_index].clone();
            let charger = &self.config.chargers[self.slot_charger[d.slot]];
            let t_dep = (step + d.stay_steps).min(self.config.sim_length);
            let soc = d.soc.clamp(spec.min_soc(), 1.0);
            let e_arr = soc * spec.max_capacity_kwh;
            let reachable = max_charge_energy(&spec, charger, soc, t_dep - step, dt_h);
            let target = (self.config.ev.desired_soc * spec.max_capacity_kwh).min(reachable).max(e_arr);
            let s = ScheduledSession {
                id: self.next_id,
                slot: d.slot,
                t_arr: step,
                t_dep,
                e_arrival_kwh: e_arr,
                e_target_kwh: target,
                battery_age_days: self.config.ev.battery_age_days,
                spec,
            };
            self.next_id += 1;
            self.place(&s)?;
            ids.push(s.id);
        }
        Ok((ids, dropped))
    }

    /// Advances one step. `actions` holds one normalized value per EVSE slot.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepResult> {
        if self.is_done() {
            return Err(SimError::Finished(self.config.sim_length));
        }
        let n = self.slots.len();
        if actions.len() != n {
            return Err(SimError::ActionShape {
                expected: n,
                got: actions.len(),
            });
        }
        let t = self.t;
        let dt_h = self.config.dt_h();
        let range = self.action_range();
        let mut flags = StepFlags::default();
        let occupied: Vec<bool> = self.slots.iter().map(Option::is_some).collect();

        // (1)-(2) decode and apply station limits, charger by charger
        let mut current_a = vec![0.0; n];
        let mut clean_actions = vec![0.0; n];
        let mut charger_current_a = vec![0.0; self.config.chargers.len()];
        let mut first = 0;
        for (ci, spec) in self.config.chargers.iter().enumerate() {
            let idx = first..first + spec.evse_count;
            let requested: Vec<f64> = idx
                .clone()
                .map(|k| {
                    let d = station::decode_action(actions[k], spec, occupied[k], range);
                    flags.clamped_actions += usize::from(d.clamped);
                    clean_actions[k] = if actions[k].is_nan() { 0.0 } else { actions[k].clamp(range.low, range.high) };
                    d.current_a
                })
                .collect();
            let out = station::apply_station_limits(&requested, spec);
            flags.dead_banded += out.dead_banded;
            flags.clipped += out.clipped;
            flags.normalized_chargers += usize::from(out.scale.is_some());
            charger_current_a[ci] = out.total_current_a();
            current_a[idx.clone()].copy_from_slice(&out.currents_a);
            first += spec.evse_count;
        }

        // (3) EV-side limits and battery update
        let mut power_kw = vec![0.0; n];
        let mut soc_end = vec![0.0; n];
        for k in 0..n {
            let Some(ev) = self.slots[k].as_mut() else { continue };
            let charger = &self.config.chargers[self.slot_charger[k]];
            let i = current_a[k];
            let eff = if i >= 0.0 { ev.spec.charge_efficiency } else { ev.spec.discharge_efficiency };
            let requested = power_from_current(i, charger.voltage_v, charger.phases, eff);
            let clamped = clamp_ev_power(&ev.spec, ev.soc, requested, charger.charger_type, dt_h);
            flags.discharge_blocked += usize::from(clamped.discharge_blocked);
            let cap = ev.spec.max_capacity_kwh;
            let next = step_soc(ev.soc, clamped.power_kw, dt_h, cap, ev.spec.transition_soc, ev.spec.min_soc());
            let realized = (next - ev.soc) * cap / dt_h;
            ev.soc_history.push(ev.soc);
            ev.power_history.push(realized);
            ev.soc = next;
            power_kw[k] = realized;
            soc_end[k] = next;
            if i > 0.0 && realized == 0.0 {
                self.full[k] = true;
            } else if realized != 0.0 {
                self.full[k] = false;
            }
        }

        // (4) transformer aggregation
        let n_tr = self.config.transformers.len();
        let mut ev_kw = vec![0.0; n_tr];
        for k in 0..n {
            ev_kw[self.config.chargers[self.slot_charger[k]].transformer] += power_kw[k];
        }
        let mut transformer_kw = vec![0.0; n_tr];
        let mut overload_kw = vec![0.0; n_tr];
        let mut undershoot_kw = vec![0.0; n_tr];
        for w in 0..n_tr {
            let spec = &self.config.transformers[w];
            let series = &self.exo.transformers[w];
            let net = grid::transformer_net_power(series, t, ev_kw[w]);
            transformer_kw[w] = net;
            overload_kw[w] = grid::overload_at(spec, series, t, net);
            undershoot_kw[w] = grid::undershoot_at(spec, net);
        }
        let p_total_kw: f64 = power_kw.iter().sum();
        let c_ch = self.exo.charge_price[t];
        let c_dis = self.exo.discharge_price[t];
        let cashflow: f64 = power_kw
            .iter()
            .map(|p| station::session_cashflow(*p, dt_h, c_ch, c_dis))
            .sum();

        // (5) departures
        let mut departures = Vec::new();
        for k in 0..n {
            if self.slots[k].as_ref().is_some_and(|ev| ev.t_dep == t + 1) {
                let ev = self.slots[k].take().expect("checked above");
                self.full[k] = false;
                departures.push(Departure {
                    session: ev.id,
                    slot: k,
                    satisfaction: ev.satisfaction(),
                });
                self.trace.sessions.push(ev);
            }
        }

        // (6) arrivals for the next step
        let mut arrivals = Vec::new();
        if t + 1 < self.config.sim_length {
            let (mut ids, dropped) = match self.source {
                ArrivalSource::Sample => self.sample_arrivals(t + 1)?,
                ArrivalSource::Schedule(_) => (self.admit_scheduled(t + 1)?, self.dropped[t]),
            };
            flags.dropped_arrivals = dropped;
            self.dropped[t] = dropped;
            arrivals.append(&mut ids);
        }

        // (7) reward
        let p_set_kw = self.exo.setpoint.as_ref().map(|s| s[t]);
        let reward = match self.config.problem {
            Problem::Pst => rl::reward_pst(p_set_kw.unwrap_or(0.0), p_total_kw),
            Problem::Profit => {
                let overload_kwh: f64 = overload_kw.iter().map(|o| o * dt_h).sum();
                let sats: Vec<f64> = departures.iter().map(|d| d.satisfaction).collect();
                rl::reward_profit(cashflow, overload_kwh, &sats)
            }
        };

        // (8) trace
        let record = StepRecord {
            step: t,
            actions: clean_actions,
            occupied,
            current_a,
            power_kw,
            soc: soc_end,
            charger_current_a,
            transformer_kw,
            overload_kw,
            undershoot_kw,
            p_total_kw,
            p_set_kw,
            charge_price: c_ch,
            discharge_price: c_dis,
            cashflow,
            departures,
            arrivals,
            reward,
            flags,
        };
        self.trace.steps.push(record.clone());
        self.last_p_total = p_total_kw;
        self.t += 1;
        self.refresh_forecast();
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.is_done(),
            record,
        })
    }

    /// Snapshot of the realized schedule and series; only valid once done.
    pub fn save_replay(&self) -> Result<Replay> {
        if !self.is_done() {
            return Err(SimError::NotFinished {
                step: self.t,
                horizon: self.config.sim_length,
            });
        }
        let mut schedule = self.schedule.clone();
        schedule.sort_by_key(|s| s.id);
        Ok(Replay {
            format_version: REPLAY_FORMAT_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            schedule,
            exogenous: self.exo.clone(),
            dropped_arrivals: self.dropped.clone(),
        })
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }
}

/// Runs a controller until the simulation is done.
pub fn run_episode(mut sim: Simulation, controller: &mut dyn Controller) -> Result<(SimTrace, Replay)> {
    controller.reset(&sim)?;
    while !sim.is_done() {
        let actions = controller.act(&sim)?;
        sim.step(&actions)?;
    }
    let replay = sim.save_replay()?;
    let mut trace = sim.into_trace();
    trace.controller_fallbacks = controller.fallbacks();
    Ok((trace, replay))
}

/// Re-runs a recorded schedule under any controller.
pub fn resimulate(replay: &Replay, controller: &mut dyn Controller) -> Result<SimTrace> {
    Ok(run_episode(Simulation::from_replay(replay)?, controller)?.0)
}

/// Samples a schedule by running with every EVSE idle. Schedules do not
/// depend on the controller, so this is the replay any controller would see.
pub fn sample_replay(config: &SimConfig, seed: u64) -> Result<Replay> {
    let mut sim = Simulation::new(config.clone(), seed)?;
    let idle = vec![0.0; config.evse_count()];
    while !sim.is_done() {
        sim.step(&idle)?;
    }
    sim.save_replay()
}
