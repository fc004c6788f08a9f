//! EV battery model: power from current, two-stage SoC dynamics, EV-side
//! power limits, and calendar/cyclic capacity loss.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargerType {
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "DC")]
    Dc,
}

/// Static properties of one EV model. Discharge limits are magnitudes (kW >= 0);
/// discharge power itself is negative everywhere else in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub model_name: String,
    pub sales_weight: u64,
    pub max_capacity_kwh: f64,
    pub min_capacity_kwh: f64,
    pub max_ac_charge_kw: f64,
    pub min_ac_charge_kw: f64,
    pub max_dc_charge_kw: f64,
    pub min_dc_charge_kw: f64,
    pub max_discharge_kw: f64,
    pub min_discharge_kw: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub transition_soc: f64,
}

impl EvSpec {
    pub fn min_soc(&self) -> f64 {
        self.min_capacity_kwh / self.max_capacity_kwh
    }

    pub fn max_charge_kw(&self, mode: ChargerType) -> f64 {
        match mode {
            ChargerType::Ac => self.max_ac_charge_kw,
            ChargerType::Dc => self.max_dc_charge_kw,
        }
    }

    pub fn min_charge_kw(&self, mode: ChargerType) -> f64 {
        match mode {
            ChargerType::Ac => self.min_ac_charge_kw,
            ChargerType::Dc => self.min_dc_charge_kw,
        }
    }

    pub fn can_discharge(&self) -> bool {
        self.max_discharge_kw > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("ev spec `{}`.{}", self.model_name, f);
        if !(self.max_capacity_kwh > 0.0) {
            return Err(SimError::config(field("max_capacity_kwh"), "must be positive"));
        }
        if !(0.0..self.max_capacity_kwh).contains(&self.min_capacity_kwh) {
            return Err(SimError::config(field("min_capacity_kwh"), "must satisfy 0 <= min < max"));
        }
        for (name, lo, hi) in [
            ("ac_charge_kw", self.min_ac_charge_kw, self.max_ac_charge_kw),
            ("dc_charge_kw", self.min_dc_charge_kw, self.max_dc_charge_kw),
            ("discharge_kw", self.min_discharge_kw, self.max_discharge_kw),
        ] {
            if lo < 0.0 || hi < 0.0 || lo > hi {
                return Err(SimError::config(field(name), "limits must satisfy 0 <= min <= max"));
            }
        }
        for (name, eta) in [
            ("charge_efficiency", self.charge_efficiency),
            ("discharge_efficiency", self.discharge_efficiency),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(SimError::config(field(name), "must lie in (0, 1]"));
            }
        }
        if !(self.transition_soc > 0.0 && self.transition_soc <= 1.0) {
            return Err(SimError::config(field("transition_soc"), "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Per-model values not carried by the registry table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvDefaults {
    pub transition_soc: f64,
    pub min_soc: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub min_charge_kw: f64,
    pub min_discharge_kw: f64,
}

impl Default for EvDefaults {
    fn default() -> Self {
        Self {
            transition_soc: 0.8,
            min_soc: 0.1,
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
            min_charge_kw: 0.0,
            min_discharge_kw: 0.0,
        }
    }
}

/// Registered EV models with their sales counts, used to weight sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRegistry {
    pub specs: Vec<EvSpec>,
}

// name, sales, capacity kWh, max AC kW, max DC kW, max discharge kW
const NL_2023: [(&str, u64, f64, f64, f64, f64); 12] = [
    ("Tesla Model 3", 45545, 57.5, 11.0, 170.0, 0.0),
    ("Kia Niro", 23105, 64.8, 11.0, 80.0, 0.0),
    ("Volkswagen ID.3", 19950, 58.0, 11.0, 120.0, 0.0),
    ("Hyundai Kona", 17752, 64.0, 11.0, 77.0, 0.0),
    ("Tesla Model Y", 16186, 57.5, 11.0, 170.0, 0.0),
    ("Skoda Enyaq", 16165, 58.0, 11.0, 124.0, 0.0),
    ("Peugeot 208", 14017, 46.3, 7.4, 101.0, 0.0),
    ("Renault Zoe", 14008, 52.0, 22.0, 46.0, 0.0),
    ("Volkswagen ID.4", 13283, 77.0, 11.0, 135.0, 10.0),
    ("Volvo XC40", 12520, 66.0, 11.0, 135.0, 0.0),
    ("Nissan Leaf", 11977, 39.0, 3.6, 46.0, 7.0),
    ("Tesla Model S", 10899, 75.0, 11.0, 250.0, 0.0),
];

#[derive(Debug, Serialize, Deserialize)]
struct RegistryRow {
    name: String,
    sales: u64,
    capacity_kwh: f64,
    max_ac_charge_kw: f64,
    max_dc_charge_kw: f64,
    max_discharge_kw: f64,
}

impl EvRegistry {
    /// The 2023 Dutch registration table shipped with the crate.
    pub fn builtin(defaults: &EvDefaults) -> Self {
        let specs = NL_2023
            .iter()
            .map(|&(name, sales, cap, ac, dc, dis)| make_spec(name, sales, cap, ac, dc, dis, defaults))
            .collect();
        Self { specs }
    }

    pub fn get(&self, name: &str) -> Option<&EvSpec> {
        self.specs.iter().find(|s| s.model_name == name)
    }

    pub fn total_weight(&self) -> u64 {
        self.specs.iter().map(|s| s.sales_weight).sum()
    }

    pub fn from_csv<R: Read>(reader: R, defaults: &EvDefaults) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut specs = Vec::new();
        for (i, row) in rdr.deserialize::<RegistryRow>().enumerate() {
            let row = row.map_err(|e| SimError::malformed("ev registry", i + 1, 0, e.to_string()))?;
            let spec = make_spec(
                &row.name,
                row.sales,
                row.capacity_kwh,
                row.max_ac_charge_kw,
                row.max_dc_charge_kw,
                row.max_discharge_kw,
                defaults,
            );
            spec.validate()?;
            specs.push(spec);
        }
        if specs.is_empty() {
            return Err(SimError::EmptyRegistry);
        }
        Ok(Self { specs })
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.specs {
            wtr.serialize(RegistryRow {
                name: s.model_name.clone(),
                sales: s.sales_weight,
                capacity_kwh: s.max_capacity_kwh,
                max_ac_charge_kw: s.max_ac_charge_kw,
                max_dc_charge_kw: s.max_dc_charge_kw,
                max_discharge_kw: s.max_discharge_kw,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn make_spec(name: &str, sales: u64, cap: f64, ac: f64, dc: f64, dis: f64, d: &EvDefaults) -> EvSpec {
    EvSpec {
        model_name: name.to_string(),
        sales_weight: sales,
        max_capacity_kwh: cap,
        min_capacity_kwh: d.min_soc * cap,
        max_ac_charge_kw: ac,
        min_ac_charge_kw: d.min_charge_kw.min(ac),
        max_dc_charge_kw: dc,
        min_dc_charge_kw: d.min_charge_kw.min(dc),
        max_discharge_kw: dis,
        min_discharge_kw: d.min_discharge_kw.min(dis),
        charge_efficiency: d.charge_efficiency,
        discharge_efficiency: d.discharge_efficiency,
        transition_soc: d.transition_soc,
    }
}

/// One EV's stay at an EVSE slot. Step indices are absolute simulation steps;
/// the EV is connected during `[t_arr, t_dep)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub id: usize,
    pub spec: EvSpec,
    pub slot: usize,
    pub soc: f64,
    pub e_arrival_kwh: f64,
    pub e_target_kwh: f64,
    pub t_arr: usize,
    pub t_dep: usize,
    pub battery_age_days: f64,
    /// SoC at the start of every connected step.
    pub soc_history: Vec<f64>,
    /// Realized power during every connected step (kW, negative = discharge).
    pub power_history: Vec<f64>,
}

impl EvSession {
    pub fn energy_kwh(&self) -> f64 {
        self.soc * self.spec.max_capacity_kwh
    }

    pub fn target_soc(&self) -> f64 {
        self.e_target_kwh / self.spec.max_capacity_kwh
    }

    /// SoC relative to the desired SoC, capped at 1.
    pub fn satisfaction(&self) -> f64 {
        let target = self.target_soc();
        if target <= 0.0 {
            return 1.0;
        }
        (self.soc / target).min(1.0)
    }

    pub fn connected_steps(&self) -> usize {
        self.t_dep - self.t_arr
    }
}

/// Eq. P = eta * I * V * sqrt(phases), in kW for amperes and volts.
pub fn power_from_current(current_a: f64, volts: f64, phases: u32, efficiency: f64) -> f64 {
    efficiency * current_a * volts * f64::from(phases).sqrt() / 1000.0
}

/// Inverse of [`power_from_current`].
pub fn current_from_power(power_kw: f64, volts: f64, phases: u32, efficiency: f64) -> f64 {
    power_kw * 1000.0 / (efficiency * volts * f64::from(phases).sqrt())
}

/// Two-stage (CC/CV) SoC update. Below `tau` the battery integrates power
/// linearly; at or above it the SoC approaches 1 exponentially. `tau = 1`
/// degenerates to the linear model everywhere.
pub fn step_soc(soc: f64, power_kw: f64, dt_h: f64, capacity_kwh: f64, tau: f64, min_soc: f64) -> f64 {
    let next = if tau >= 1.0 || soc < tau {
        soc + power_kw * dt_h / capacity_kwh
    } else {
        1.0 + (soc - 1.0) * (power_kw * dt_h / (capacity_kwh * (tau - 1.0))).exp()
    };
    next.clamp(min_soc, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampedPower {
    pub power_kw: f64,
    /// Discharge was requested from an EV that cannot discharge.
    pub discharge_blocked: bool,
}

/// Applies the EV's own power limits to a requested power, and keeps the
/// stored energy inside `[E_min, E_max]` over a step of `dt_h` hours. In the
/// constant-voltage region the charge request passes through unclipped.
pub fn clamp_ev_power(spec: &EvSpec, soc: f64, requested_kw: f64, mode: ChargerType, dt_h: f64) -> ClampedPower {
    let cap = spec.max_capacity_kwh;
    let energy = soc * cap;
    if requested_kw > 0.0 {
        let mut p = requested_kw.min(spec.max_charge_kw(mode));
        if p < spec.min_charge_kw(mode) {
            p = 0.0;
        }
        // Above the transition SoC the exponential update cannot overshoot.
        let linear = spec.transition_soc >= 1.0 || soc < spec.transition_soc;
        let headroom = if linear { ((cap - energy) / dt_h).max(0.0) } else { f64::INFINITY };
        ClampedPower {
            power_kw: p.min(headroom),
            discharge_blocked: false,
        }
    } else if requested_kw < 0.0 {
        if !spec.can_discharge() {
            return ClampedPower {
                power_kw: 0.0,
                discharge_blocked: true,
            };
        }
        let mut p = requested_kw.max(-spec.max_discharge_kw);
        if -p < spec.min_discharge_kw {
            p = 0.0;
        }
        let floor = ((energy - spec.min_capacity_kwh) / dt_h).max(0.0);
        ClampedPower {
            power_kw: p.max(-floor),
            discharge_blocked: false,
        }
    } else {
        ClampedPower {
            power_kw: 0.0,
            discharge_blocked: false,
        }
    }
}

/// Fit constants of the calendar/cyclic aging model. `theta_c` is the battery
/// temperature in degrees Celsius; the Arrhenius factor is evaluated in Kelvin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationParams {
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub theta_c: f64,
    pub zeta0: f64,
    pub zeta1: f64,
    pub q_acc_kwh: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            eps0: 6.23e6,
            eps1: 1.38e6,
            eps2: 6976.0,
            theta_c: 28.0,
            zeta0: 4.02e-4,
            zeta1: 2.04e-3,
            q_acc_kwh: 11160.0,
        }
    }
}

impl DegradationParams {
    pub fn theta_kelvin(&self) -> f64 {
        self.theta_c + 273.15
    }
}

/// Calendar capacity loss over `t_days` for a battery aged `age_days`.
/// Floored at zero below the average SoC `eps1 / eps0`.
pub fn calendar_loss(avg_soc: f64, t_days: f64, age_days: f64, p: &DegradationParams) -> f64 {
    let d = 0.75 * (p.eps0 * avg_soc - p.eps1) * (-p.eps2 / p.theta_kelvin()).exp() * t_days / age_days.powf(0.25);
    d.max(0.0)
}

/// Cyclic capacity loss. Both series are sampled once per step of `dt_h` hours;
/// the SoC-deviation integral is divided by the same duration, so it is a
/// time-averaged absolute deviation.
pub fn cyclic_loss(soc_series: &[f64], power_series: &[f64], dt_h: f64, p: &DegradationParams) -> f64 {
    if soc_series.is_empty() {
        return 0.0;
    }
    let n = soc_series.len() as f64;
    let avg = soc_series.iter().sum::<f64>() / n;
    let deviation = soc_series.iter().map(|s| (avg - s).abs() * dt_h).sum::<f64>() / (n * dt_h);
    let throughput: f64 = power_series.iter().map(|q| q.abs() * dt_h).sum();
    (p.zeta0 + p.zeta1 * deviation) * throughput / p.q_acc_kwh.sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub calendar: f64,
    pub cyclic: f64,
}

impl Degradation {
    pub fn total(&self) -> f64 {
        self.calendar + self.cyclic
    }
}

pub fn total_degradation(session: &EvSession, dt_h: f64, p: &DegradationParams) -> Degradation {
    let n = session.soc_history.len();
    if n == 0 {
        return Degradation::default();
    }
    let avg = session.soc_history.iter().sum::<f64>() / n as f64;
    let t_days = n as f64 * dt_h / 24.0;
    Degradation {
        calendar: calendar_loss(avg, t_days, session.battery_age_days, p),
        cyclic: cyclic_loss(&session.soc_history, &session.power_history, dt_h, p),
    }
}
