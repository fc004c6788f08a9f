#![allow(dead_code)]

use std::path::{Path, PathBuf};

use v2g_sim::config::SetpointSource;
use v2g_sim::engine::{Exogenous, ScheduledSession, REPLAY_FORMAT_VERSION};
use v2g_sim::ev::EvSpec;
use v2g_sim::grid::TransformerSeries;
use v2g_sim::{Replay, SimConfig};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn load(name: &str) -> SimConfig {
    SimConfig::from_path(&data(name)).unwrap()
}

/// 50 kWh battery, 5 kWh floor, 11 kW AC, 7 kW discharge, lossless, linear.
pub fn ev() -> EvSpec {
    EvSpec {
        model_name: "test".into(),
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

/// A session tuple: (slot, t_arr, t_dep, E_arr, E*).
pub type Sess = (usize, usize, usize, f64, f64);

/// Builds a replay by hand: `slots` single-EVSE chargers, 15-minute steps,
/// one transformer with no load, and every session using `spec`.
pub fn hand_replay(problem: &str, slots: usize, sessions: &[Sess], setpoint: Option<Vec<f64>>, prices: Vec<f64>, spec: &EvSpec, extra: &str) -> Replay {
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
    let mut config = SimConfig::from_toml_str(&text, Path::new(".")).unwrap();
    config.charge_price = prices.clone();
    config.discharge_price = prices.clone();
    if let Some(values) = &setpoint {
        config.setpoint = SetpointSource::Series { values: values.clone() };
    }
    let schedule = sessions
        .iter()
        .enumerate()
        .map(|(id, &(slot, t_arr, t_dep, e_arr, e_target))| ScheduledSession {
            id,
            slot,
            t_arr,
            t_dep,
            e_arrival_kwh: e_arr,
            e_target_kwh: e_target,
            battery_age_days: 730.0,
            spec: spec.clone(),
        })
        .collect();
    Replay {
        format_version: REPLAY_FORMAT_VERSION,
        seed: 0,
        exogenous: Exogenous {
            charge_price: prices.clone(),
            discharge_price: prices,
            setpoint,
            transformers: vec![TransformerSeries::zeros(steps); config.transformers.len()],
        },
        config,
        schedule,
        dropped_arrivals: Vec::new(),
    }
}
