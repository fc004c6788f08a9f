//! Charging-station semantics: action decoding, per-EVSE dead-bands and
//! clipping, station-level current normalization, and cash flows.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::ev::ChargerType;

/// Currents below this distance from a dead-band edge are treated as on the
/// edge, so a plan sitting exactly on `min_charge_current_a` survives the
/// round trip through a normalized action.
pub const CURRENT_TOL_A: f64 = 1e-9;

/// Discharge currents are negative: `max_discharge_current_a` is the most
/// negative allowed value and `min_discharge_current_a` is the dead-band edge
/// closest to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargerSpec {
    pub min_station_current_a: f64,
    pub max_station_current_a: f64,
    pub min_charge_current_a: f64,
    pub max_charge_current_a: f64,
    pub min_discharge_current_a: f64,
    pub max_discharge_current_a: f64,
    pub voltage_v: f64,
    pub phases: u32,
    pub evse_count: usize,
    pub charger_type: ChargerType,
    pub transformer: usize,
}

impl ChargerSpec {
    pub fn validate(&self, index: usize) -> Result<()> {
        let field = |f: &str| format!("charging_station[{index}].{f}");
        if self.evse_count == 0 {
            return Err(SimError::config(field("evse_count"), "must be at least 1"));
        }
        if !(self.voltage_v > 0.0) {
            return Err(SimError::config(field("voltage_v"), "must be positive"));
        }
        if self.phases != 1 && self.phases != 3 {
            return Err(SimError::config(field("phases"), "must be 1 or 3"));
        }
        if !(0.0 <= self.min_charge_current_a && self.min_charge_current_a <= self.max_charge_current_a) {
            return Err(SimError::config(field("charge_current"), "need 0 <= min <= max"));
        }
        if !(self.max_discharge_current_a <= self.min_discharge_current_a && self.min_discharge_current_a <= 0.0) {
            return Err(SimError::config(field("discharge_current"), "need max <= min <= 0 (negative amperes)"));
        }
        if self.min_station_current_a > self.max_station_current_a {
            return Err(SimError::config(field("station_current"), "min exceeds max"));
        }
        Ok(())
    }

    pub fn can_discharge(&self) -> bool {
        self.max_discharge_current_a < 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionRange {
    pub low: f64,
    pub high: f64,
}

impl ActionRange {
    pub const CHARGE_ONLY: ActionRange = ActionRange { low: 0.0, high: 1.0 };
    pub const BIDIRECTIONAL: ActionRange = ActionRange { low: -1.0, high: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedAction {
    pub current_a: f64,
    pub clamped: bool,
}

/// Maps a normalized action onto an EVSE current. Positive actions scale the
/// maximum charge current, negative ones the maximum discharge current.
pub fn decode_action(action: f64, spec: &ChargerSpec, occupied: bool, range: ActionRange) -> DecodedAction {
    let a = if action.is_nan() { 0.0 } else { action };
    let bounded = a.clamp(range.low, range.high);
    let clamped = bounded != a || action.is_nan();
    if !occupied {
        return DecodedAction { current_a: 0.0, clamped };
    }
    let current_a = if bounded > 0.0 {
        bounded * spec.max_charge_current_a
    } else if bounded < 0.0 {
        -bounded * spec.max_discharge_current_a
    } else {
        0.0
    };
    DecodedAction { current_a, clamped }
}

/// Inverse of [`decode_action`] for an occupied slot.
pub fn encode_current(current_a: f64, spec: &ChargerSpec) -> f64 {
    if current_a > 0.0 && spec.max_charge_current_a > 0.0 {
        current_a / spec.max_charge_current_a
    } else if current_a < 0.0 && spec.max_discharge_current_a < 0.0 {
        -current_a / spec.max_discharge_current_a
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationOutcome {
    pub currents_a: Vec<f64>,
    pub dead_banded: usize,
    pub clipped: usize,
    /// Scale factor applied to the violating side, when normalization ran.
    pub scale: Option<f64>,
}

impl StationOutcome {
    pub fn total_current_a(&self) -> f64 {
        self.currents_a.iter().sum()
    }
}

fn dead_band(i: f64, spec: &ChargerSpec) -> f64 {
    if i > 0.0 && i < spec.min_charge_current_a - CURRENT_TOL_A {
        0.0
    } else if i < 0.0 && i > spec.min_discharge_current_a + CURRENT_TOL_A {
        0.0
    } else {
        i
    }
}

/// Dead-band, clip, then proportionally scale the side (charging or
/// discharging) that pushes the station total out of its bounds. Currents
/// pushed into the dead-band by scaling are zeroed without re-normalizing.
pub fn apply_station_limits(requested_a: &[f64], spec: &ChargerSpec) -> StationOutcome {
    let mut out = StationOutcome {
        currents_a: Vec::with_capacity(requested_a.len()),
        ..Default::default()
    };
    for &req in requested_a {
        let mut i = dead_band(req, spec);
        if i != req {
            out.dead_banded += 1;
        }
        if i > spec.max_charge_current_a {
            i = spec.max_charge_current_a;
            out.clipped += 1;
        } else if i < spec.max_discharge_current_a {
            i = spec.max_discharge_current_a;
            out.clipped += 1;
        }
        out.currents_a.push(i);
    }

    let pos: f64 = out.currents_a.iter().filter(|i| **i > 0.0).sum();
    let neg: f64 = out.currents_a.iter().filter(|i| **i < 0.0).sum();
    let total = pos + neg;
    let factor = if total > spec.max_station_current_a + CURRENT_TOL_A && pos > 0.0 {
        Some((true, ((spec.max_station_current_a - neg) / pos).clamp(0.0, 1.0)))
    } else if total < spec.min_station_current_a - CURRENT_TOL_A && neg < 0.0 {
        Some((false, ((spec.min_station_current_a - pos) / neg).clamp(0.0, 1.0)))
    } else {
        None
    };
    if let Some((charging_side, f)) = factor {
        out.scale = Some(f);
        for i in out.currents_a.iter_mut() {
            if (charging_side && *i > 0.0) || (!charging_side && *i < 0.0) {
                let scaled = *i * f;
                let banded = dead_band(scaled, spec);
                if banded != scaled {
                    out.dead_banded += 1;
                }
                *i = banded;
            }
        }
    }
    out
}

/// Cash flow of one EVSE over one step, in EUR. Charging costs `P * c_ch * dt`
/// (negative flow); discharging (negative `P`) earns `|P| * c_dis * dt`.
pub fn session_cashflow(power_kw: f64, dt_h: f64, charge_price: f64, discharge_price: f64) -> f64 {
    if power_kw >= 0.0 {
        -power_kw * charge_price * dt_h
    } else {
        -power_kw * discharge_price * dt_h
    }
}

/// Synthetic hourly day-ahead price curve (EUR/kWh), hour 0..23.
pub const DEFAULT_HOURLY_PRICE: [f64; 24] = [
    0.112, 0.104, 0.098, 0.095, 0.097, 0.108, 0.142, 0.198, 0.231, 0.205, 0.164, 0.131, 0.112, 0.104, 0.115,
    0.139, 0.176, 0.228, 0.276, 0.262, 0.214, 0.173, 0.146, 0.125,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec() -> ChargerSpec {
        ChargerSpec {
            min_station_current_a: -64.0,
            max_station_current_a: 32.0,
            min_charge_current_a: 6.0,
            max_charge_current_a: 32.0,
            min_discharge_current_a: -6.0,
            max_discharge_current_a: -32.0,
            voltage_v: 230.0,
            phases: 3,
            evse_count: 2,
            charger_type: ChargerType::Ac,
            transformer: 0,
        }
    }

    #[test]
    fn decode_endpoints() {
        let s = spec();
        let r = ActionRange::BIDIRECTIONAL;
        assert_eq!(decode_action(1.0, &s, true, r).current_a, 32.0);
        assert_eq!(decode_action(0.0, &s, true, r).current_a, 0.0);
        assert_eq!(decode_action(-1.0, &s, true, r).current_a, -32.0);
        assert_eq!(decode_action(0.7, &s, false, r).current_a, 0.0);
        let d = decode_action(-0.5, &s, true, ActionRange::CHARGE_ONLY);
        assert_eq!(d.current_a, 0.0);
        assert!(d.clamped);
        assert_relative_eq!(encode_current(decode_action(-0.3, &s, true, r).current_a, &s), -0.3);
    }

    #[test]
    fn dead_band_and_clip() {
        let s = spec();
        assert_eq!(apply_station_limits(&[2.0], &s).currents_a, vec![0.0]);
        assert_eq!(apply_station_limits(&[-3.0], &s).currents_a, vec![0.0]);
        assert_eq!(apply_station_limits(&[40.0], &s).currents_a, vec![32.0]);
    }

    #[test]
    fn proportional_normalization() {
        let s = spec();
        let out = apply_station_limits(&[24.0, 24.0], &s);
        assert_eq!(out.currents_a, vec![16.0, 16.0]);
        assert_eq!(out.scale, Some(32.0 / 48.0));
    }

    #[test]
    fn mixed_signs_scale_only_violating_side() {
        let s = spec();
        // 32 + 20 - 10 = 42 > 32: positive side scaled by (32 + 10) / 52
        let out = apply_station_limits(&[32.0, 20.0, -10.0], &s);
        assert_relative_eq!(out.currents_a[0], 32.0 * 42.0 / 52.0);
        assert_eq!(out.currents_a[2], -10.0);
        assert_relative_eq!(out.total_current_a(), 32.0, epsilon = 1e-9);
    }

    #[test]
    fn scaling_into_dead_band_zeroes_without_renormalizing() {
        let mut s = spec();
        s.max_station_current_a = 20.0;
        let out = apply_station_limits(&[30.0, 6.0], &s);
        // factor 20 / 36 -> [16.67, 3.33]; second falls in the dead-band
        assert_eq!(out.currents_a[1], 0.0);
        assert_relative_eq!(out.currents_a[0], 30.0 * 20.0 / 36.0);
    }

    #[test]
    fn cashflow_signs() {
        assert_eq!(session_cashflow(0.0, 0.25, 0.3, 0.3), 0.0);
        assert_relative_eq!(session_cashflow(10.0, 0.25, 0.3, 0.3), -0.75);
        assert_relative_eq!(session_cashflow(-10.0, 0.25, 0.3, 0.4), 1.0);
    }

    proptest! {
        #[test]
        fn limits_hold_and_are_idempotent(req in proptest::collection::vec(-50.0f64..50.0, 1..6)) {
            let mut s = spec();
            s.evse_count = req.len();
            let once = apply_station_limits(&req, &s);
            let total = once.total_current_a();
            prop_assert!(total <= s.max_station_current_a + 1e-6);
            prop_assert!(total >= s.min_station_current_a - 1e-6);
            for i in &once.currents_a {
                prop_assert!(*i == 0.0 || (*i >= s.min_charge_current_a - 1e-6 && *i <= s.max_charge_current_a)
                    || (*i <= s.min_discharge_current_a + 1e-6 && *i >= s.max_discharge_current_a));
            }
            let twice = apply_station_limits(&once.currents_a, &s);
            prop_assert_eq!(&once.currents_a, &twice.currents_a);
        }
    }
}
