//! Transformers: aggregation of EV power with inflexible load and PV,
//! overload accounting, demand-response events, and noisy forecasts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Where a transformer's inflexible-load or PV series comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    #[default]
    None,
    /// Synthetic daily profile scaled to `peak_kw`. `noise` is the relative
    /// standard deviation of per-step multiplicative noise (load) or the
    /// spread of the daily cloud factor (PV).
    Builtin { peak_kw: f64, noise: f64 },
    /// Realized values per step, already resampled onto the simulation grid.
    Series { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrEvent {
    pub start_step: usize,
    pub duration_steps: usize,
    pub reduction_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub max_power_kw: f64,
    pub min_power_kw: f64,
    #[serde(default)]
    pub load: ProfileSource,
    /// Generation; stored as negative power once realized.
    #[serde(default)]
    pub pv: ProfileSource,
    #[serde(default)]
    pub dr: Option<DrEvent>,
    pub dr_notice_steps: usize,
}

impl TransformerSpec {
    pub fn validate(&self, index: usize, horizon: usize) -> Result<()> {
        let field = |f: &str| format!("transformer[{index}].{f}");
        if !(self.min_power_kw < self.max_power_kw) {
            return Err(SimError::config(field("power"), "min_power_kw must be below max_power_kw"));
        }
        for (name, src) in [("load", &self.load), ("pv", &self.pv)] {
            match src {
                ProfileSource::Builtin { peak_kw, noise } if *peak_kw < 0.0 || *noise < 0.0 => {
                    return Err(SimError::config(field(name), "peak_kw and noise must be non-negative"));
                }
                ProfileSource::Series { values } if values.len() < horizon => {
                    return Err(SimError::config(field(name), format!("series has {} steps, need {horizon}", values.len())));
                }
                _ => {}
            }
        }
        if let Some(dr) = &self.dr {
            if dr.reduction_kw < 0.0 {
                return Err(SimError::config(field("dr.reduction_kw"), "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Realized per-step series of one transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSeries {
    pub load_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    pub dr_kw: Vec<f64>,
}

impl TransformerSeries {
    pub fn zeros(len: usize) -> Self {
        Self {
            load_kw: vec![0.0; len],
            pv_kw: vec![0.0; len],
            dr_kw: vec![0.0; len],
        }
    }

    /// Inflexible net load (load plus negative PV) at `step`.
    pub fn inflexible_kw(&self, step: usize) -> f64 {
        self.load_kw[step] + self.pv_kw[step]
    }

    pub fn len(&self) -> usize {
        self.load_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_kw.is_empty()
    }
}

pub fn transformer_net_power(series: &TransformerSeries, step: usize, ev_kw: f64) -> f64 {
    ev_kw + series.load_kw[step] + series.pv_kw[step]
}

/// Usable upper limit at `step`, after demand response.
pub fn upper_limit(spec: &TransformerSpec, series: &TransformerSeries, step: usize) -> f64 {
    spec.max_power_kw - series.dr_kw[step]
}

pub fn overload_at(spec: &TransformerSpec, series: &TransformerSeries, step: usize, net_kw: f64) -> f64 {
    (net_kw - upper_limit(spec, series, step)).max(0.0)
}

/// Violation of the lower limit (reverse flow beyond `min_power_kw`).
pub fn undershoot_at(spec: &TransformerSpec, net_kw: f64) -> f64 {
    (spec.min_power_kw - net_kw).max(0.0)
}

/// Normalized synthetic household/commercial load shape with morning and
/// evening peaks; `hour` is fractional hour of day.
pub fn load_shape(hour: f64) -> f64 {
    let bump = |mu: f64, sd: f64| (-0.5 * ((hour - mu) / sd).powi(2)).exp();
    (0.35 + 0.4 * bump(8.5, 1.5) + 0.65 * bump(18.5, 2.0) + 0.25 * bump(13.0, 2.5)).min(1.0)
}

/// Normalized clear-sky PV shape, zero outside 06:00-20:00.
pub fn pv_shape(hour: f64) -> f64 {
    if !(6.0..=20.0).contains(&hour) {
        return 0.0;
    }
    (std::f64::consts::PI * (hour - 6.0) / 14.0).sin().powi(2)
}

/// Builds the realized series of one transformer. Synthetic profiles draw
/// from `rng` (the loads stream); `hour_of_day(step)` maps steps to time.
pub fn realize_series<R: Rng>(
    spec: &TransformerSpec,
    len: usize,
    hour_of_day: impl Fn(usize) -> f64,
    day_index: impl Fn(usize) -> i64,
    rng: &mut R,
) -> TransformerSeries {
    let mut out = TransformerSeries::zeros(len);
    match &spec.load {
        ProfileSource::None => {}
        ProfileSource::Builtin { peak_kw, noise } => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for t in 0..len {
                let eps: f64 = normal.sample(rng);
                out.load_kw[t] = (peak_kw * load_shape(hour_of_day(t)) * (1.0 + noise * eps)).max(0.0);
            }
        }
        ProfileSource::Series { values } => out.load_kw.copy_from_slice(&values[..len]),
    }
    match &spec.pv {
        ProfileSource::None => {}
        ProfileSource::Builtin { peak_kw, noise } => {
            let mut day = i64::MIN;
            let mut cloud = 1.0;
            for t in 0..len {
                if day_index(t) != day {
                    day = day_index(t);
                    cloud = (1.0 - noise * rng.random::<f64>()).max(0.0);
                }
                out.pv_kw[t] = -peak_kw * cloud * pv_shape(hour_of_day(t));
            }
        }
        ProfileSource::Series { values } => {
            for t in 0..len {
                out.pv_kw[t] = -values[t].abs();
            }
        }
    }
    if let Some(dr) = &spec.dr {
        let end = (dr.start_step + dr.duration_steps).min(len);
        for v in out.dr_kw.iter_mut().take(end).skip(dr.start_step) {
            *v = dr.reduction_kw;
        }
    }
    out
}

/// Reads `series[i]`, repeating the last value past the end.
pub fn padded(series: &[f64], i: usize) -> f64 {
    series.get(i).or(series.last()).copied().unwrap_or(0.0)
}

/// `h` forecasts of `series` starting at `step`; entry k is drawn from
/// Normal(actual, sigma). `sigma = 0` returns the truth and draws nothing.
pub fn forecast<R: Rng>(series: &[f64], step: usize, h: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return (0..h).map(|k| padded(series, step + k)).collect();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    (0..h).map(|k| padded(series, step + k) + normal.sample(rng)).collect()
}

/// Demand-response reductions as the controller sees them at `step`: exact up
/// to `notice` steps ahead, zero beyond.
pub fn visible_dr(dr_kw: &[f64], step: usize, h: usize, notice: usize) -> Vec<f64> {
    (0..h)
        .map(|k| if k <= notice { dr_kw.get(step + k).copied().unwrap_or(0.0) } else { 0.0 })
        .collect()
}
