//! Experiment configuration: the TOML file format and its validated,
//! self-contained form [`SimConfig`].

use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorModel, Scenario};
use crate::error::{Result, SimError};
use crate::ev::{ChargerType, DegradationParams, EvDefaults, EvRegistry};
use crate::grid::{DrEvent, ProfileSource, TransformerSpec};
use crate::series::TimeSeriesTable;
use crate::station::{ChargerSpec, DEFAULT_HOURLY_PRICE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Power setpoint tracking: departures and SoC are hidden from controllers.
    Pst,
    /// V2G profit maximization with known departures and targets.
    Profit,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Pst => "pst",
            Problem::Profit => "profit",
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pst" => Ok(Problem::Pst),
            "profit" => Ok(Problem::Profit),
            other => Err(SimError::config("problem", format!("unknown problem `{other}` (pst|profit)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub sigma_kw: f64,
    pub horizon: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            sigma_kw: 0.0,
            horizon: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Require departure targets in the tracking problem as well.
    pub pst_enforce_targets: bool,
    pub mpc_horizon: usize,
    pub node_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pst_enforce_targets: true,
            mpc_horizon: 25,
            node_limit: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSettings {
    /// Desired SoC at departure, before capping at what the stay allows.
    pub desired_soc: f64,
    pub battery_age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetpointSource {
    None,
    /// `chargers * kw_per_charger * shape_t * u`, where `shape_t` falls from 1
    /// at the cheapest hour to 0.5 at the most expensive and `u` is drawn once
    /// per run from `[low, high]`.
    Builtin { kw_per_charger: f64, low: f64, high: f64 },
    Series { values: Vec<f64> },
}

/// Fully resolved experiment definition; every data source is already read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub timescale_minutes: u32,
    pub sim_length: usize,
    pub start_datetime: NaiveDateTime,
    pub scenario: Scenario,
    pub problem: Problem,
    pub v2g_enabled: bool,
    pub seed: u64,
    pub chargers: Vec<ChargerSpec>,
    pub transformers: Vec<TransformerSpec>,
    pub registry: EvRegistry,
    pub ev: EvSettings,
    pub behavior: BehaviorModel,
    pub charge_price: Vec<f64>,
    pub discharge_price: Vec<f64>,
    pub setpoint: SetpointSource,
    pub forecast: ForecastConfig,
    pub degradation: DegradationParams,
    pub solver: SolverConfig,
}

impl SimConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::DataSource {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    /// Parses a TOML document; relative data paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("at byte {}", s.start)).unwrap_or_default();
            SimError::config(field, e.message().to_string())
        })?;
        file.resolve(base_dir)
    }

    pub fn dt_h(&self) -> f64 {
        f64::from(self.timescale_minutes) / 60.0
    }

    pub fn evse_count(&self) -> usize {
        self.chargers.iter().map(|c| c.evse_count).sum()
    }

    /// Charger index of every EVSE slot, in (charger, EVSE) order.
    pub fn slot_chargers(&self) -> Vec<usize> {
        self.chargers
            .iter()
            .enumerate()
            .flat_map(|(i, c)| std::iter::repeat_n(i, c.evse_count))
            .collect()
    }

    pub fn time_at(&self, step: usize) -> NaiveDateTime {
        self.start_datetime + Duration::minutes(i64::from(self.timescale_minutes) * step as i64)
    }

    pub fn hour_of_day(&self, step: usize) -> f64 {
        let t = self.time_at(step);
        f64::from(t.hour()) + f64::from(t.minute()) / 60.0
    }

    pub fn hour_of_week(&self, step: usize) -> usize {
        let t = self.time_at(step);
        t.weekday().num_days_from_monday() as usize * 24 + t.hour() as usize
    }

    pub fn day_index(&self, step: usize) -> i64 {
        (self.time_at(step).date() - self.start_datetime.date()).num_days()
    }

    pub fn has_setpoint(&self) -> bool {
        !matches!(self.setpoint, SetpointSource::None)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sim_length == 0 {
            return Err(SimError::config("simulation.sim_length", "must be at least 1"));
        }
        if self.timescale_minutes == 0 {
            return Err(SimError::config("simulation.timescale_minutes", "must be at least 1"));
        }
        if self.chargers.is_empty() {
            return Err(SimError::config("charging_station", "at least one charger is required"));
        }
        if self.transformers.is_empty() {
            return Err(SimError::config("transformer", "at least one transformer is required"));
        }
        for (i, c) in self.chargers.iter().enumerate() {
            c.validate(i)?;
            if c.transformer >= self.transformers.len() {
                return Err(SimError::config(
                    format!("charging_station[{i}].transformer"),
                    format!("references transformer {} but only {} exist", c.transformer, self.transformers.len()),
                ));
            }
        }
        for (i, t) in self.transformers.iter().enumerate() {
            t.validate(i, self.sim_length)?;
        }
        if self.registry.total_weight() == 0 {
            return Err(SimError::EmptyRegistry);
        }
        for s in &self.registry.specs {
            s.validate()?;
        }
        self.behavior.validate()?;
        if self.charge_price.len() < self.sim_length || self.discharge_price.len() < self.sim_length {
            return Err(SimError::config("prices", "price series shorter than the simulation"));
        }
        if !(0.0..=1.0).contains(&self.ev.desired_soc) {
            return Err(SimError::config("ev.desired_soc", "must lie in [0, 1]"));
        }
        if !(self.ev.battery_age_days > 0.0) {
            return Err(SimError::config("ev.battery_age_days", "must be positive"));
        }
        if self.forecast.sigma_kw < 0.0 || !self.forecast.sigma_kw.is_finite() {
            return Err(SimError::config("forecast.sigma_kw", "must be finite and non-negative"));
        }
        if self.forecast.horizon == 0 {
            return Err(SimError::config("forecast.horizon", "must be at least 1"));
        }
        match &self.setpoint {
            SetpointSource::Series { values } if values.len() < self.sim_length => {
                Err(SimError::config("setpoint", "series shorter than the simulation"))
            }
            SetpointSource::Builtin { low, high, .. } if !(0.0 <= *low && low <= high) => {
                Err(SimError::config("setpoint", "need 0 <= low <= high"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub simulation: SimulationSection,
    #[serde(default)]
    pub ev: EvSection,
    pub charging_station: StationGroup,
    #[serde(default)]
    pub transformer: Vec<TransformerSection>,
    #[serde(default)]
    pub behavior: BehaviorSection,
    #[serde(default)]
    pub prices: PriceSection,
    #[serde(default)]
    pub setpoint: SetpointSection,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub degradation: DegradationParams,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub timescale_minutes: u32,
    pub sim_length: usize,
    pub start_datetime: String,
    pub scenario: Scenario,
    pub problem: Problem,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub v2g_enabled: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvSection {
    /// `builtin` or a registry CSV path.
    pub registry: String,
    pub transition_soc: f64,
    pub min_soc: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub min_charge_kw: f64,
    pub min_discharge_kw: f64,
    pub desired_soc: f64,
    pub battery_age_days: f64,
}

impl Default for EvSection {
    fn default() -> Self {
        let d = EvDefaults::default();
        Self {
            registry: "builtin".into(),
            transition_soc: d.transition_soc,
            min_soc: d.min_soc,
            charge_efficiency: d.charge_efficiency,
            discharge_efficiency: d.discharge_efficiency,
            min_charge_kw: d.min_charge_kw,
            min_discharge_kw: d.min_discharge_kw,
            desired_soc: 1.0,
            battery_age_days: 730.0,
        }
    }
}

/// A group of identical chargers. The top-level `[charging_station]` table is
/// itself a group unless it lists explicit `stations`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationGroup {
    pub count: usize,
    pub evse_count: usize,
    pub min_station_current_a: Option<f64>,
    pub max_station_current_a: Option<f64>,
    pub min_charge_current_a: f64,
    pub max_charge_current_a: f64,
    pub min_discharge_current_a: f64,
    pub max_discharge_current_a: f64,
    pub voltage_v: f64,
    pub phases: u32,
    pub charger_type: ChargerType,
    pub transformer: Option<usize>,
    pub stations: Vec<StationGroup>,
}

impl Default for StationGroup {
    fn default() -> Self {
        Self {
            count: 1,
            evse_count: 1,
            min_station_current_a: None,
            max_station_current_a: None,
            min_charge_current_a: 0.0,
            max_charge_current_a: 32.0,
            min_discharge_current_a: 0.0,
            max_discharge_current_a: -32.0,
            voltage_v: 230.0,
            phases: 3,
            charger_type: ChargerType::Ac,
            transformer: None,
            stations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    pub max_power_kw: f64,
    pub min_power_kw: Option<f64>,
    /// `none`, `builtin`, or a CSV path.
    pub load: String,
    pub load_peak_kw: f64,
    pub load_noise: f64,
    pub pv: String,
    pub pv_peak_kw: f64,
    pub pv_noise: f64,
    pub dr_start_step: Option<usize>,
    pub dr_duration_steps: usize,
    pub dr_reduction_kw: f64,
    pub dr_notice_steps: usize,
}

impl Default for TransformerSection {
    fn default() -> Self {
        Self {
            max_power_kw: 1000.0,
            min_power_kw: None,
            load: "none".into(),
            load_peak_kw: 0.0,
            load_noise: 0.05,
            pv: "none".into(),
            pv_peak_kw: 0.0,
            pv_noise: 0.3,
            dr_start_step: None,
            dr_duration_steps: 0,
            dr_reduction_kw: 0.0,
            dr_notice_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSection {
    /// `builtin` (tables of the configured scenario) or a directory holding
    /// `arrivals.csv`, `stay.csv` and `soc.csv`.
    pub source: String,
}

impl Default for BehaviorSection {
    fn default() -> Self {
        Self { source: "builtin".into() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSection {
    /// `builtin` or a CSV path with charge and discharge columns.
    pub source: String,
    /// Builtin discharge price as a multiple of the charge price.
    pub discharge_factor: f64,
}

impl Default for PriceSection {
    fn default() -> Self {
        Self {
            source: "builtin".into(),
            discharge_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointSection {
    /// `none`, `builtin`, `constant`, or a CSV path.
    pub source: String,
    pub kw_per_charger: f64,
    pub low: f64,
    pub high: f64,
    pub constant_kw: f64,
}

impl Default for SetpointSection {
    fn default() -> Self {
        Self {
            source: "none".into(),
            kw_per_charger: 5.0,
            low: 0.8,
            high: 1.0,
            constant_kw: 0.0,
        }
    }
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

fn parse_start(s: &str) -> Result<NaiveDateTime> {
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| SimError::config("simulation.start_datetime", format!("cannot parse `{s}`")))
}

impl StationGroup {
    fn expand(&self, v2g: bool, index: &mut usize, n_transformers: usize, out: &mut Vec<ChargerSpec>) {
        for _ in 0..self.count {
            let n = self.evse_count as f64;
            let (min_dis, max_dis) = if v2g {
                (self.min_discharge_current_a, self.max_discharge_current_a)
            } else {
                (0.0, 0.0)
            };
            out.push(ChargerSpec {
                min_station_current_a: self.min_station_current_a.unwrap_or(n * max_dis),
                max_station_current_a: self.max_station_current_a.unwrap_or(n * self.max_charge_current_a),
                min_charge_current_a: self.min_charge_current_a,
                max_charge_current_a: self.max_charge_current_a,
                min_discharge_current_a: min_dis,
                max_discharge_current_a: max_dis,
                voltage_v: self.voltage_v,
                phases: self.phases,
                evse_count: self.evse_count,
                charger_type: self.charger_type,
                transformer: self.transformer.unwrap_or(*index % n_transformers.max(1)),
            });
            *index += 1;
        }
    }
}

fn profile(
    kind: &str,
    peak_kw: f64,
    noise: f64,
    base: &Path,
    what: &str,
    sim: &SimulationSection,
    start: NaiveDateTime,
) -> Result<ProfileSource> {
    Ok(match kind {
        "none" => ProfileSource::None,
        "builtin" => ProfileSource::Builtin { peak_kw, noise },
        path => {
            let table = TimeSeriesTable::from_path(&resolve_path(base, path), what)?;
            ProfileSource::Series {
                values: table.resample(0, start, sim.timescale_minutes, sim.sim_length),
            }
        }
    })
}

impl ConfigFile {
    pub fn resolve(self, base: &Path) -> Result<SimConfig> {
        let sim = &self.simulation;
        let start = parse_start(&sim.start_datetime)?;
        let defaults = EvDefaults {
            transition_soc: self.ev.transition_soc,
            min_soc: self.ev.min_soc,
            charge_efficiency: self.ev.charge_efficiency,
            discharge_efficiency: self.ev.discharge_efficiency,
            min_charge_kw: self.ev.min_charge_kw,
            min_discharge_kw: self.ev.min_discharge_kw,
        };
        let registry = if self.ev.registry == "builtin" {
            EvRegistry::builtin(&defaults)
        } else {
            let path = resolve_path(base, &self.ev.registry);
            let file = std::fs::File::open(&path).map_err(|source| SimError::DataSource { path, source })?;
            EvRegistry::from_csv(file, &defaults)?
        };

        let transformers_in = if self.transformer.is_empty() {
            vec![TransformerSection::default()]
        } else {
            self.transformer.clone()
        };
        let mut chargers = Vec::new();
        let mut index = 0;
        if self.charging_station.stations.is_empty() {
            self.charging_station
                .expand(sim.v2g_enabled, &mut index, transformers_in.len(), &mut chargers);
        } else {
            for g in &self.charging_station.stations {
                if !g.stations.is_empty() {
                    return Err(SimError::config("charging_station.stations", "groups cannot nest"));
                }
                g.expand(sim.v2g_enabled, &mut index, transformers_in.len(), &mut chargers);
            }
        }

        let mut transformers = Vec::with_capacity(transformers_in.len());
        for (i, t) in transformers_in.iter().enumerate() {
            let dr = t.dr_start_step.map(|start_step| DrEvent {
                start_step,
                duration_steps: t.dr_duration_steps,
                reduction_kw: t.dr_reduction_kw,
            });
            transformers.push(TransformerSpec {
                max_power_kw: t.max_power_kw,
                min_power_kw: t.min_power_kw.unwrap_or(-t.max_power_kw),
                load: profile(&t.load, t.load_peak_kw, t.load_noise, base, &format!("transformer[{i}].load"), sim, start)?,
                pv: profile(&t.pv, t.pv_peak_kw, t.pv_noise, base, &format!("transformer[{i}].pv"), sim, start)?,
                dr,
                dr_notice_steps: t.dr_notice_steps,
            });
        }

        let behavior = if self.behavior.source == "builtin" {
            if sim.scenario == Scenario::Custom {
                return Err(SimError::config("behavior.source", "custom scenario needs a behavior directory"));
            }
            BehaviorModel::builtin(sim.scenario)
        } else {
            BehaviorModel::from_csv_dir(&resolve_path(base, &self.behavior.source), sim.scenario)?
        };

        let step_time = |t: usize| start + Duration::minutes(i64::from(sim.timescale_minutes) * t as i64);
        let (charge_price, discharge_price) = if self.prices.source == "builtin" {
            let c: Vec<f64> = (0..sim.sim_length)
                .map(|t| DEFAULT_HOURLY_PRICE[step_time(t).hour() as usize])
                .collect();
            let d = c.iter().map(|p| p * self.prices.discharge_factor).collect();
            (c, d)
        } else {
            let table = TimeSeriesTable::from_path(&resolve_path(base, &self.prices.source), "prices")?;
            if table.columns.len() < 2 {
                return Err(SimError::malformed("prices", 0, table.columns.len() + 1, "need charge and discharge columns"));
            }
            (
                table.resample(0, start, sim.timescale_minutes, sim.sim_length),
                table.resample(1, start, sim.timescale_minutes, sim.sim_length),
            )
        };

        let sp = &self.setpoint;
        let setpoint = match sp.source.as_str() {
            "none" => SetpointSource::None,
            "builtin" => SetpointSource::Builtin {
                kw_per_charger: sp.kw_per_charger,
                low: sp.low,
                high: sp.high,
            },
            "constant" => SetpointSource::Series {
                values: vec![sp.constant_kw; sim.sim_length],
            },
            path => {
                let table = TimeSeriesTable::from_path(&resolve_path(base, path), "setpoint")?;
                SetpointSource::Series {
                    values: table.resample(0, start, sim.timescale_minutes, sim.sim_length),
                }
            }
        };

        let config = SimConfig {
            timescale_minutes: sim.timescale_minutes,
            sim_length: sim.sim_length,
            start_datetime: start,
            scenario: sim.scenario,
            problem: sim.problem,
            v2g_enabled: sim.v2g_enabled,
            seed: sim.seed,
            chargers,
            transformers,
            registry,
            ev: EvSettings {
                desired_soc: self.ev.desired_soc,
                battery_age_days: self.ev.battery_age_days,
            },
            behavior,
            charge_price,
            discharge_price,
            setpoint,
            forecast: self.forecast,
            degradation: self.degradation,
            solver: self.solver,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[simulation]
timescale_minutes = 15
sim_length = 85
start_datetime = "2024-03-04T05:00:00"
scenario = "public"
problem = "pst"

[charging_station]
count = 3
"#;

    #[test]
    fn minimal_config_resolves() {
        let c = SimConfig::from_toml_str(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.chargers.len(), 3);
        assert_eq!(c.transformers.len(), 1);
        assert_eq!(c.evse_count(), 3);
        assert_eq!(c.sim_length as f64 * c.dt_h(), 21.25);
        assert_eq!(c.chargers[0].max_discharge_current_a, 0.0);
        assert_eq!(c.charge_price[0], DEFAULT_HOURLY_PRICE[5]);
        assert_eq!(c.charge_price[4], DEFAULT_HOURLY_PRICE[6]);
        assert_eq!(c.hour_of_week(0), 5);
    }

    #[test]
    fn zero_chargers_rejected() {
        let text = MINIMAL.replace("count = 3", "count = 0");
        let err = SimConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(matches!(err, SimError::InvalidConfig { ref field, .. } if field == "charging_station"), "{err}");
    }

    #[test]
    fn dangling_transformer_rejected() {
        let text = format!("{MINIMAL}transformer = 2\n");
        let err = SimConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("charging_station[0].transformer"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("count = 3", "count = 3\nbogus = 1");
        assert!(SimConfig::from_toml_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn missing_data_file_is_reported() {
        let text = format!("{MINIMAL}\n[prices]\nsource = \"nope.csv\"\n");
        let err = SimConfig::from_toml_str(&text, Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, SimError::DataSource { .. }), "{err}");
    }
}
