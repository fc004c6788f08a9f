//! Stochastic EV sessions: arrival counts per step, stay durations and
//! arrival SoC conditioned on the arrival hour, and sales-weighted models.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::ev::{EvRegistry, EvSpec};

pub const HOURS_PER_WEEK: usize = 168;
/// One-hour stay bins covering 0-24 h.
pub const STAY_BINS: usize = 24;
/// SoC bins of width 0.1.
pub const SOC_BINS: usize = 10;

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Public,
    Workplace,
    Residential,
    Custom,
}

impl Scenario {
    pub const BUILTIN: [Scenario; 3] = [Scenario::Public, Scenario::Workplace, Scenario::Residential];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Public => "public",
            Scenario::Workplace => "workplace",
            Scenario::Residential => "residential",
            Scenario::Custom => "custom",
        }
    }
}

/// Binned EV behavior tables.
///
/// `arrival_rate[h]` is the expected number of arrivals per EVSE per hour in
/// hour-of-week `h` (Monday 00:00 = 0). `stay[h]` and `soc[h]` are histograms
/// conditioned on the arrival hour of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub scenario: Scenario,
    pub arrival_rate: Vec<f64>,
    pub stay: Vec<Vec<f64>>,
    pub soc: Vec<Vec<f64>>,
}

/// One sampled arrival, before it is bound to an EV session.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalDraw {
    pub slot: usize,
    pub spec_index: usize,
    pub stay_bin: usize,
    pub stay_steps: usize,
    pub soc_bin: usize,
    pub soc: f64,
}

fn bump(x: f64, mu: f64, sd: f64) -> f64 {
    (-0.5 * ((x - mu) / sd).powi(2)).exp()
}

fn normalized(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

fn gaussian_bins(n: usize, width: f64, mu: f64, sd: f64, skip_first: usize) -> Vec<f64> {
    normalized(
        (0..n)
            .map(|k| if k < skip_first { 0.0 } else { bump((k as f64 + 0.5) * width, mu, sd) })
            .collect(),
    )
}

fn workplace_open(hour: usize) -> bool {
    (5..19).contains(&hour)
}

impl BehaviorModel {
    pub fn builtin(scenario: Scenario) -> Self {
        let arrival_rate = (0..HOURS_PER_WEEK)
            .map(|how| {
                let hour = how % 24;
                let x = hour as f64 + 0.5;
                let weekend = how / 24 >= 5;
                match scenario {
                    Scenario::Public | Scenario::Custom => {
                        let r = 0.02 + 0.16 * bump(x, 9.0, 1.5) + 0.12 * bump(x, 13.0, 2.0) + 0.15 * bump(x, 18.0, 1.5);
                        if weekend {
                            0.7 * (0.02 + 0.2 * bump(x, 13.0, 3.0))
                        } else if hour < 6 {
                            r * 0.5
                        } else {
                            r
                        }
                    }
                    Scenario::Workplace => {
                        if !workplace_open(hour) {
                            0.0
                        } else {
                            let r = 0.03 + 0.45 * bump(x, 8.0, 1.2) + 0.08 * bump(x, 13.0, 1.5);
                            if weekend {
                                0.2 * r
                            } else {
                                r
                            }
                        }
                    }
                    Scenario::Residential => {
                        let r = 0.01 + 0.22 * bump(x, 18.5, 2.0) + 0.03 * bump(x, 12.0, 3.0);
                        if weekend {
                            0.8 * r + 0.03
                        } else {
                            r
                        }
                    }
                }
            })
            .collect();

        let stay = (0..24)
            .map(|hour| {
                let x = hour as f64;
                match scenario {
                    Scenario::Public | Scenario::Custom => {
                        let (mu, sd) = if !(5..18).contains(&hour) { (7.0, 3.0) } else { (2.5, 1.5) };
                        gaussian_bins(STAY_BINS, 1.0, mu, sd, 0)
                    }
                    Scenario::Workplace => {
                        if workplace_open(hour) {
                            gaussian_bins(STAY_BINS, 1.0, (17.5 - x).max(1.5), 1.5, 0)
                        } else {
                            let mut row = vec![0.0; STAY_BINS];
                            row[0] = 1.0;
                            row
                        }
                    }
                    Scenario::Residential => {
                        let mu = if hour >= 15 { 31.0 - x } else if hour < 5 { 7.0 - x } else { 3.0 };
                        gaussian_bins(STAY_BINS, 1.0, mu.max(1.5), 2.0, 0)
                    }
                }
            })
            .collect();

        let soc = (0..24)
            .map(|hour| {
                let mu = match scenario {
                    Scenario::Public | Scenario::Custom => 0.45,
                    Scenario::Workplace => 0.55 - 0.01 * (hour as f64 - 8.0).max(0.0),
                    Scenario::Residential => {
                        if hour >= 15 {
                            0.35
                        } else {
                            0.5
                        }
                    }
                };
                gaussian_bins(SOC_BINS, 0.1, mu, 0.15, 1)
            })
            .collect();

        Self {
            scenario,
            arrival_rate,
            stay,
            soc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arrival_rate.len() != HOURS_PER_WEEK {
            return Err(SimError::config("behavior.arrival_rate", format!("need {HOURS_PER_WEEK} hour-of-week rows")));
        }
        if self.arrival_rate.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(SimError::config("behavior.arrival_rate", "rates must be finite and non-negative"));
        }
        for (name, table, bins) in [("stay", &self.stay, STAY_BINS), ("soc", &self.soc, SOC_BINS)] {
            if table.len() != 24 || table.iter().any(|r| r.len() != bins) {
                return Err(SimError::config(format!("behavior.{name}"), format!("need 24 rows of {bins} bins")));
            }
            for (h, row) in table.iter().enumerate() {
                let s: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > NORM_TOL {
                    return Err(SimError::config(format!("behavior.{name}[{h}]"), "row must be a probability distribution"));
                }
            }
        }
        Ok(())
    }

    /// Number of arrivals in one step of `dt_h` hours across `evse_count`
    /// EVSEs, before truncation to free slots.
    pub fn sample_count<R: Rng>(&self, hour_of_week: usize, evse_count: usize, dt_h: f64, rng: &mut R) -> usize {
        let lambda = self.arrival_rate[hour_of_week % HOURS_PER_WEEK] * evse_count as f64 * dt_h;
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("positive finite rate").sample(rng) as usize
    }

    /// Stay bin and duration in steps, at least one step.
    pub fn sample_stay<R: Rng>(&self, hour_of_day: usize, dt_minutes: u32, rng: &mut R) -> (usize, usize) {
        let bin = WeightedIndex::new(&self.stay[hour_of_day])
            .expect("validated histogram")
            .sample(rng);
        let hours = bin as f64 + rng.random::<f64>();
        let steps = (hours * 60.0 / f64::from(dt_minutes)).floor() as usize;
        (bin, steps.max(1))
    }

    pub fn sample_soc<R: Rng>(&self, hour_of_day: usize, rng: &mut R) -> (usize, f64) {
        let bin = WeightedIndex::new(&self.soc[hour_of_day])
            .expect("validated histogram")
            .sample(rng);
        (bin, (bin as f64 + rng.random::<f64>()) / SOC_BINS as f64)
    }

    /// Samples the sessions arriving at a step. Counts are Poisson and
    /// truncated to `free_slots`; each arrival takes a uniformly random free
    /// slot. Returns the draws and the number of arrivals dropped.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_arrivals<R: Rng, S: Rng>(
        &self,
        hour_of_week: usize,
        free_slots: &[usize],
        evse_count: usize,
        dt_minutes: u32,
        registry: &EvRegistry,
        arrivals_rng: &mut R,
        specs_rng: &mut S,
    ) -> Result<(Vec<ArrivalDraw>, usize)> {
        let dt_h = f64::from(dt_minutes) / 60.0;
        let n = self.sample_count(hour_of_week, evse_count, dt_h, arrivals_rng);
        let accepted = n.min(free_slots.len());
        let mut free = free_slots.to_vec();
        let hour = hour_of_week % 24;
        let mut out = Vec::with_capacity(accepted);
        for _ in 0..accepted {
            let slot = free.swap_remove(arrivals_rng.random_range(0..free.len()));
            let (stay_bin, stay_steps) = self.sample_stay(hour, dt_minutes, arrivals_rng);
            let (soc_bin, soc) = self.sample_soc(hour, arrivals_rng);
            let spec_index = sample_spec_index(registry, specs_rng)?;
            out.push(ArrivalDraw {
                slot,
                spec_index,
                stay_bin,
                stay_steps,
                soc_bin,
                soc,
            });
        }
        Ok((out, n - accepted))
    }

    pub fn from_csv_dir(dir: &Path, scenario: Scenario) -> Result<Self> {
        let open = |name: &str| {
            let path = dir.join(name);
            std::fs::File::open(&path).map_err(|source| SimError::DataSource { path, source })
        };
        Self::from_readers(open("arrivals.csv")?, open("stay.csv")?, open("soc.csv")?, scenario)
    }

    /// Reads the three tables. Histogram rows that do not already sum to 1 are
    /// renormalized.
    pub fn from_readers<A: Read, B: Read, C: Read>(arrivals: A, stay: B, soc: C, scenario: Scenario) -> Result<Self> {
        let rates = read_table(arrivals, "arrivals.csv", HOURS_PER_WEEK, 1)?
            .into_iter()
            .map(|r| r[0])
            .collect();
        let stay = normalize_rows(read_table(stay, "stay.csv", 24, STAY_BINS)?, "stay.csv")?;
        let soc = normalize_rows(read_table(soc, "soc.csv", 24, SOC_BINS)?, "soc.csv")?;
        let model = Self {
            scenario,
            arrival_rate: rates,
            stay,
            soc,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(
            std::fs::File::create(dir.join("arrivals.csv"))?,
            std::fs::File::create(dir.join("stay.csv"))?,
            std::fs::File::create(dir.join("soc.csv"))?,
        )
    }

    pub fn write_csv<A: Write, B: Write, C: Write>(&self, arrivals: A, stay: B, soc: C) -> Result<()> {
        let mut w = csv::Writer::from_writer(arrivals);
        w.write_record(["hour_of_week", "rate_per_evse_per_hour"])?;
        for (h, r) in self.arrival_rate.iter().enumerate() {
            w.write_record([h.to_string(), format!("{r:?}")])?;
        }
        w.flush()?;
        write_hist(stay, &self.stay, 1.0)?;
        write_hist(soc, &self.soc, 0.1)?;
        Ok(())
    }
}

fn bin_label(k: usize, width: f64) -> String {
    if width == 1.0 {
        format!("{}-{}", k, k + 1)
    } else {
        format!("{:.1}-{:.1}", k as f64 * width, (k + 1) as f64 * width)
    }
}

fn write_hist<W: Write>(writer: W, table: &[Vec<f64>], width: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["hour".to_string()];
    header.extend((0..table[0].len()).map(|k| bin_label(k, width)));
    w.write_record(&header)?;
    for (h, row) in table.iter().enumerate() {
        let mut rec = vec![h.to_string()];
        rec.extend(row.iter().map(|p| format!("{p:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<R: Read>(reader: R, what: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let width = rdr.headers()?.len();
    if width != cols + 1 {
        return Err(SimError::malformed(what, 0, width, format!("expected {} columns", cols + 1)));
    }
    let mut out = Vec::with_capacity(rows);
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let key: usize = rec[0]
            .parse()
            .map_err(|_| SimError::malformed(what, row, 0, "index must be a non-negative integer"))?;
        if key != r {
            return Err(SimError::malformed(what, row, 0, format!("expected index {r}, found {key}")));
        }
        let mut vals = Vec::with_capacity(cols);
        for c in 1..=cols {
            let v: f64 = rec
                .get(c)
                .ok_or_else(|| SimError::malformed(what, row, c, "missing field"))?
                .parse()
                .map_err(|_| SimError::malformed(what, row, c, "not a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::malformed(what, row, c, "values must be finite and non-negative"));
            }
            vals.push(v);
        }
        out.push(vals);
    }
    if out.len() != rows {
        return Err(SimError::malformed(what, out.len(), 0, format!("expected {rows} rows, found {}", out.len())));
    }
    Ok(out)
}

fn normalize_rows(table: Vec<Vec<f64>>, what: &str) -> Result<Vec<Vec<f64>>> {
    table
        .into_iter()
        .enumerate()
        .map(|(h, row)| {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                Err(SimError::malformed(what, h + 1, 1, "row sums to zero"))
            } else if (sum - 1.0).abs() <= NORM_TOL {
                Ok(row)
            } else {
                Ok(normalized(row))
            }
        })
        .collect()
}

/// Draws a registry index with probability proportional to sales.
pub fn sample_spec_index<R: Rng>(registry: &EvRegistry, rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(registry.specs.iter().map(|s| s.sales_weight)).map_err(|_| SimError::EmptyRegistry)?;
    Ok(dist.sample(rng))
}

pub fn sample_spec<'a, R: Rng>(registry: &'a EvRegistry, rng: &mut R) -> Result<&'a EvSpec> {
    Ok(&registry.specs[sample_spec_index(registry, rng)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ev::EvDefaults;
    use crate::rng::{stream, Stream};

    #[test]
    fn builtin_models_validate() {
        for s in Scenario::BUILTIN {
            BehaviorModel::builtin(s).validate().unwrap();
        }
    }

    #[test]
    fn workplace_closed_at_night() {
        let m = BehaviorModel::builtin(Scenario::Workplace);
        let mut rng = stream(1, Stream::Arrivals);
        for day in 0..7 {
            for hour in (19..24).chain(0..5) {
                assert_eq!(m.arrival_rate[day * 24 + hour], 0.0);
                assert_eq!(m.sample_count(day * 24 + hour, 1000, 1.0, &mut rng), 0);
            }
        }
    }

    #[test]
    fn no_free_slots_no_arrivals() {
        let m = BehaviorModel::builtin(Scenario::Public);
        let reg = EvRegistry::builtin(&EvDefaults::default());
        let mut a = stream(1, Stream::Arrivals);
        let mut s = stream(1, Stream::Specs);
        let (draws, _) = m.sample_arrivals(9, &[], 50, 15, &reg, &mut a, &mut s).unwrap();
        assert!(draws.is_empty());
    }

    #[test]
    fn csv_round_trip_and_normalization() {
        let m = BehaviorModel::builtin(Scenario::Residential);
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        m.write_csv(&mut a, &mut b, &mut c).unwrap();
        let back = BehaviorModel::from_readers(&a[..], &b[..], &c[..], Scenario::Residential).unwrap();
        assert_eq!(back.arrival_rate, m.arrival_rate);
        for (x, y) in back.stay.iter().flatten().zip(m.stay.iter().flatten()) {
            assert!((x - y).abs() < 1e-15);
        }

        let doubled = String::from_utf8(c.clone())
            .unwrap()
            .lines()
            .enumerate()
            .map(|(i, line)| {
                if i == 1 {
                    let mut f: Vec<String> = line.split(',').map(str::to_string).collect();
                    for v in f.iter_mut().skip(1) {
                        *v = (v.parse::<f64>().unwrap() * 2.0).to_string();
                    }
                    f.join(",")
                } else {
                    line.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        let renorm = BehaviorModel::from_readers(&a[..], &b[..], doubled.as_bytes(), Scenario::Residential).unwrap();
        assert!((renorm.soc[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_cell_is_rejected_with_location() {
        let m = BehaviorModel::builtin(Scenario::Public);
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        m.write_csv(&mut a, &mut b, &mut c).unwrap();
        let bad = String::from_utf8(c).unwrap().replacen(",0.0,", ",-0.5,", 1);
        let err = BehaviorModel::from_readers(&a[..], &b[..], bad.as_bytes(), Scenario::Public).unwrap_err();
        assert!(matches!(err, SimError::MalformedData { row: 1, column: 1, .. }), "{err}");
    }

    #[test]
    fn spec_sampling_edge_cases() {
        let mut reg = EvRegistry::builtin(&EvDefaults::default());
        let mut rng = stream(9, Stream::Specs);
        reg.specs.truncate(2);
        reg.specs[1].sales_weight = 0;
        for _ in 0..100 {
            assert_eq!(sample_spec_index(&reg, &mut rng).unwrap(), 0);
        }
        reg.specs[0].sales_weight = 0;
        assert!(matches!(sample_spec(&reg, &mut rng), Err(SimError::EmptyRegistry)));
    }

    #[test]
    fn stays_are_at_least_one_step() {
        let m = BehaviorModel::builtin(Scenario::Workplace);
        let mut rng = stream(2, Stream::Arrivals);
        for _ in 0..1000 {
            let (bin, steps) = m.sample_stay(22, 15, &mut rng);
            assert_eq!(bin, 0);
            assert!(steps >= 1);
        }
    }
}
