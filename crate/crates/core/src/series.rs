//! Time-series CSV ingestion keyed either by step index or by timestamp.

use std::path::Path;

use chrono::NaiveDateTime;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq)]
enum Key {
    Step(usize),
    Time(NaiveDateTime),
}

/// Rows of `(key, values...)` read from a CSV with a header line.
#[derive(Debug, Clone)]
pub struct TimeSeriesTable {
    keys: Vec<Key>,
    pub columns: Vec<String>,
    values: Vec<Vec<f64>>,
}

const TIME_FORMATS: [&str; 3] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"];

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

impl TimeSeriesTable {
    pub fn from_path(path: &Path, what: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| SimError::DataSource {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file, what)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, what: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(SimError::malformed(what, 0, header.len(), "need a key column and at least one value column"));
        }
        let columns = header.iter().skip(1).map(str::to_string).collect::<Vec<_>>();
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            if rec.len() != header.len() {
                return Err(SimError::malformed(what, row, rec.len(), "wrong number of fields"));
            }
            let raw = &rec[0];
            let key = if let Ok(step) = raw.parse::<usize>() {
                Key::Step(step)
            } else if let Some(ts) = parse_time(raw) {
                Key::Time(ts)
            } else {
                return Err(SimError::malformed(what, row, 0, format!("`{raw}` is neither a step nor a timestamp")));
            };
            if let Some(prev) = keys.last() {
                let ordered = match (prev, &key) {
                    (Key::Step(a), Key::Step(b)) => a < b,
                    (Key::Time(a), Key::Time(b)) => a < b,
                    _ => return Err(SimError::malformed(what, row, 0, "mixed step and timestamp keys")),
                };
                if !ordered {
                    return Err(SimError::malformed(what, row, 0, "keys must be strictly increasing"));
                }
            }
            let mut vals = Vec::with_capacity(columns.len());
            for c in 1..rec.len() {
                let v: f64 = rec[c]
                    .parse()
                    .map_err(|_| SimError::malformed(what, row, c, format!("`{}` is not a number", &rec[c])))?;
                if !v.is_finite() {
                    return Err(SimError::malformed(what, row, c, "value must be finite"));
                }
                vals.push(v);
            }
            keys.push(key);
            values.push(vals);
        }
        if keys.is_empty() {
            return Err(SimError::malformed(what, 0, 0, "no data rows"));
        }
        Ok(Self { keys, columns, values })
    }

    /// Samples column `col` on the simulation grid. Each step takes the last
    /// row at or before it (the first row for steps before the table starts).
    pub fn resample(&self, col: usize, start: NaiveDateTime, dt_minutes: u32, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let mut idx = 0;
        for t in 0..len {
            let at = |k: &Key| match k {
                Key::Step(s) => *s <= t,
                Key::Time(ts) => *ts <= start + chrono::Duration::minutes(i64::from(dt_minutes) * t as i64),
            };
            while idx + 1 < self.keys.len() && at(&self.keys[idx + 1]) {
                idx += 1;
            }
            out.push(self.values[idx][col]);
        }
        out
    }
}
