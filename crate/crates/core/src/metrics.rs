//! Evaluation metrics computed from a finished (or partial) trace.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::SimTrace;
use crate::error::Result;
use crate::ev::total_degradation;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub energy_charged_kwh: f64,
    pub energy_discharged_kwh: f64,
    /// Mean of `min(1, SoC / SoC*)` over departed EVs; `None` without departures.
    pub user_satisfaction: Option<f64>,
    pub profits_eur: f64,
    pub transformer_overload_kwh: f64,
    /// `sum |P_set - P_tot| * dt`; only with a setpoint.
    pub tracking_performance_kwh: Option<f64>,
    /// `sum (P_set - P_tot)^2`; only with a setpoint.
    pub squared_tracking_error: Option<f64>,
    pub capacity_loss: f64,
    pub calendar_loss: f64,
    pub cyclic_loss: f64,
    pub transformer_undershoot_kwh: f64,
    pub episode_reward: f64,
    pub sessions: usize,
    pub controller_fallbacks: usize,
}

pub fn compute_metrics(trace: &SimTrace) -> Metrics {
    let dt = trace.dt_h;
    let mut m = Metrics {
        sessions: trace.sessions.len(),
        controller_fallbacks: trace.controller_fallbacks,
        ..Default::default()
    };
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    let mut has_setpoint = false;
    for r in &trace.steps {
        for p in &r.power_kw {
            if *p > 0.0 {
                m.energy_charged_kwh += p * dt;
            } else {
                m.energy_discharged_kwh += -p * dt;
            }
        }
        m.profits_eur += r.cashflow;
        m.transformer_overload_kwh += r.overload_kw.iter().map(|o| o * dt).sum::<f64>();
        m.transformer_undershoot_kwh += r.undershoot_kw.iter().map(|o| o * dt).sum::<f64>();
        if let Some(set) = r.p_set_kw {
            has_setpoint = true;
            let e = set - r.p_total_kw;
            abs_err += e.abs() * dt;
            sq_err += e * e;
        }
        m.episode_reward += r.reward;
    }
    if has_setpoint {
        m.tracking_performance_kwh = Some(abs_err);
        m.squared_tracking_error = Some(sq_err);
    }
    if !trace.sessions.is_empty() {
        let total: f64 = trace.sessions.iter().map(|s| s.satisfaction()).sum();
        m.user_satisfaction = Some(total / trace.sessions.len() as f64);
    }
    for s in &trace.sessions {
        let d = total_degradation(s, dt, &trace.degradation);
        m.calendar_loss += d.calendar;
        m.cyclic_loss += d.cyclic;
    }
    m.capacity_loss = m.calendar_loss + m.cyclic_loss;
    m
}

type Getter = fn(&Metrics) -> Option<f64>;

/// Reported columns, in CSV order.
pub const COLUMNS: [(&str, Getter); 14] = [
    ("energy_charged_kwh", |m| Some(m.energy_charged_kwh)),
    ("energy_discharged_kwh", |m| Some(m.energy_discharged_kwh)),
    ("user_satisfaction", |m| m.user_satisfaction),
    ("profits_eur", |m| Some(m.profits_eur)),
    ("transformer_overload_kwh", |m| Some(m.transformer_overload_kwh)),
    ("tracking_performance_kwh", |m| m.tracking_performance_kwh),
    ("squared_tracking_error", |m| m.squared_tracking_error),
    ("capacity_loss", |m| Some(m.capacity_loss)),
    ("calendar_loss", |m| Some(m.calendar_loss)),
    ("cyclic_loss", |m| Some(m.cyclic_loss)),
    ("transformer_undershoot_kwh", |m| Some(m.transformer_undershoot_kwh)),
    ("episode_reward", |m| Some(m.episode_reward)),
    ("sessions", |m| Some(m.sessions as f64)),
    ("controller_fallbacks", |m| Some(m.controller_fallbacks as f64)),
];

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub algorithm: String,
    pub seed: u64,
    pub outcome: std::result::Result<Metrics, String>,
}

/// One row per run; failed runs keep their row with the error message.
pub fn write_runs_csv<W: Write>(writer: W, runs: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["algorithm".to_string(), "seed".to_string(), "status".to_string()];
    header.extend(COLUMNS.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for r in runs {
        let mut rec = vec![r.algorithm.clone(), r.seed.to_string()];
        match &r.outcome {
            Ok(m) => {
                rec.push("ok".into());
                rec.extend(COLUMNS.iter().map(|(_, get)| fmt(get(m))));
            }
            Err(e) => {
                rec.push(format!("error: {e}"));
                rec.extend(COLUMNS.iter().map(|_| String::new()));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub algorithm: String,
    pub runs: usize,
    pub failed: usize,
    pub stats: Vec<Option<(f64, f64)>>,
}

/// Aggregates successful runs per algorithm, in first-appearance order.
pub fn aggregate(runs: &[RunResult]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.algorithm.as_str()) {
            order.push(&r.algorithm);
        }
    }
    order
        .into_iter()
        .map(|alg| {
            let ok: Vec<&Metrics> = runs
                .iter()
                .filter(|r| r.algorithm == alg)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let failed = runs.iter().filter(|r| r.algorithm == alg && r.outcome.is_err()).count();
            let stats = COLUMNS
                .iter()
                .map(|(_, get)| mean_std(&ok.iter().filter_map(|m| get(m)).collect::<Vec<_>>()))
                .collect();
            AggregateRow {
                algorithm: alg.to_string(),
                runs: ok.len(),
                failed,
                stats,
            }
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(writer: W, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["algorithm".to_string(), "runs".to_string(), "failed".to_string()];
    for (n, _) in COLUMNS {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.algorithm.clone(), r.runs.to_string(), r.failed.to_string()];
        for s in &r.stats {
            rec.push(fmt(s.map(|x| x.0)));
            rec.push(fmt(s.map(|x| x.1)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable `mean ± std` table.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!("{} ({} runs, {} failed)\n", r.algorithm, r.runs, r.failed));
        for ((name, _), s) in COLUMNS.iter().zip(&r.stats) {
            match s {
                Some((m, sd)) => out.push_str(&format!("  {name:<28} {m:>14.4} ± {sd:.4}\n")),
                None => out.push_str(&format!("  {name:<28} {:>14}\n", "n/a")),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_has_zero_metrics() {
        let trace = SimTrace {
            dt_h: 0.25,
            problem: crate::config::Problem::Profit,
            steps: Vec::new(),
            sessions: Vec::new(),
            degradation: Default::default(),
            controller_fallbacks: 0,
        };
        let m = compute_metrics(&trace);
        assert_eq!(m.user_satisfaction, None);
        assert_eq!(m.energy_charged_kwh, 0.0);
        assert_eq!(m.tracking_performance_kwh, None);
    }

    #[test]
    fn aggregate_counts_and_moments() {
        let mk = |alg: &str, seed: u64, e: f64| RunResult {
            algorithm: alg.into(),
            seed,
            outcome: Ok(Metrics {
                energy_charged_kwh: e,
                ..Default::default()
            }),
        };
        let runs = vec![mk("a", 0, 1.0), mk("b", 0, 5.0), mk("a", 1, 3.0), mk("b", 1, 5.0)];
        let rows = aggregate(&runs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].stats[0], Some((2.0, 2f64.sqrt())));
        assert_eq!(rows[1].stats[0], Some((5.0, 0.0)));
        assert_eq!(rows[0].stats[2], None);
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &runs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
