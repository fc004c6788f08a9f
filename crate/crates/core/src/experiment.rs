//! Batch runner: every (algorithm, seed) pair is simulated on a worker pool
//! and all files are written afterwards by the calling thread.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{make_controller, run_algorithm};
use crate::config::SimConfig;
use crate::engine::{Replay, SimTrace};
use crate::error::{Result, SimError};
use crate::metrics::{aggregate, compute_metrics, write_aggregate_csv, write_runs_csv, AggregateRow, RunResult};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config: SimConfig,
    pub algorithms: Vec<String>,
    pub runs: usize,
    pub seed_base: u64,
    /// Output directory; nothing is written when `None`.
    pub out: Option<PathBuf>,
    pub emit_replays: bool,
    pub emit_plot_data: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(SimError::config("runs", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(SimError::config("algorithms", "need at least one algorithm"));
        }
        for a in &self.algorithms {
            if !a.trim().eq_ignore_ascii_case("optimal") {
                make_controller(a, &self.config)?;
            }
        }
        Ok(())
    }

    /// Paired seeds: run `i` of every algorithm uses `seed_base + i`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(move |i| self.seed_base + i)
    }
}

#[derive(Debug, Clone)]
pub struct Timing {
    pub algorithm: String,
    pub seed: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    /// Runs in (algorithm, seed) order.
    pub runs: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
    pub timings: Vec<Timing>,
}

struct Job {
    result: RunResult,
    seconds: f64,
    output: Option<(SimTrace, Replay)>,
}

/// `mpc:25` becomes `mpc-25`.
pub fn file_stem(algorithm: &str, seed: u64) -> String {
    let alg: String = algorithm
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect();
    format!("{alg}_seed{seed}")
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let pairs: Vec<(String, u64)> = spec
        .algorithms
        .iter()
        .flat_map(|a| spec.seeds().map(move |s| (a.clone(), s)))
        .collect();
    let keep = spec.out.is_some() && (spec.emit_replays || spec.emit_plot_data);
    let jobs: Vec<Job> = pairs
        .par_iter()
        .map(|(alg, seed)| {
            let t0 = Instant::now();
            let outcome = run_algorithm(alg, &spec.config, *seed);
            let seconds = t0.elapsed().as_secs_f64();
            match outcome {
                Ok((trace, replay)) => {
                    log::debug!("{alg} seed {seed} finished in {seconds:.3}s");
                    Job {
                        result: RunResult {
                            algorithm: alg.clone(),
                            seed: *seed,
                            outcome: Ok(compute_metrics(&trace)),
                        },
                        seconds,
                        output: keep.then_some((trace, replay)),
                    }
                }
                Err(e) => {
                    log::warn!("{alg} seed {seed} failed: {e}");
                    Job {
                        result: RunResult {
                            algorithm: alg.clone(),
                            seed: *seed,
                            outcome: Err(e.to_string()),
                        },
                        seconds,
                        output: None,
                    }
                }
            }
        })
        .collect();

    if let Some(dir) = &spec.out {
        write_outputs(spec, dir, &jobs)?;
    }
    let timings = jobs
        .iter()
        .map(|j| Timing {
            algorithm: j.result.algorithm.clone(),
            seed: j.result.seed,
            seconds: j.seconds,
        })
        .collect();
    let runs: Vec<RunResult> = jobs.into_iter().map(|j| j.result).collect();
    Ok(ExperimentReport {
        aggregate: aggregate(&runs),
        runs,
        timings,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_outputs(spec: &ExperimentSpec, dir: &Path, jobs: &[Job]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let runs: Vec<RunResult> = jobs.iter().map(|j| j.result.clone()).collect();
    write_runs_csv(create(&dir.join("metrics.csv"))?, &runs)?;
    write_aggregate_csv(create(&dir.join("aggregate.csv"))?, &aggregate(&runs))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("timings.csv"))?);
    w.write_record(["algorithm", "seed", "seconds"])?;
    for j in jobs {
        w.write_record([j.result.algorithm.clone(), j.result.seed.to_string(), format!("{:.6}", j.seconds)])?;
    }
    w.flush()?;

    if spec.emit_replays {
        fs::create_dir_all(dir.join("replays"))?;
    }
    if spec.emit_plot_data {
        fs::create_dir_all(dir.join("plots"))?;
    }
    for j in jobs {
        let Some((trace, replay)) = &j.output else { continue };
        let stem = file_stem(&j.result.algorithm, j.result.seed);
        if spec.emit_replays {
            replay.save(&dir.join("replays").join(format!("{stem}.json")))?;
        }
        if spec.emit_plot_data {
            write_plot_csv(create(&dir.join("plots").join(format!("{stem}.csv")))?, &replay.config, trace)?;
        }
    }
    Ok(())
}

/// Per-step series: setpoint, total EV power, prices and transformer power.
pub fn write_plot_csv<W: Write>(writer: W, config: &SimConfig, trace: &SimTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n_tr = config.transformers.len();
    let mut header: Vec<String> = ["step", "time", "p_set_kw", "p_total_kw", "charge_price", "discharge_price"]
        .map(String::from)
        .to_vec();
    for k in 0..n_tr {
        header.push(format!("transformer{k}_kw"));
        header.push(format!("transformer{k}_overload_kw"));
    }
    w.write_record(&header)?;
    for r in &trace.steps {
        let mut rec = vec![
            r.step.to_string(),
            config.time_at(r.step).format("%Y-%m-%dT%H:%M:%S").to_string(),
            r.p_set_kw.map(|v| format!("{v:?}")).unwrap_or_default(),
            format!("{:?}", r.p_total_kw),
            format!("{:?}", r.charge_price),
            format!("{:?}", r.discharge_price),
        ];
        for k in 0..n_tr {
            rec.push(format!("{:?}", r.transformer_kw[k]));
            rec.push(format!("{:?}", r.overload_kw[k]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_file_safe() {
        assert_eq!(file_stem("mpc:25", 3), "mpc-25_seed3");
        assert_eq!(file_stem(" rr ", 0), "rr_seed0");
    }

    #[test]
    fn bad_specs_are_rejected() {
        let config = crate::engine::tests::config("pst", 2);
        let mut spec = ExperimentSpec {
            config,
            algorithms: vec!["afap".into()],
            runs: 0,
            seed_base: 0,
            out: None,
            emit_replays: false,
            emit_plot_data: false,
        };
        assert!(spec.validate().is_err());
        spec.runs = 1;
        assert!(spec.validate().is_ok());
        spec.algorithms.push("greedy".into());
        assert!(matches!(spec.validate(), Err(SimError::UnknownAlgorithm(_))));
    }
}
