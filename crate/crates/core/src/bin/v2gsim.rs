use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use v2g_sim::baselines::{make_controller, solve_replay};
use v2g_sim::engine::resimulate;
use v2g_sim::experiment::{self, ExperimentSpec};
use v2g_sim::grid::{load_shape, pv_shape, ProfileSource};
use v2g_sim::metrics::{aggregate, format_table, RunResult};
use v2g_sim::{compute_metrics, Problem, Replay, SimConfig};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "v2gsim", version, about = "V2G charging simulator and benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm over one or more seeds.
    Simulate {
        #[command(flatten)]
        batch: Batch,
        #[arg(long, alias = "algorithms", default_value = "afap")]
        algorithm: String,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Run several algorithms on paired seeds and print mean ± std.
    Compare {
        #[command(flatten)]
        batch: Batch,
        /// Comma-separated; defaults to every algorithm applicable to the problem.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<String>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Re-run a saved replay with any algorithm and print its metrics.
    Replay {
        path: PathBuf,
        #[arg(long, default_value = "afap")]
        algorithm: String,
    },
    /// Write the bundled registry, behavior, price and profile tables as CSV.
    ExportDefaults {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "defaults")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Batch {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_replays: bool,
    #[arg(long)]
    emit_plot_data: bool,
}

const DEFAULT_CONFIG: &str = r#"
[simulation]
timescale_minutes = 15
sim_length = 96
start_datetime = "2024-03-04T00:00:00"
scenario = "public"
problem = "profit"
v2g_enabled = true

[charging_station]
count = 10

[[transformer]]
max_power_kw = 150.0
load = "builtin"
load_peak_kw = 60.0
pv = "builtin"
pv_peak_kw = 40.0
"#;

fn batch(b: Batch, algorithms: Vec<String>, runs: usize) -> Result<()> {
    let config = SimConfig::from_path(&b.config)?;
    let algorithms = if algorithms.is_empty() {
        match config.problem {
            Problem::Pst => vec!["afap", "rr", "optimal"],
            Problem::Profit => vec!["afap", "alap", "rr", "mpc", "optimal"],
        }
        .into_iter()
        .map(String::from)
        .collect()
    } else {
        algorithms
    };
    let spec = ExperimentSpec {
        config,
        algorithms,
        runs,
        seed_base: b.seed,
        out: b.out,
        emit_replays: b.emit_replays,
        emit_plot_data: b.emit_plot_data,
    };
    let report = experiment::run(&spec)?;
    print!("{}", format_table(&report.aggregate));
    let mut failed = 0;
    for r in &report.runs {
        if let Err(e) = &r.outcome {
            eprintln!("{} seed {}: {e}", r.algorithm, r.seed);
            failed += 1;
        }
    }
    if let Some(dir) = &spec.out {
        println!("results written to {}", dir.display());
    }
    if failed > 0 {
        return Err(format!("{failed} of {} runs failed", report.runs.len()).into());
    }
    Ok(())
}

fn replay(path: &Path, algorithm: &str) -> Result<()> {
    let replay = Replay::load(path)?;
    let trace = if algorithm.trim().eq_ignore_ascii_case("optimal") {
        solve_replay(&replay)?.1
    } else {
        resimulate(&replay, make_controller(algorithm, &replay.config)?.as_mut())?
    };
    let run = RunResult {
        algorithm: algorithm.to_string(),
        seed: replay.seed,
        outcome: Ok(compute_metrics(&trace)),
    };
    print!("{}", format_table(&aggregate(&[run])));
    Ok(())
}

fn export_defaults(config: Option<&Path>, out: &Path) -> Result<()> {
    let config = match config {
        Some(p) => SimConfig::from_path(p)?,
        None => SimConfig::from_toml_str(DEFAULT_CONFIG, Path::new("."))?,
    };
    fs::create_dir_all(out)?;
    config.registry.to_csv(fs::File::create(out.join("registry.csv"))?)?;
    for scenario in v2g_sim::behavior::Scenario::BUILTIN {
        let dir = out.join("behavior").join(scenario.name());
        fs::create_dir_all(&dir)?;
        v2g_sim::behavior::BehaviorModel::builtin(scenario).write_csv_dir(&dir)?;
    }
    let mut w = csv::Writer::from_path(out.join("prices.csv"))?;
    w.write_record(["time", "charge", "discharge"])?;
    for t in 0..config.sim_length {
        w.write_record([
            config.time_at(t).format("%Y-%m-%dT%H:%M:%S").to_string(),
            format!("{:?}", config.charge_price[t]),
            format!("{:?}", config.discharge_price[t]),
        ])?;
    }
    w.flush()?;
    for (i, tr) in config.transformers.iter().enumerate() {
        for (name, src, shape) in [("load", &tr.load, load_shape as fn(f64) -> f64), ("pv", &tr.pv, pv_shape)] {
            let values: Vec<f64> = match src {
                ProfileSource::None => continue,
                ProfileSource::Builtin { peak_kw, .. } => {
                    (0..config.sim_length).map(|t| peak_kw * shape(config.hour_of_day(t))).collect()
                }
                ProfileSource::Series { values } => values.clone(),
            };
            let mut w = csv::Writer::from_path(out.join(format!("transformer{i}_{name}.csv")))?;
            w.write_record(["step", "kw"])?;
            for (t, v) in values.iter().enumerate() {
                w.write_record([t.to_string(), format!("{v:?}")])?;
            }
            w.flush()?;
        }
    }
    println!("defaults written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { batch: b, algorithm, runs } => batch(b, vec![algorithm], runs),
        Command::Compare { batch: b, algorithms, runs } => batch(b, algorithms, runs),
        Command::Replay { path, algorithm } => replay(&path, &algorithm),
        Command::ExportDefaults { config, out } => export_defaults(config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
