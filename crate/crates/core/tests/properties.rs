mod common;

use proptest::prelude::*;

use v2g_sim::baselines::{audit, make_controller, solve_profit, solve_replay, ScheduleProblem, SolveStatus};
use v2g_sim::engine::{resimulate, sample_replay};
use v2g_sim::ev::{step_soc, ChargerType};
use v2g_sim::metrics::{aggregate, write_runs_csv, RunResult, COLUMNS};
use v2g_sim::station::{apply_station_limits, session_cashflow, ChargerSpec};
use v2g_sim::{rl, Metrics, Replay, SimTrace, Simulation};

use common::{ev, hand_replay, load, Sess};

fn charger() -> impl Strategy<Value = ChargerSpec> {
    (0.0..8.0f64, 16.0..40.0f64, -8.0..0.0f64, -40.0..-16.0f64, 1usize..6, 0.0..1.0f64, 0.0..1.0f64).prop_map(
        |(min_ch, max_ch, min_dis, max_dis, evse, up, down)| ChargerSpec {
            min_station_current_a: down * max_dis * evse as f64,
            max_station_current_a: up * max_ch * evse as f64,
            min_charge_current_a: min_ch,
            max_charge_current_a: max_ch,
            min_discharge_current_a: min_dis,
            max_discharge_current_a: max_dis,
            voltage_v: 230.0,
            phases: 3,
            evse_count: evse,
            charger_type: ChargerType::Ac,
            transformer: 0,
        },
    )
}

/// Non-overlapping sessions on `slots` EVSEs within `steps` steps.
fn sessions(slots: usize, steps: usize) -> impl Strategy<Value = Vec<Sess>> {
    proptest::collection::vec((0..steps, 1..=steps, 8.0..38.0f64, 0.0..1.0f64), slots).prop_map(move |draws| {
        draws
            .into_iter()
            .enumerate()
            .map(|(slot, (a, len, e_arr, u))| {
                let t_arr = a.min(steps - 1);
                let t_dep = (t_arr + len).min(steps);
                let e_target = e_arr + u * 11.0 * 0.25 * (t_dep - t_arr) as f64;
                (slot, t_arr, t_dep, e_arr, e_target)
            })
            .collect()
    })
}

fn drive(replay: &Replay, actions: &[Vec<f64>]) -> (SimTrace, Vec<Vec<f64>>) {
    let mut sim = Simulation::from_replay(replay).unwrap();
    let mut obs = vec![sim.observation()];
    for a in actions {
        sim.step(a).unwrap();
        obs.push(sim.observation());
    }
    (sim.into_trace(), obs)
}

fn tracking_objective(trace: &SimTrace) -> f64 {
    trace.steps.iter().map(|r| (r.p_set_kw.unwrap() - r.p_total_kw).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn station_limits_hold_and_are_idempotent(
        spec in charger(),
        req in proptest::collection::vec(-45.0..45.0f64, 6),
    ) {
        let req = &req[..spec.evse_count];
        let out = apply_station_limits(req, &spec);
        let tol = 1e-6;
        for &i in &out.currents_a {
            prop_assert!(i == 0.0
                || (i >= spec.min_charge_current_a - tol && i <= spec.max_charge_current_a)
                || (i <= spec.min_discharge_current_a + tol && i >= spec.max_discharge_current_a));
        }
        let total = out.total_current_a();
        prop_assert!(total <= spec.max_station_current_a + tol);
        prop_assert!(total >= spec.min_station_current_a - tol);
        prop_assert_eq!(apply_station_limits(&out.currents_a, &spec).currents_a, out.currents_a);
    }

    #[test]
    fn soc_stays_in_bounds(
        soc in 0.0..=1.0f64,
        p in -100.0..100.0f64,
        dt in 0.01..1.0f64,
        cap in 10.0..120.0f64,
        tau in 0.5..=1.0f64,
        min in 0.0..0.3f64,
    ) {
        let next = step_soc(soc.max(min), p, dt, cap, tau, min);
        prop_assert!((min..=1.0).contains(&next));
        if p >= 0.0 {
            prop_assert!(next >= soc.max(min));
        } else {
            prop_assert!(next <= soc.max(min));
        }
    }

    #[test]
    fn tau_one_is_linear(soc in 0.1..=1.0f64, p in -50.0..50.0f64, dt in 0.01..1.0f64, cap in 10.0..120.0f64) {
        let next = step_soc(soc, p, dt, cap, 1.0, 0.1);
        let linear = ((soc * cap + p * dt) / cap).clamp(0.1, 1.0);
        prop_assert!((next - linear).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_is_conserved(
        sess in sessions(3, 6),
        actions in proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, 3), 6),
        prices in proptest::collection::vec(0.05..0.4f64, 6),
    ) {
        let replay = hand_replay("profit", 3, &sess, None, prices, &ev(), "");
        let (trace, _) = drive(&replay, &actions);
        for r in &trace.steps {
            let sum: f64 = r.power_kw.iter().sum();
            prop_assert!((r.p_total_kw - sum).abs() <= 1e-9);
            let cash: f64 = r.power_kw.iter().map(|p| session_cashflow(*p, 0.25, r.charge_price, r.discharge_price)).sum();
            prop_assert!((r.cashflow - cash).abs() <= 1e-12);
        }
        prop_assert_eq!(trace.sessions.len(), sess.len());
        for s in &trace.sessions {
            let moved: f64 = s.power_history.iter().map(|p| p * 0.25).sum();
            prop_assert!((s.e_arrival_kwh + moved - s.energy_kwh()).abs() <= 1e-9);
            prop_assert_eq!(s.power_history.len(), s.t_dep - s.t_arr);
            prop_assert!(s.energy_kwh() >= s.spec.min_capacity_kwh - 1e-9);
            prop_assert!(s.soc <= 1.0);
        }
    }

    #[test]
    fn tracking_observations_hide_targets_prices_and_future_setpoints(
        sess in sessions(2, 6),
        actions in proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 2), 6),
        setpoint in proptest::collection::vec(0.0..20.0f64, 6),
        cut in 1usize..6,
        shift in 0.1..5.0f64,
    ) {
        let base = hand_replay("pst", 2, &sess, Some(setpoint.clone()), vec![0.2; 6], &ev(), "");
        let mut other_sessions = sess.clone();
        for s in &mut other_sessions {
            s.4 = (s.4 + shift).min(50.0);
        }
        let mut later = setpoint;
        for v in &mut later[cut..] {
            *v += shift;
        }
        let other = hand_replay("pst", 2, &other_sessions, Some(later), vec![0.35; 6], &ev(), "");
        let (_, a) = drive(&base, &actions);
        let (_, b) = drive(&other, &actions);
        prop_assert_eq!(&a[..cut], &b[..cut]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn schedule_does_not_depend_on_the_controller(seed in 0u64..10_000) {
        let config = load("profit_workplace.toml");
        let replay = sample_replay(&config, seed).unwrap();
        for alg in ["afap", "alap", "rr"] {
            let mut ctrl = make_controller(alg, &config).unwrap();
            let (trace, run) = v2g_sim::engine::run_episode(Simulation::new(config.clone(), seed).unwrap(), ctrl.as_mut()).unwrap();
            prop_assert_eq!(&run.schedule, &replay.schedule);
            prop_assert_eq!(&run.exogenous, &replay.exogenous);
            prop_assert_eq!(run.dropped_arrivals.iter().sum::<usize>(), replay.dropped_arrivals.iter().sum::<usize>());
            let again = resimulate(&replay, make_controller(alg, &config).unwrap().as_mut()).unwrap();
            prop_assert_eq!(again, trace);
        }
    }

    #[test]
    fn observation_length_is_constant(seed in 0u64..10_000, actions in proptest::collection::vec(-1.0..1.0f64, 20)) {
        for file in ["pst_public.toml", "profit_workplace.toml"] {
            let config = load(file);
            let mut env = rl::Env::new(config).unwrap();
            let len = env.observation_space().len;
            prop_assert_eq!(env.reset(seed).unwrap().len(), len);
            let n = env.action_space().len;
            let mut t = 0;
            while !env.simulation().is_done() {
                let a: Vec<f64> = (0..n).map(|k| actions[(k + t) % actions.len()]).collect();
                prop_assert_eq!(env.step(&a).unwrap().observation.len(), len);
                t += 1;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relaxed_tracking_optimum_beats_heuristics(
        sess in sessions(2, 4),
        setpoint in proptest::collection::vec(0.0..25.0f64, 4),
    ) {
        let mut replay = hand_replay("pst", 2, &sess, Some(setpoint), vec![0.2; 4], &ev(), "");
        replay.config.solver.pst_enforce_targets = false;
        let (sol, trace) = solve_replay(&replay).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let best = tracking_objective(&trace);
        prop_assert!((best - sol.objective).abs() <= 1e-6);
        for alg in ["afap", "rr"] {
            let other = resimulate(&replay, make_controller(alg, &replay.config).unwrap().as_mut()).unwrap();
            prop_assert!(best <= tracking_objective(&other) + 1e-6, "{} beats the solver", alg);
        }
    }

    #[test]
    fn profit_solutions_pass_the_audit(
        sess in sessions(3, 5),
        prices in proptest::collection::vec(0.05..0.4f64, 5),
        limit in 10.0..40.0f64,
    ) {
        let mut replay = hand_replay("profit", 3, &sess, None, prices, &ev(), "");
        replay.config.transformers[0].max_power_kw = limit;
        let problem = ScheduleProblem::from_replay(&replay);
        let sol = solve_profit(&problem, 2000).unwrap();
        prop_assume!(sol.status != SolveStatus::Infeasible);
        let report = audit(&problem, &sol);
        prop_assert!(report.max_residual <= 1e-6, "{:?}", report.violations);
    }
}

fn metrics_from(values: &[f64]) -> Metrics {
    Metrics {
        energy_charged_kwh: values[0],
        energy_discharged_kwh: values[1],
        user_satisfaction: Some(values[2]),
        profits_eur: values[3],
        transformer_overload_kwh: values[4],
        tracking_performance_kwh: None,
        squared_tracking_error: None,
        capacity_loss: values[5],
        calendar_loss: values[6],
        cyclic_loss: values[7],
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn aggregate_means_match_the_run_table(
        rows in proptest::collection::vec((0usize..3, proptest::collection::vec(-1e3..1e3f64, 8)), 1..12),
    ) {
        let runs: Vec<RunResult> = rows
            .iter()
            .enumerate()
            .map(|(i, (alg, v))| RunResult {
                algorithm: ["afap", "rr", "mpc"][*alg].to_string(),
                seed: i as u64,
                outcome: Ok(metrics_from(v)),
            })
            .collect();
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &runs).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        let header = reader.headers().unwrap().clone();
        let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        for row in aggregate(&runs) {
            for (c, (name, _)) in COLUMNS.iter().enumerate() {
                let col = header.iter().position(|h| h == *name).unwrap();
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| r[0] == row.algorithm)
                    .filter(|r| !r[col].is_empty())
                    .map(|r| r[col].parse().unwrap())
                    .collect();
                match row.stats[c] {
                    None => prop_assert!(values.is_empty()),
                    Some((mean, _)) => {
                        let recomputed = values.iter().sum::<f64>() / values.len() as f64;
                        prop_assert!((mean - recomputed).abs() <= 1e-9 * (1.0 + recomputed.abs()));
                    }
                }
            }
        }
    }
}
