//! Constraint checker for solver output. It re-derives every bound from the
//! raw EV, EVSE and grid data instead of reusing the solver's model.

use super::problem::{ScheduleProblem, Solution, SolveStatus};
use crate::config::Problem;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    /// Largest violation found, in the unit of its constraint (A, kW, kWh).
    pub max_residual: f64,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual <= tol
    }

    fn check(&mut self, residual: f64, what: impl FnOnce() -> String) {
        if residual > self.max_residual {
            self.max_residual = residual;
        }
        if residual > 1e-9 {
            self.violations.push(format!("{} (residual {residual:.3e})", what()));
        }
    }
}

fn above(x: f64, hi: f64) -> f64 {
    (x - hi).max(0.0)
}

fn below(x: f64, lo: f64) -> f64 {
    (lo - x).max(0.0)
}

pub fn audit(problem: &ScheduleProblem, sol: &Solution) -> AuditReport {
    let mut rep = AuditReport::default();
    let n = problem.slot_charger.len();
    let steps = problem.steps;
    let dt = problem.dt_h;
    let relaxed = sol.status == SolveStatus::Relaxed;

    // which session, if any, occupies each (slot, step)
    let mut owner = vec![vec![None; steps]; n];
    for (k, s) in problem.sessions.iter().enumerate() {
        for t in s.start..s.end {
            owner[s.slot][t] = Some(k);
        }
    }

    for slot in 0..n {
        let ch = &problem.chargers[problem.slot_charger[slot]];
        let root = f64::from(ch.phases).sqrt() * ch.voltage_v / 1000.0;
        for t in 0..steps {
            let (ic, id) = (sol.i_ch[slot][t], sol.i_dis[slot][t]);
            let (pc, pd) = (sol.p_ch[slot][t], sol.p_dis[slot][t]);
            let (wc, wd) = (f64::from(u8::from(sol.omega_ch[slot][t])), f64::from(u8::from(sol.omega_dis[slot][t])));
            let at = || format!("slot {slot} step {}", problem.start_step + t);
            rep.check(above(wc + wd, 1.0), || format!("{}: charges and discharges at once", at()));
            let Some(k) = owner[slot][t] else {
                for v in [ic, id, pc, pd, wc, wd] {
                    rep.check(v.abs(), || format!("{}: activity without a connected EV", at()));
                }
                continue;
            };
            let ev = &problem.sessions[k].spec;
            // current boxes
            rep.check(above(ic, ch.max_charge_current_a * wc), || format!("{}: charge current above max", at()));
            rep.check(below(ic, ch.min_charge_current_a * wc), || format!("{}: charge current below min", at()));
            rep.check(below(id, ch.max_discharge_current_a * wd), || format!("{}: discharge current above max", at()));
            rep.check(above(id, ch.min_discharge_current_a * wd), || format!("{}: discharge current below min", at()));
            // power definitions and EV limits
            rep.check((pc - ev.charge_efficiency * ic * root).abs(), || format!("{}: charge power/current mismatch", at()));
            rep.check((pd - ev.discharge_efficiency * id * root).abs(), || format!("{}: discharge power/current mismatch", at()));
            rep.check(above(pc, ev.max_charge_kw(ch.charger_type) * wc), || format!("{}: above EV charge power", at()));
            rep.check(below(pc, ev.min_charge_kw(ch.charger_type) * wc), || format!("{}: inside EV charge dead-band", at()));
            let may_discharge = problem.kind == Problem::Profit && problem.allow_discharge && ev.max_discharge_kw > 0.0;
            if may_discharge {
                rep.check(below(pd, -ev.max_discharge_kw * wd), || format!("{}: above EV discharge power", at()));
                rep.check(above(pd, -ev.min_discharge_kw * wd), || format!("{}: inside EV discharge dead-band", at()));
            } else {
                rep.check(pd.abs() + id.abs() + wd, || format!("{}: discharge not allowed", at()));
            }
        }
    }

    // battery energy
    for (k, s) in problem.sessions.iter().enumerate() {
        let mut e = s.e_init_kwh;
        for t in s.start..s.end {
            e += (sol.p_ch[s.slot][t] + sol.p_dis[s.slot][t]) * dt;
            rep.check(above(e, s.spec.max_capacity_kwh), || format!("session {} step {t}: above capacity", s.id));
            rep.check(below(e, s.spec.min_capacity_kwh), || format!("session {} step {t}: below minimum energy", s.id));
        }
        if let Some(min) = s.e_final_min_kwh {
            let allowed = if relaxed { sol.shortfall_kwh[k] } else { 0.0 };
            rep.check(below(e + allowed, min), || format!("session {}: departs below its target", s.id));
            rep.check((sol.shortfall_kwh[k] - (min - e).max(0.0)).abs(), || {
                format!("session {}: reported shortfall does not match", s.id)
            });
        }
    }

    // station currents and transformers
    for t in 0..steps {
        for (g, ch) in problem.chargers.iter().enumerate() {
            let total: f64 = (0..n)
                .filter(|&k| problem.slot_charger[k] == g)
                .map(|k| sol.i_ch[k][t] + sol.i_dis[k][t])
                .sum();
            rep.check(above(total, ch.max_station_current_a), || format!("charger {g} step {t}: station current above max"));
            rep.check(below(total, ch.min_station_current_a), || format!("charger {g} step {t}: station current below min"));
        }
        if relaxed {
            continue;
        }
        for w in 0..problem.transformer_upper_kw.len() {
            let ev: f64 = (0..n)
                .filter(|&k| problem.chargers[problem.slot_charger[k]].transformer == w)
                .map(|k| sol.p_ch[k][t] + sol.p_dis[k][t])
                .sum();
            rep.check(above(ev, problem.transformer_upper_kw[w][t]), || format!("transformer {w} step {t}: overload"));
            rep.check(below(ev, problem.transformer_lower_kw[w][t]), || format!("transformer {w} step {t}: below minimum"));
        }
    }

    // objective
    let objective = match problem.kind {
        Problem::Pst => (0..steps)
            .map(|t| {
                let total: f64 = (0..n).map(|k| sol.p_ch[k][t] + sol.p_dis[k][t]).sum();
                (problem.setpoint_kw[t] - total).powi(2)
            })
            .sum::<f64>(),
        Problem::Profit => (0..steps)
            .map(|t| {
                (0..n)
                    .map(|k| (sol.p_ch[k][t] * problem.charge_price[t] + sol.p_dis[k][t] * problem.discharge_price[t]) * dt)
                    .sum::<f64>()
            })
            .sum(),
    };
    let scale = objective.abs().max(1.0);
    rep.check((objective - sol.objective).abs() / scale, || {
        format!("reported objective {} differs from recomputed {objective}", sol.objective)
    });
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_problem_passes_and_stray_current_fails() {
        let problem = ScheduleProblem {
            kind: Problem::Pst,
            dt_h: 0.25,
            steps: 2,
            start_step: 0,
            chargers: vec![super::super::problem::tests::charger()],
            slot_charger: vec![0],
            sessions: vec![],
            transformer_upper_kw: vec![vec![100.0; 2]],
            transformer_lower_kw: vec![vec![-100.0; 2]],
            setpoint_kw: vec![3.0, 4.0],
            charge_price: vec![0.1; 2],
            discharge_price: vec![0.1; 2],
            allow_discharge: false,
        };
        let mut sol = Solution::from_powers(&problem, vec![vec![0.0; 2]], vec![vec![0.0; 2]], SolveStatus::Optimal);
        assert_eq!(sol.objective, 25.0);
        assert!(audit(&problem, &sol).passes(1e-12));
        sol.i_ch[0][1] = 5.0;
        let rep = audit(&problem, &sol);
        assert_eq!(rep.max_residual, 5.0);
        assert!(!rep.violations.is_empty());
    }
}
