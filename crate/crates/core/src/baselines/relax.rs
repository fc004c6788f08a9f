//! Continuous relaxation of a schedule problem for a given set of fixed
//! cell modes, solved with an interior-point conic solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::problem::{CellLimits, ScheduleProblem};
use crate::config::Problem;
use crate::error::{Result, SimError};

/// Station currents are kept this far (A) inside their bounds.
pub const CURRENT_MARGIN_A: f64 = 1e-6;
/// Transformer bounds are kept this far (kW) inside their limits.
pub const POWER_MARGIN_KW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Free,
    Off,
    Charge,
    Discharge,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub session: usize,
    pub slot: usize,
    pub step: usize,
    pub lim: CellLimits,
}

/// Flat list of connected (session, step) cells.
#[derive(Debug, Clone)]
pub struct Layout {
    pub cells: Vec<Cell>,
    /// First cell of each session; cells of a session are contiguous.
    pub first: Vec<usize>,
    /// Multiplier on the station and transformer margins (1 or 0).
    pub margin: f64,
}

impl Layout {
    pub fn new(problem: &ScheduleProblem) -> Self {
        let mut cells = Vec::new();
        let mut first = Vec::new();
        for (k, s) in problem.sessions.iter().enumerate() {
            let lim = problem.limits(s);
            first.push(cells.len());
            for t in s.start..s.end {
                cells.push(Cell {
                    session: k,
                    slot: s.slot,
                    step: t,
                    lim,
                });
            }
        }
        Self { cells, first, margin: 1.0 }
    }
}

/// How constraint slacks (target shortfall, transformer violations) enter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slack {
    /// Minimize total slack; the real objective is ignored.
    Minimize,
    /// Slacks allowed up to this total.
    Capped(f64),
    /// No slack variables.
    Zero,
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub p_ch: Vec<f64>,
    pub p_dis: Vec<f64>,
    pub omega_ch: Vec<f64>,
    pub omega_dis: Vec<f64>,
    pub slack_total: f64,
    pub value: f64,
}

#[derive(Default)]
struct Lp {
    n: usize,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    le: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Lp {
    fn var(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    fn eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push((terms, rhs));
    }

    fn le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.le.push((terms, rhs));
    }
}

/// Tight tolerances first; the library defaults when those stall.
fn settings(attempt: usize) -> DefaultSettings<f64> {
    let base = DefaultSettings {
        verbose: false,
        max_iter: 500,
        ..DefaultSettings::default()
    };
    if attempt > 0 {
        return base;
    }
    DefaultSettings {
        tol_gap_abs: 1e-10,
        tol_gap_rel: 1e-10,
        tol_feas: 1e-10,
        tol_ktratio: 1e-8,
        ..base
    }
}

/// Solves the relaxation; `Ok(None)` when it is infeasible.
pub fn solve(problem: &ScheduleProblem, layout: &Layout, modes: &[Mode], slack: Slack) -> Result<Option<Relaxation>> {
    let mut lp = Lp::default();
    let nc = layout.cells.len();
    let dt = problem.dt_h;
    let pch = |c: usize| 4 * c;
    let pdis = |c: usize| 4 * c + 1;
    let wch = |c: usize| 4 * c + 2;
    let wdis = |c: usize| 4 * c + 3;
    lp.n = 4 * nc;
    let e0 = lp.n;
    lp.n += nc;
    let energy = |c: usize| e0 + c;

    for (c, cell) in layout.cells.iter().enumerate() {
        let l = &cell.lim;
        match modes[c] {
            Mode::Off => {
                for v in [pch(c), pdis(c), wch(c), wdis(c)] {
                    lp.eq(vec![(v, 1.0)], 0.0);
                }
            }
            Mode::Charge => {
                lp.eq(vec![(pdis(c), 1.0)], 0.0);
                lp.eq(vec![(wdis(c), 1.0)], 0.0);
                lp.eq(vec![(wch(c), 1.0)], 1.0);
                lp.le(vec![(pch(c), 1.0)], l.ch_max);
                lp.le(vec![(pch(c), -1.0)], -l.ch_min);
            }
            Mode::Discharge => {
                lp.eq(vec![(pch(c), 1.0)], 0.0);
                lp.eq(vec![(wch(c), 1.0)], 0.0);
                lp.eq(vec![(wdis(c), 1.0)], 1.0);
                lp.le(vec![(pdis(c), 1.0)], -l.dis_min);
                lp.le(vec![(pdis(c), -1.0)], l.dis_max);
            }
            Mode::Free if !l.is_binary() => {
                lp.eq(vec![(wch(c), 1.0)], 0.0);
                lp.eq(vec![(wdis(c), 1.0)], 0.0);
                if l.can_charge() {
                    lp.le(vec![(pch(c), 1.0)], l.ch_max);
                    lp.le(vec![(pch(c), -1.0)], 0.0);
                } else {
                    lp.eq(vec![(pch(c), 1.0)], 0.0);
                }
                if l.can_discharge() {
                    lp.le(vec![(pdis(c), -1.0)], l.dis_max);
                    lp.le(vec![(pdis(c), 1.0)], 0.0);
                } else {
                    lp.eq(vec![(pdis(c), 1.0)], 0.0);
                }
            }
            Mode::Free => {
                if l.can_charge() {
                    lp.le(vec![(pch(c), 1.0), (wch(c), -l.ch_max)], 0.0);
                    lp.le(vec![(pch(c), -1.0), (wch(c), l.ch_min)], 0.0);
                    lp.le(vec![(wch(c), -1.0)], 0.0);
                } else {
                    lp.eq(vec![(pch(c), 1.0)], 0.0);
                    lp.eq(vec![(wch(c), 1.0)], 0.0);
                }
                if l.can_discharge() {
                    lp.le(vec![(pdis(c), -1.0), (wdis(c), -l.dis_max)], 0.0);
                    lp.le(vec![(pdis(c), 1.0), (wdis(c), l.dis_min)], 0.0);
                    lp.le(vec![(wdis(c), -1.0)], 0.0);
                } else {
                    lp.eq(vec![(pdis(c), 1.0)], 0.0);
                    lp.eq(vec![(wdis(c), 1.0)], 0.0);
                }
                lp.le(vec![(wch(c), 1.0), (wdis(c), 1.0)], 1.0);
            }
        }
    }

    let with_slack = slack != Slack::Zero;
    let mut slacks = Vec::new();

    // battery dynamics and bounds
    for (k, s) in problem.sessions.iter().enumerate() {
        let first = layout.first[k];
        let len = s.end - s.start;
        for j in 0..len {
            let c = first + j;
            let mut row = vec![(energy(c), 1.0), (pch(c), -dt), (pdis(c), -dt)];
            let rhs = if j == 0 {
                s.e_init_kwh
            } else {
                row.push((energy(c - 1), -1.0));
                0.0
            };
            lp.eq(row, rhs);
            lp.le(vec![(energy(c), 1.0)], s.spec.max_capacity_kwh);
            lp.le(vec![(energy(c), -1.0)], -s.spec.min_capacity_kwh);
        }
        if let (Some(min), true) = (s.e_final_min_kwh, len > 0) {
            let last = energy(first + len - 1);
            if with_slack {
                let sigma = lp.var();
                slacks.push(sigma);
                lp.le(vec![(last, -1.0), (sigma, -1.0)], -min);
            } else {
                lp.le(vec![(last, -1.0)], -min);
            }
        }
    }

    // cells grouped by step
    let mut at_step: Vec<Vec<usize>> = vec![Vec::new(); problem.steps];
    for (c, cell) in layout.cells.iter().enumerate() {
        at_step[cell.step].push(c);
    }

    // station currents
    for (g, ch) in problem.chargers.iter().enumerate() {
        for cells in &at_step {
            let row: Vec<(usize, f64)> = cells
                .iter()
                .filter(|&&c| problem.slot_charger[layout.cells[c].slot] == g)
                .flat_map(|&c| {
                    let l = &layout.cells[c].lim;
                    [(pch(c), 1.0 / l.k_ch), (pdis(c), 1.0 / l.k_dis)]
                })
                .collect();
            if row.is_empty() {
                continue;
            }
            let neg: Vec<(usize, f64)> = row.iter().map(|(v, a)| (*v, -a)).collect();
            lp.le(row, ch.max_station_current_a - CURRENT_MARGIN_A * layout.margin);
            lp.le(neg, -(ch.min_station_current_a + CURRENT_MARGIN_A * layout.margin));
        }
    }

    // transformers
    for (w, (upper, lower)) in problem
        .transformer_upper_kw
        .iter()
        .zip(&problem.transformer_lower_kw)
        .enumerate()
    {
        for (t, cells) in at_step.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = cells
                .iter()
                .filter(|&&c| problem.chargers[problem.slot_charger[layout.cells[c].slot]].transformer == w)
                .flat_map(|&c| [(pch(c), 1.0), (pdis(c), 1.0)])
                .collect();
            if row.is_empty() {
                continue;
            }
            let mut neg: Vec<(usize, f64)> = row.iter().map(|(v, a)| (*v, -a)).collect();
            if with_slack {
                let over = lp.var();
                let under = lp.var();
                slacks.extend([over, under]);
                row.push((over, -1.0));
                neg.push((under, -1.0));
            }
            lp.le(row, upper[t] - POWER_MARGIN_KW * layout.margin);
            lp.le(neg, -(lower[t] + POWER_MARGIN_KW * layout.margin));
        }
    }
    for &v in &slacks {
        lp.le(vec![(v, -1.0)], 0.0);
    }
    if let Slack::Capped(cap) = slack {
        if !slacks.is_empty() {
            lp.le(slacks.iter().map(|&v| (v, 1.0)).collect(), cap);
        }
    }

    // objective
    let mut q = vec![0.0; lp.n];
    let mut quad: Vec<usize> = Vec::new();
    match (slack, problem.kind) {
        (Slack::Minimize, _) => {}
        (_, Problem::Pst) => {
            for (t, cells) in at_step.iter().enumerate() {
                let z = lp.var();
                quad.push(z);
                let mut row = vec![(z, 1.0)];
                row.extend(cells.iter().flat_map(|&c| [(pch(c), -1.0), (pdis(c), -1.0)]));
                lp.eq(row, -problem.setpoint_kw[t]);
            }
        }
        (_, Problem::Profit) => {
            for (c, cell) in layout.cells.iter().enumerate() {
                q[pch(c)] = problem.charge_price[cell.step] * dt;
                q[pdis(c)] = problem.discharge_price[cell.step] * dt;
            }
        }
    }
    q.resize(lp.n, 0.0);
    if slack == Slack::Minimize {
        for &v in &slacks {
            q[v] = 1.0;
        }
    }
    let n = lp.n;
    let m = lp.eq.len() + lp.le.len();
    if m == 0 {
        return Ok(Some(Relaxation {
            p_ch: vec![],
            p_dis: vec![],
            omega_ch: vec![],
            omega_dis: vec![],
            slack_total: 0.0,
            value: 0.0,
        }));
    }
    let (ri, ci, vi): (Vec<usize>, Vec<usize>, Vec<f64>) = {
        let mut r = Vec::new();
        let mut cc = Vec::new();
        let mut v = Vec::new();
        for (i, (terms, _)) in lp.eq.iter().chain(lp.le.iter()).enumerate() {
            for &(col, a) in terms {
                r.push(i);
                cc.push(col);
                v.push(a);
            }
        }
        (r, cc, v)
    };
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vi);
    let b: Vec<f64> = lp.eq.iter().chain(lp.le.iter()).map(|(_, r)| *r).collect();
    let p = CscMatrix::new_from_triplets(n, n, quad.clone(), quad.clone(), vec![2.0; quad.len()]);
    let mut cones = Vec::new();
    if !lp.eq.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(lp.eq.len()));
    }
    if !lp.le.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(lp.le.len()));
    }
    let mut last = None;
    let mut x = None;
    for attempt in 0..2 {
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings(attempt))
            .map_err(|e| SimError::Solver(format!("{e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                x = Some((solver.solution.x, solver.solution.obj_val));
                break;
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Ok(None),
            other => {
                log::debug!("relaxation attempt {attempt} ended with status {other:?}");
                last = Some(other);
            }
        }
    }
    let Some((x, value)) = x else {
        return Err(SimError::Solver(format!("relaxation ended with status {:?}", last.unwrap())));
    };
    Ok(Some(Relaxation {
        p_ch: (0..nc).map(|c| x[pch(c)]).collect(),
        p_dis: (0..nc).map(|c| x[pdis(c)]).collect(),
        omega_ch: (0..nc).map(|c| x[wch(c)]).collect(),
        omega_dis: (0..nc).map(|c| x[wdis(c)]).collect(),
        slack_total: slacks.iter().map(|&v| x[v].max(0.0)).sum(),
        value,
    }))
}
