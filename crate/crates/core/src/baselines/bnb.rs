//! Best-first branch and bound over the per-cell on/off and direction
//! decisions, on top of the continuous relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::problem::{ScheduleProblem, Solution, SolveStatus};
use super::relax::{self, Layout, Mode, Relaxation, Slack};
use crate::error::{Result, SimError};

/// Powers (kW) closer than this to a decision boundary count as on it.
const INT_TOL_KW: f64 = 1e-6;
const GAP_REL: f64 = 1e-9;
const GAP_ABS: f64 = 1e-9;
const REPAIR_EVERY: usize = 16;

struct Node {
    bound: f64,
    modes: Vec<Mode>,
    relax: Relaxation,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // reversed: the heap pops the smallest bound first
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound)
    }
}

struct Incumbent {
    objective: f64,
    p_ch: Vec<f64>,
    p_dis: Vec<f64>,
}

fn gap_tol(objective: f64) -> f64 {
    GAP_ABS + GAP_REL * objective.abs()
}

/// Clamps relaxation powers onto their boxes, nets residual simultaneous
/// charge and discharge, and removes solver noise.
fn polish(layout: &Layout, r: &Relaxation) -> (Vec<f64>, Vec<f64>) {
    const NOISE_KW: f64 = 1e-9;
    let mut pc = Vec::with_capacity(layout.cells.len());
    let mut pd = Vec::with_capacity(layout.cells.len());
    for (c, cell) in layout.cells.iter().enumerate() {
        let l = &cell.lim;
        let mut ch = r.p_ch[c].clamp(0.0, l.ch_max);
        let mut dis = (-r.p_dis[c]).clamp(0.0, l.dis_max);
        if ch > 0.0 && dis > 0.0 {
            let net = ch - dis;
            ch = net.max(0.0);
            dis = (-net).max(0.0);
        }
        if ch <= NOISE_KW.max(INT_TOL_KW.min(l.ch_min / 2.0)) {
            ch = 0.0;
        } else if ch < l.ch_min {
            ch = l.ch_min;
        }
        if dis <= NOISE_KW.max(INT_TOL_KW.min(l.dis_min / 2.0)) {
            dis = 0.0;
        } else if dis < l.dis_min {
            dis = l.dis_min;
        }
        pc.push(ch);
        pd.push(-dis);
    }
    (pc, pd)
}

/// Closes target gaps left by solver tolerance (at most `INT_TOL_KW` worth
/// of energy) by raising charge power in the latest cells with headroom.
fn top_up(problem: &ScheduleProblem, layout: &Layout, pc: &mut [f64], pd: &[f64]) {
    for (k, s) in problem.sessions.iter().enumerate() {
        let Some(min) = s.e_final_min_kwh else { continue };
        let first = layout.first[k];
        let len = s.end - s.start;
        let dt = problem.dt_h;
        let mut energy = Vec::with_capacity(len);
        let mut e = s.e_init_kwh;
        for c in first..first + len {
            e += (pc[c] + pd[c]) * dt;
            energy.push(e);
        }
        let mut deficit = min - e;
        if deficit <= 0.0 || deficit > INT_TOL_KW * dt * len as f64 {
            continue;
        }
        // headroom of the stored energy from cell j onwards
        let mut room = f64::INFINITY;
        for j in (0..len).rev() {
            room = room.min(s.spec.max_capacity_kwh - energy[j]);
            let c = first + j;
            let l = &layout.cells[c].lim;
            if pd[c] < 0.0 || (pc[c] == 0.0 && l.ch_min > 0.0) || !l.can_charge() {
                continue;
            }
            let add = (deficit / dt).min(l.ch_max - pc[c]).min(room / dt).max(0.0);
            pc[c] += add;
            room -= add * dt;
            deficit -= add * dt;
            if deficit <= 0.0 {
                break;
            }
        }
    }
}

/// Largest violation of the on/off structure among free binary cells.
fn most_fractional(layout: &Layout, modes: &[Mode], r: &Relaxation) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, cell) in layout.cells.iter().enumerate() {
        if modes[c] != Mode::Free || !cell.lim.is_binary() {
            continue;
        }
        let l = &cell.lim;
        let ch = r.p_ch[c].max(0.0);
        let dis = (-r.p_dis[c]).max(0.0);
        let v = if ch > INT_TOL_KW && dis > INT_TOL_KW {
            ch.min(dis)
        } else if ch > INT_TOL_KW && ch < l.ch_min - INT_TOL_KW {
            ch.min(l.ch_min - ch)
        } else if dis > INT_TOL_KW && dis < l.dis_min - INT_TOL_KW {
            dis.min(l.dis_min - dis)
        } else {
            0.0
        };
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best
}

/// Nets simultaneous charge and discharge, snaps to the dead-band and fixes
/// every binary cell to the resulting mode.
fn repair_modes(layout: &Layout, modes: &[Mode], r: &Relaxation) -> Vec<Mode> {
    layout
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            if modes[c] != Mode::Free || !cell.lim.is_binary() {
                return modes[c];
            }
            let l = &cell.lim;
            let net = r.p_ch[c] + r.p_dis[c];
            if net > INT_TOL_KW && l.can_charge() && net >= 0.5 * l.ch_min {
                Mode::Charge
            } else if net < -INT_TOL_KW && l.can_discharge() && -net >= 0.5 * l.dis_min {
                Mode::Discharge
            } else {
                Mode::Off
            }
        })
        .collect()
}

fn children(cell_lim: &super::problem::CellLimits) -> Vec<Mode> {
    let mut out = vec![Mode::Off];
    if cell_lim.can_charge() {
        out.push(Mode::Charge);
    }
    if cell_lim.can_discharge() {
        out.push(Mode::Discharge);
    }
    out
}

fn to_matrices(problem: &ScheduleProblem, layout: &Layout, pc: &[f64], pd: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut ch = vec![vec![0.0; problem.steps]; problem.slots()];
    let mut dis = vec![vec![0.0; problem.steps]; problem.slots()];
    for (c, cell) in layout.cells.iter().enumerate() {
        ch[cell.slot][cell.step] = pc[c];
        dis[cell.slot][cell.step] = pd[c];
    }
    (ch, dis)
}

fn violation_report(problem: &ScheduleProblem, sol: &Solution) -> Vec<String> {
    let mut out = Vec::new();
    for (k, s) in problem.sessions.iter().enumerate() {
        if sol.shortfall_kwh[k] > 1e-7 {
            out.push(format!("session {}: {:.6} kWh short of its departure energy", s.id, sol.shortfall_kwh[k]));
        }
    }
    let power = sol.power_kw();
    for (w, (up, lo)) in problem
        .transformer_upper_kw
        .iter()
        .zip(&problem.transformer_lower_kw)
        .enumerate()
    {
        for t in 0..problem.steps {
            let ev: f64 = (0..problem.slots())
                .filter(|&k| problem.chargers[problem.slot_charger[k]].transformer == w)
                .map(|k| power[k][t])
                .sum();
            let step = problem.start_step + t;
            if ev > up[t] + 1e-7 {
                out.push(format!("transformer {w} step {step}: {:.6} kW above its limit", ev - up[t]));
            }
            if ev < lo[t] - 1e-7 {
                out.push(format!("transformer {w} step {step}: {:.6} kW below its minimum", lo[t] - ev));
            }
        }
    }
    out
}

/// Solves the mixed-integer schedule problem.
pub fn solve(problem: &ScheduleProblem, node_limit: usize) -> Result<Solution> {
    let mut layout = Layout::new(problem);
    let free = vec![Mode::Free; layout.cells.len()];
    let phase1_with = |layout: &Layout| {
        relax::solve(problem, layout, &free, Slack::Minimize)?
            .ok_or_else(|| SimError::Solver("slack relaxation reported infeasible".into()))
    };
    let mut phase1 = phase1_with(&layout)?;
    if phase1.slack_total > 1e-7 {
        // limits that bind exactly leave no room for the safety margins
        layout.margin = 0.0;
        phase1 = phase1_with(&layout)?;
    }
    let mut relaxed = phase1.slack_total > 1e-7;
    let mut policy = if relaxed {
        Slack::Capped(phase1.slack_total * (1.0 + 1e-9) + 1e-9)
    } else {
        Slack::Zero
    };
    let root = match relax::solve(problem, &layout, &free, policy)? {
        Some(r) => r,
        None => {
            // numerically on the boundary; keep the tiny slack phase 1 found
            relaxed = phase1.slack_total > 1e-9;
            policy = Slack::Capped(phase1.slack_total * (1.0 + 1e-9) + 1e-9);
            relax::solve(problem, &layout, &free, policy)?
                .ok_or_else(|| SimError::Solver("root relaxation infeasible after slack phase".into()))?
        }
    };

    let mut incumbent: Option<Incumbent> = None;
    let mut nodes = 1usize;
    let mut heap = BinaryHeap::new();
    let offer = |inc: &mut Option<Incumbent>, pc: Vec<f64>, pd: Vec<f64>| {
        let (ch, dis) = to_matrices(problem, &layout, &pc, &pd);
        let power: Vec<Vec<f64>> = ch
            .iter()
            .zip(&dis)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let objective = problem.objective_of(&power);
        if inc.as_ref().is_none_or(|i| objective < i.objective) {
            *inc = Some(Incumbent {
                objective,
                p_ch: pc,
                p_dis: pd,
            });
        }
    };
    heap.push(Node {
        bound: root.value,
        modes: free,
        relax: root,
    });
    let mut best_bound = f64::NEG_INFINITY;
    let mut exhausted = true;
    let mut since_repair = REPAIR_EVERY;
    while let Some(node) = heap.pop() {
        best_bound = node.bound;
        if let Some(inc) = &incumbent {
            if node.bound >= inc.objective - gap_tol(inc.objective) {
                best_bound = inc.objective.min(node.bound);
                heap.clear();
                break;
            }
        }
        let Some((cell, _)) = most_fractional(&layout, &node.modes, &node.relax) else {
            let (pc, pd) = polish(&layout, &node.relax);
            offer(&mut incumbent, pc, pd);
            continue;
        };
        if since_repair >= REPAIR_EVERY {
            since_repair = 0;
            let modes = repair_modes(&layout, &node.modes, &node.relax);
            if let Some(r) = relax::solve(problem, &layout, &modes, policy)? {
                nodes += 1;
                if most_fractional(&layout, &modes, &r).is_none() {
                    let (pc, pd) = polish(&layout, &r);
                    offer(&mut incumbent, pc, pd);
                }
            }
        }
        since_repair += 1;
        if nodes >= node_limit {
            exhausted = false;
            heap.push(node);
            break;
        }
        for mode in children(&layout.cells[cell].lim) {
            let mut modes = node.modes.clone();
            modes[cell] = mode;
            nodes += 1;
            let Some(r) = relax::solve(problem, &layout, &modes, policy)? else { continue };
            if incumbent
                .as_ref()
                .is_some_and(|i| r.value >= i.objective - gap_tol(i.objective))
            {
                continue;
            }
            heap.push(Node {
                bound: r.value,
                modes,
                relax: r,
            });
        }
    }
    if !exhausted {
        best_bound = heap.peek().map_or(best_bound, |n| n.bound);
    } else if let Some(inc) = &incumbent {
        best_bound = best_bound.min(inc.objective);
    }

    let Some(inc) = incumbent else {
        let mut s = Solution::empty(problem, SolveStatus::Infeasible);
        s.nodes = nodes;
        s.bound = best_bound;
        s.report.push("no schedule satisfies the on/off structure of the connected EVs".into());
        return Ok(s);
    };
    let mut p_ch = inc.p_ch;
    top_up(problem, &layout, &mut p_ch, &inc.p_dis);
    let (ch, dis) = to_matrices(problem, &layout, &p_ch, &inc.p_dis);
    let status = if relaxed {
        SolveStatus::Relaxed
    } else if exhausted {
        SolveStatus::Optimal
    } else {
        SolveStatus::Feasible
    };
    let mut sol = Solution::from_powers(problem, ch, dis, status);
    sol.nodes = nodes;
    sol.bound = best_bound;
    if relaxed {
        sol.report = violation_report(problem, &sol);
    }
    log::debug!(
        "schedule solve: {} cells, {} nodes, objective {:.6}, bound {:.6}, status {}",
        layout.cells.len(),
        nodes,
        sol.objective,
        sol.bound,
        sol.status.name()
    );
    Ok(sol)
}
