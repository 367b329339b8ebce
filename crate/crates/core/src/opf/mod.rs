//! AC optimal power flow with quadratic generator costs, and the iterative
//! relaxation that handles discrete tap positions.
//!
//! Variables are `[θ, V, Pg, Qg]` over all buses and the dispatchable
//! generators (in service, controllable, not PV units). Equalities are the
//! nodal P/Q balances plus the reference angle; inequalities are simple
//! bounds on V, Pg and Qg.

pub mod ipm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BusKind, GenKind, Generator, NetworkCase};
use crate::oltc::tap_update;
use crate::powerflow::{self, build_ybus, power_derivatives, weighted_hessian, PowerFlowError, SolverOptions, Ybus};
use crate::sparse::Triplets;
use ipm::{Bound, IpmOptions, Nlp};

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("invalid OPF problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("singular KKT system at interior-point iteration {iteration}")]
    Singular { iteration: usize },
    #[error("continuous subproblem infeasible in relaxation round {round} (limits widened by {slack:.4} pu, violation {violation:.3e})")]
    Infeasible { round: usize, slack: f64, violation: f64 },
}

pub fn is_dispatchable(g: &Generator) -> bool {
    g.in_service && g.controllable && g.kind != GenKind::DnPv
}

/// Operating cost of the dispatchable generators at their current output.
pub fn operating_cost(case: &NetworkCase) -> f64 {
    case.generators
        .iter()
        .filter(|g| is_dispatchable(g))
        .map(|g| g.cost.eval_mw(g.p * case.base_mva))
        .sum()
}

#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub case: NetworkCase,
    /// Final voltage limits per bus position.
    pub v_final: Vec<(f64, f64)>,
    pub dispatchable: Vec<usize>,
}

impl OpfProblem {
    /// Final limits are the buses' own `v_min`/`v_max`.
    pub fn new(case: &NetworkCase) -> Result<Self, OpfError> {
        let limits = case.buses.iter().map(|b| (b.v_min, b.v_max)).collect();
        Self::with_limits(case, limits)
    }

    /// Distribution buses (named `dn:…`) get `dn_limits`; the rest keep
    /// their own limits.
    pub fn for_combined(case: &NetworkCase, dn_limits: (f64, f64)) -> Result<Self, OpfError> {
        let limits = case
            .buses
            .iter()
            .map(|b| {
                if b.name.starts_with("dn:") {
                    dn_limits
                } else {
                    (b.v_min, b.v_max)
                }
            })
            .collect();
        Self::with_limits(case, limits)
    }

    pub fn with_limits(case: &NetworkCase, v_final: Vec<(f64, f64)>) -> Result<Self, OpfError> {
        if v_final.len() != case.buses.len() {
            return Err(OpfError::Invalid("one voltage range per bus is required".into()));
        }
        if let Some((i, _)) = v_final.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
            return Err(OpfError::Invalid(format!("empty voltage range at bus {}", case.buses[i].id)));
        }
        if case.buses.iter().any(|b| b.kind == BusKind::Isolated) {
            return Err(OpfError::Invalid("isolated buses are not supported".into()));
        }
        let mut dispatchable = Vec::new();
        for (i, g) in case.generators.iter().enumerate() {
            if !is_dispatchable(g) {
                continue;
            }
            if !(g.p_min.is_finite() && g.p_max.is_finite() && g.p_min <= g.p_max) {
                return Err(OpfError::Invalid(format!("generator {} needs finite P bounds", i + 1)));
            }
            if g.cost.c2 < 0.0 {
                return Err(OpfError::Invalid(format!("generator {} has a concave cost", i + 1)));
            }
            dispatchable.push(i);
        }
        if dispatchable.is_empty() {
            return Err(OpfError::Invalid("no dispatchable generators".into()));
        }
        Ok(OpfProblem {
            case: case.clone(),
            v_final,
            dispatchable,
        })
    }

    /// Final limits widened by `slack` on both sides.
    pub fn relaxed(&self, slack: f64) -> Vec<(f64, f64)> {
        self.v_final
            .iter()
            .map(|&(lo, hi)| ((lo - slack).max(0.0), hi + slack))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OpfOptions {
    pub ipm: IpmOptions,
    /// Used for the verification power flow.
    pub solver: SolverOptions,
    /// Voltage tolerance of the verification check.
    pub voltage_tolerance: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            ipm: IpmOptions::default(),
            solver: SolverOptions::default(),
            voltage_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSchedule {
    /// Rounds over which the limits tighten linearly (K).
    pub rounds: usize,
    /// Widening of the first round, per unit on each side.
    pub initial_slack: f64,
    /// Further rounds allowed at the final limits while taps still move.
    pub max_extra_rounds: usize,
}

impl Default for RelaxationSchedule {
    fn default() -> Self {
        RelaxationSchedule {
            rounds: 5,
            initial_slack: 0.1,
            max_extra_rounds: 30,
        }
    }
}

impl RelaxationSchedule {
    /// Limit widening used in round `k` (1-based).
    pub fn slack(&self, k: usize) -> f64 {
        if self.rounds <= 1 || k >= self.rounds {
            0.0
        } else {
            self.initial_slack * (self.rounds - k) as f64 / (self.rounds - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub slack: f64,
    pub objective: f64,
    /// Largest violation of the final limits and balances at this round's point.
    pub max_violation: f64,
    pub taps_moved: usize,
    /// Earlier tap moves undone before this round succeeded.
    pub taps_reverted: usize,
    pub ipm_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    /// `(p, q)` for every generator, per unit; non-dispatchable units unchanged.
    pub dispatch: Vec<(f64, f64)>,
    pub taps: Vec<i32>,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
    /// Largest of the scaled feasibility, stationarity and complementarity conditions.
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub converged: bool,
    pub iterations: usize,
    pub relaxation_rounds: usize,
    pub tap_moves: usize,
    /// False when the extra-round budget ran out with taps still moving.
    pub tap_quiescent: bool,
    pub trace: Vec<RoundTrace>,
}

/// The AC OPF as a generic nonlinear program.
struct AcOpf<'a> {
    case: &'a NetworkCase,
    ybus: Ybus,
    n: usize,
    slack: usize,
    theta_ref: f64,
    disp: &'a [usize],
    disp_bus: Vec<usize>,
    /// Load minus fixed generation per bus.
    demand_p: Vec<f64>,
    demand_q: Vec<f64>,
    bounds: Vec<Bound>,
}

impl<'a> AcOpf<'a> {
    fn new(case: &'a NetworkCase, disp: &'a [usize], limits: &[(f64, f64)]) -> Result<Self, OpfError> {
        let ybus = build_ybus(case)?;
        let n = case.buses.len();
        let index = case.index();
        let slack = case
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or(PowerFlowError::NoSlack)?;
        let mut demand_p: Vec<f64> = case.buses.iter().map(|b| b.p_load).collect();
        let mut demand_q: Vec<f64> = case.buses.iter().map(|b| b.q_load).collect();
        for (i, g) in case.generators.iter().enumerate() {
            if g.in_service && !disp.contains(&i) {
                let pos = index.by_id[&g.bus_id];
                demand_p[pos] -= g.p;
                demand_q[pos] -= g.q;
            }
        }
        let disp_bus: Vec<usize> = disp
            .iter()
            .map(|&gi| index.by_id[&case.generators[gi].bus_id])
            .collect();
        let nd = disp.len();
        let mut bounds = Vec::with_capacity(2 * n + 4 * nd);
        for (i, &(lo, hi)) in limits.iter().enumerate() {
            bounds.push(Bound::lower(n + i, lo));
            bounds.push(Bound::upper(n + i, hi));
        }
        for (j, &gi) in disp.iter().enumerate() {
            let g = &case.generators[gi];
            bounds.push(Bound::lower(2 * n + j, g.p_min));
            bounds.push(Bound::upper(2 * n + j, g.p_max));
            if g.q_min.is_finite() {
                bounds.push(Bound::lower(2 * n + nd + j, g.q_min));
            }
            if g.q_max.is_finite() {
                bounds.push(Bound::upper(2 * n + nd + j, g.q_max));
            }
        }
        Ok(AcOpf {
            case,
            ybus,
            n,
            slack,
            theta_ref: case.buses[slack].v_ang,
            disp,
            disp_bus,
            demand_p,
            demand_q,
            bounds,
        })
    }

    fn initial_point(&self) -> Vec<f64> {
        let n = self.n;
        let nd = self.disp.len();
        let mut x = vec![0.0; 2 * n + 2 * nd];
        for (i, b) in self.case.buses.iter().enumerate() {
            x[i] = b.v_ang;
            x[n + i] = b.v_mag;
        }
        for (j, &gi) in self.disp.iter().enumerate() {
            let g = &self.case.generators[gi];
            x[2 * n + j] = g.p.clamp(g.p_min, g.p_max);
            x[2 * n + nd + j] = g.q.clamp(g.q_min, g.q_max);
        }
        x
    }

    fn costs(&self) -> impl Iterator<Item = &crate::netmodel::QuadraticCost> {
        self.disp.iter().map(|&gi| &self.case.generators[gi].cost)
    }

    /// Balance residuals only (no reference-angle row).
    fn balance(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (vm, va) = (&x[n..2 * n], &x[..n]);
        let (p, q) = powerflow::power_injections(&self.ybus, vm, va);
        let nd = self.disp.len();
        let mut g = Vec::with_capacity(2 * n);
        for i in 0..n {
            g.push(p[i] + self.demand_p[i]);
        }
        for i in 0..n {
            g.push(q[i] + self.demand_q[i]);
        }
        for (j, &bus) in self.disp_bus.iter().enumerate() {
            g[bus] -= x[2 * n + j];
            g[n + bus] -= x[2 * n + nd + j];
        }
        g
    }

    fn violation(&self, x: &[f64], limits: &[(f64, f64)]) -> f64 {
        let n = self.n;
        let nd = self.disp.len();
        let mut worst = self.balance(x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, &(lo, hi)) in limits.iter().enumerate() {
            let v = x[n + i];
            worst = worst.max(lo - v).max(v - hi);
        }
        for (j, &gi) in self.disp.iter().enumerate() {
            let g = &self.case.generators[gi];
            let (p, q) = (x[2 * n + j], x[2 * n + nd + j]);
            worst = worst.max(g.p_min - p).max(p - g.p_max);
            worst = worst.max(g.q_min - q).max(q - g.q_max);
        }
        worst
    }
}

impl Nlp for AcOpf<'_> {
    fn num_vars(&self) -> usize {
        2 * self.n + 2 * self.disp.len()
    }

    fn num_eq(&self) -> usize {
        2 * self.n + 1
    }

    fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let base = self.case.base_mva;
        let off = 2 * self.n;
        let mut grad = vec![0.0; self.num_vars()];
        let mut f = 0.0;
        for (j, c) in self.costs().enumerate() {
            let p_mw = x[off + j] * base;
            f += c.eval_mw(p_mw);
            grad[off + j] = base * (2.0 * c.c2 * p_mw + c.c1);
        }
        (f, grad)
    }

    fn equalities(&self, x: &[f64]) -> (Vec<f64>, Triplets) {
        let n = self.n;
        let nd = self.disp.len();
        let mut g = self.balance(x);
        g.push(x[self.slack] - self.theta_ref);

        let d = power_derivatives(&self.ybus, &x[n..2 * n], &x[..n]);
        let mut jac = Triplets::with_capacity(self.num_eq(), self.num_vars(), 4 * d.partials.len() + 2 * nd + 1);
        for pa in &d.partials {
            jac.push(pa.row, pa.col, pa.dp_dth);
            jac.push(pa.row, n + pa.col, pa.dp_dv);
            jac.push(n + pa.row, pa.col, pa.dq_dth);
            jac.push(n + pa.row, n + pa.col, pa.dq_dv);
        }
        for (j, &bus) in self.disp_bus.iter().enumerate() {
            jac.push(bus, 2 * n + j, -1.0);
            jac.push(n + bus, 2 * n + nd + j, -1.0);
        }
        jac.push(2 * n, self.slack, 1.0);
        (g, jac)
    }

    fn lagrangian_hessian(&self, x: &[f64], lam: &[f64]) -> Triplets {
        let n = self.n;
        let nv = self.num_vars();
        let hg = weighted_hessian(&self.ybus, &x[n..2 * n], &x[..n], &lam[..n], &lam[n..2 * n]);
        let mut h = Triplets::with_capacity(nv, nv, hg.entries().len() + self.disp.len());
        for &(r, c, v) in hg.entries() {
            h.push(r, c, v);
        }
        let base = self.case.base_mva;
        for (j, c) in self.costs().enumerate() {
            h.push(2 * n + j, 2 * n + j, 2.0 * c.c2 * base * base);
        }
        h
    }
}

fn continuous(
    problem: &OpfProblem,
    case: &NetworkCase,
    limits: &[(f64, f64)],
    x0: Option<&[f64]>,
    opts: &OpfOptions,
) -> Result<(OpfSolution, Vec<f64>), OpfError> {
    let nlp = AcOpf::new(case, &problem.dispatchable, limits)?;
    let mut start = match x0 {
        Some(x) => x.to_vec(),
        None => nlp.initial_point(),
    };
    // warm starts come from wider limits; pull them back inside
    for (i, &(lo, hi)) in limits.iter().enumerate() {
        start[nlp.n + i] = start[nlp.n + i].clamp(lo, hi);
    }
    let r = ipm::solve(&nlp, &start, &opts.ipm)
        .map_err(|e| OpfError::Singular { iteration: e.iteration })?;
    let n = nlp.n;
    let nd = problem.dispatchable.len();
    let max_violation = nlp.violation(&r.x, limits);

    let mut dispatch: Vec<(f64, f64)> = case.generators.iter().map(|g| (g.p, g.q)).collect();
    for (j, &gi) in problem.dispatchable.iter().enumerate() {
        let g = &case.generators[gi];
        dispatch[gi] = (
            r.x[2 * n + j].clamp(g.p_min, g.p_max),
            r.x[2 * n + nd + j].clamp(g.q_min, g.q_max),
        );
    }
    let objective = problem
        .dispatchable
        .iter()
        .map(|&gi| case.generators[gi].cost.eval_mw(dispatch[gi].0 * case.base_mva))
        .sum();
    let sol = OpfSolution {
        dispatch,
        taps: case.taps(),
        v_mag: r.x[n..2 * n].to_vec(),
        v_ang: r.x[..n].to_vec(),
        objective,
        feasible: r.converged && max_violation <= opts.ipm.tolerance,
        kkt_residual: r.kkt_residual(),
        max_violation,
        converged: r.converged,
        iterations: r.iterations,
        relaxation_rounds: 0,
        tap_moves: 0,
        tap_quiescent: true,
        trace: Vec::new(),
    };
    Ok((sol, r.x))
}

/// Continuous OPF with the case's taps held fixed and the given voltage
/// limits (one range per bus position).
pub fn solve_continuous(
    problem: &OpfProblem,
    v_limits: &[(f64, f64)],
    opts: &OpfOptions,
) -> Result<OpfSolution, OpfError> {
    continuous(problem, &problem.case, v_limits, None, opts).map(|(s, _)| s)
}

/// Writes dispatch, taps and voltages into `case`. Generators at voltage-
/// controlled buses get the OPF voltage as their setpoint.
pub fn apply(case: &mut NetworkCase, sol: &OpfSolution) {
    for (k, &t) in sol.taps.iter().enumerate() {
        case.set_tap(k, t).expect("OPF taps stay within bounds");
    }
    for (i, b) in case.buses.iter_mut().enumerate() {
        b.v_mag = sol.v_mag[i];
        b.v_ang = sol.v_ang[i];
    }
    let index = case.index();
    for (g, &(p, q)) in case.generators.iter_mut().zip(&sol.dispatch) {
        g.p = p;
        g.q = q;
        let bus = &case.buses[index.by_id[&g.bus_id]];
        if matches!(bus.kind, BusKind::Pv | BusKind::Slack) {
            g.v_set = bus.v_mag;
        }
    }
}

/// Independent check of a solution: power flow at the returned dispatch and
/// taps, then voltage limits (with tolerance) and generator bounds.
pub fn verify(problem: &OpfProblem, sol: &OpfSolution, opts: &OpfOptions) -> Result<bool, OpfError> {
    let mut case = problem.case.clone();
    apply(&mut case, sol);
    let pf = powerflow::solve(&case, &opts.solver)?;
    if !pf.converged {
        return Ok(false);
    }
    let tol = opts.voltage_tolerance;
    let v_ok = problem
        .v_final
        .iter()
        .zip(&pf.v_mag)
        .all(|(&(lo, hi), &v)| v >= lo - tol && v <= hi + tol);
    powerflow::apply_solution(&mut case, &pf);
    let g_ok = problem.dispatchable.iter().all(|&gi| {
        let g = &case.generators[gi];
        // slack/PV outputs come back from the power flow with solver-level noise
        let eps = 10.0 * opts.solver.tolerance;
        g.p >= g.p_min - eps && g.p <= g.p_max + eps
    });
    Ok(v_ok && g_ok)
}

/// Alternates continuous solves at frozen taps with one deadband tap pass,
/// tightening the voltage limits linearly over `schedule.rounds` rounds.
///
/// Stops once no tap moved and the round's point already satisfies the
/// final limits, or once the limits are final and the taps are quiescent.
/// Taps that reverse direction are frozen. When a round's subproblem fails,
/// the most recent tap pass is undone, its transformers are frozen and the
/// round is retried, going back one pass per failure.
pub fn solve_with_relaxation(
    problem: &OpfProblem,
    schedule: &RelaxationSchedule,
    opts: &OpfOptions,
) -> Result<OpfSolution, OpfError> {
    let mut case = problem.case.clone();
    let index = case.index();
    let controlled: Vec<usize> = case
        .oltcs
        .iter()
        .map(|o| index.by_id[&o.controlled_bus])
        .collect();
    let no = case.oltcs.len();
    let mut last_dir = vec![0i32; no];
    let mut frozen = vec![false; no];
    let mut x: Option<Vec<f64>> = None;
    // transformers moved by each tap pass so far, most recent last
    let mut passes: Vec<Vec<usize>> = Vec::new();
    let mut reverted = 0;
    let mut trace = Vec::new();
    let mut tap_moves = 0;
    let mut iterations = 0;
    let last_round = schedule.rounds.max(1) + schedule.max_extra_rounds;

    let mut round = 1;
    loop {
        let slack = schedule.slack(round);
        let limits = problem.relaxed(slack);
        let attempt = match continuous(problem, &case, &limits, x.as_deref(), opts) {
            Ok((sol, xr)) => {
                iterations += sol.iterations;
                if sol.converged && sol.max_violation <= 1e3 * opts.ipm.tolerance {
                    Ok((sol, xr))
                } else {
                    Err(sol.max_violation)
                }
            }
            Err(OpfError::Singular { .. }) => Err(f64::INFINITY),
            Err(e) => return Err(e),
        };
        let (mut sol, xr) = match attempt {
            Ok(v) => v,
            Err(violation) => {
                // safeguard: undo the most recent tap pass, freeze its
                // transformers and retry this round
                let Some(pass) = passes.pop() else {
                    return Err(OpfError::Infeasible { round, slack, violation });
                };
                for &k in &pass {
                    let t = case.oltcs[k].tap - last_dir[k];
                    case.set_tap(k, t).expect("reverting to a previous tap");
                    frozen[k] = true;
                    tap_moves -= 1;
                }
                reverted += pass.len();
                continue;
            }
        };
        let nlp = AcOpf::new(&case, &problem.dispatchable, &problem.v_final)?;
        let final_violation = nlp.violation(&xr, &problem.v_final);

        let mut deltas = vec![0i32; no];
        for (k, o) in case.oltcs.iter().enumerate() {
            if frozen[k] {
                continue;
            }
            let d = tap_update(o, sol.v_mag[controlled[k]]);
            if d != 0 && d == -last_dir[k] {
                frozen[k] = true;
            } else {
                deltas[k] = d;
            }
        }
        let moved = deltas.iter().filter(|&&d| d != 0).count();
        trace.push(RoundTrace {
            round,
            slack,
            objective: sol.objective,
            max_violation: final_violation,
            taps_moved: moved,
            taps_reverted: std::mem::take(&mut reverted),
            ipm_iterations: sol.iterations,
        });

        let settled = moved == 0 && (slack == 0.0 || final_violation <= opts.ipm.tolerance);
        if settled || round == last_round {
            sol.relaxation_rounds = round;
            sol.tap_moves = tap_moves;
            sol.tap_quiescent = moved == 0;
            sol.iterations = iterations;
            sol.max_violation = final_violation;
            sol.trace = trace;
            sol.feasible = sol.converged && verify(problem, &sol, opts)?;
            return Ok(sol);
        }
        let mut pass = Vec::with_capacity(moved);
        for (k, &d) in deltas.iter().enumerate() {
            if d != 0 {
                let t = case.oltcs[k].tap + d;
                case.set_tap(k, t).expect("tap_update respects bounds");
                last_dir[k] = d;
                pass.push(k);
                tap_moves += 1;
            }
        }
        passes.push(pass);
        x = Some(xr);
        round += 1;
    }
}

/// Per-round diagnostics as CSV, one row per round in [`RoundTrace`] field order.
pub fn trace_csv(trace: &[RoundTrace]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for t in trace {
        wtr.serialize(t).expect("writing to memory");
    }
    let bytes = wtr.into_inner().expect("flush to memory");
    if bytes.is_empty() {
        "round,slack,objective,max_violation,taps_moved,taps_reverted,ipm_iterations\n".into()
    } else {
        String::from_utf8(bytes).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Branch, Bus, QuadraticCost};

    fn one_gen() -> NetworkCase {
        let mut case = NetworkCase::new(100.0);
        case.buses.push(Bus::new(1, BusKind::Slack, 132.0));
        let mut b = Bus::new(2, BusKind::Pq, 132.0);
        b.p_load = 0.5;
        b.q_load = 0.1;
        case.buses.push(b);
        let mut g = Generator::new(1, GenKind::TnUnit);
        g.p_max = 2.0;
        g.q_min = -2.0;
        g.q_max = 2.0;
        g.cost = QuadraticCost::new(0.01, 10.0, 5.0);
        case.generators.push(g);
        case.branches.push(Branch::line(1, 2, 0.01, 0.1, 0.0));
        case
    }

    #[test]
    fn single_generator_covers_load_and_losses() {
        let case = one_gen();
        let problem = OpfProblem::new(&case).unwrap();
        let sol = solve_continuous(&problem, &problem.v_final, &OpfOptions::default()).unwrap();
        assert!(sol.converged && sol.feasible, "{sol:?}");
        let p = sol.dispatch[0].0;
        // losses are positive but small; the cheapest way is to raise voltages
        assert!(p > 0.5 && p < 0.505, "{p}");
        let expect = case.generators[0].cost.eval_mw(p * 100.0);
        assert!((sol.objective - expect).abs() < 1e-9);
        assert!(sol.kkt_residual < 1e-6);
        // loss minimisation pushes both voltages to the upper limit
        assert!((sol.v_mag[1] - 1.1).abs() < 1e-5 || (sol.v_mag[0] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn schedule_tightens_linearly() {
        let s = RelaxationSchedule::default();
        let slacks: Vec<f64> = (1..=6).map(|k| s.slack(k)).collect();
        assert_eq!(slacks[0], 0.1);
        assert!((slacks[2] - 0.05).abs() < 1e-15);
        assert_eq!(slacks[4], 0.0);
        assert_eq!(slacks[5], 0.0);
        assert!(slacks.windows(2).all(|w| w[1] <= w[0]));
        let k1 = RelaxationSchedule { rounds: 1, ..s };
        assert_eq!(k1.slack(1), 0.0);
    }

    #[test]
    fn in_band_case_settles_in_one_round() {
        // lossless line: voltages do not affect cost, so the optimum stays in band
        let mut case = one_gen();
        case.branches[0].r = 0.0;
        let problem = OpfProblem::new(&case).unwrap();
        let sol = solve_with_relaxation(&problem, &RelaxationSchedule::default(), &OpfOptions::default()).unwrap();
        assert_eq!(sol.relaxation_rounds, 1);
        assert_eq!(sol.tap_moves, 0);
        assert!(sol.feasible);
        assert!(sol.v_mag.iter().all(|&v| (0.9..=1.1).contains(&v)));
    }

    #[test]
    fn single_round_schedule_is_continuous_plus_one_tap_pass() {
        let case = one_gen();
        let problem = OpfProblem::new(&case).unwrap();
        let opts = OpfOptions::default();
        let k1 = RelaxationSchedule { rounds: 1, initial_slack: 0.1, max_extra_rounds: 0 };
        let a = solve_with_relaxation(&problem, &k1, &opts).unwrap();
        let b = solve_continuous(&problem, &problem.v_final, &opts).unwrap();
        assert_eq!(a.relaxation_rounds, 1);
        assert!((a.objective - b.objective).abs() < 1e-9);
    }
}
