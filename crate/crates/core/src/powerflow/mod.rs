//! Full Newton-Raphson AC power flow in polar coordinates.

mod derivatives;
pub mod mismatch;
mod ybus;

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use derivatives::{power_derivatives, power_injections, weighted_hessian, Partial, PowerDerivatives};
pub use ybus::{branch_admittances, build_ybus, Ybus};

use crate::netmodel::{BusId, BusKind, NetworkCase};
use crate::sparse::Triplets;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("branch {branch} has zero impedance")]
    ZeroImpedance { branch: usize },
    #[error("branch {branch} has non-positive ratio")]
    InvalidRatio { branch: usize },
    #[error("no slack bus")]
    NoSlack,
    #[error("more than one slack bus: {0:?}")]
    MultipleSlack(Vec<BusId>),
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Infinity-norm bound on the per-unit mismatch vector.
    pub tolerance: f64,
    /// Cap on Newton updates.
    pub max_iterations: usize,
    /// Ignore stored voltages and start from 1.0∠slack-angle.
    pub flat_start: bool,
    /// Switch PV buses to PQ when their generators hit reactive limits.
    pub enforce_q_limits: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 20,
            flat_start: false,
            enforce_q_limits: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

impl BranchFlow {
    pub fn losses(&self) -> f64 {
        self.p_from + self.p_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Net calculated injection per bus (generation minus load).
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub converged: bool,
    /// Mismatch evaluations performed, including the final converged check.
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Bus with the largest residual at the last iterate.
    pub worst_bus: Option<BusId>,
    /// Final bus classification used by the solver (after any PV→PQ switching).
    pub bus_kinds: Vec<BusKind>,
}

impl PowerFlowSolution {
    pub fn min_max_voltage(&self, buses: impl Iterator<Item = usize>) -> Option<(f64, f64)> {
        buses.map(|i| self.v_mag[i]).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BusLookup {
    pos: HashMap<BusId, usize>,
}

impl BusLookup {
    pub(crate) fn new(case: &NetworkCase) -> Result<Self, PowerFlowError> {
        Ok(BusLookup {
            pos: case
                .buses
                .iter()
                .enumerate()
                .map(|(i, b)| (b.id, i))
                .collect(),
        })
    }

    pub(crate) fn position(&self, id: BusId) -> Result<usize, PowerFlowError> {
        self.pos
            .get(&id)
            .copied()
            .ok_or(PowerFlowError::UnknownBus(id))
    }
}

/// Index sets and specified injections for one Newton run.
struct Setup {
    slack: usize,
    pv: Vec<usize>,
    pq: Vec<usize>,
    p_spec: Vec<f64>,
    q_spec: Vec<f64>,
    kinds: Vec<BusKind>,
}

fn classify(case: &NetworkCase, lookup: &BusLookup) -> Result<Setup, PowerFlowError> {
    let n = case.buses.len();
    let mut p_spec: Vec<f64> = case.buses.iter().map(|b| -b.p_load).collect();
    let mut q_spec: Vec<f64> = case.buses.iter().map(|b| -b.q_load).collect();
    let mut has_gen = vec![false; n];
    for g in case.generators.iter().filter(|g| g.in_service) {
        let i = lookup.position(g.bus_id)?;
        p_spec[i] += g.p;
        q_spec[i] += g.q;
        has_gen[i] = true;
    }
    let slacks: Vec<usize> = (0..n)
        .filter(|&i| case.buses[i].kind == BusKind::Slack)
        .collect();
    let slack = match slacks.as_slice() {
        [] => return Err(PowerFlowError::NoSlack),
        [s] => *s,
        many => {
            return Err(PowerFlowError::MultipleSlack(
                many.iter().map(|&i| case.buses[i].id).collect(),
            ))
        }
    };
    let mut kinds: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
    for i in 0..n {
        if kinds[i] == BusKind::Pv && !has_gen[i] {
            kinds[i] = BusKind::Pq;
        }
    }
    let pv = (0..n).filter(|&i| kinds[i] == BusKind::Pv).collect();
    let pq = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    Ok(Setup {
        slack,
        pv,
        pq,
        p_spec,
        q_spec,
        kinds,
    })
}

/// Voltage setpoint of the first in-service generator at each bus.
fn setpoints(case: &NetworkCase, lookup: &BusLookup) -> Vec<Option<f64>> {
    let mut out = vec![None; case.buses.len()];
    for g in case.generators.iter().filter(|g| g.in_service) {
        if let Ok(i) = lookup.position(g.bus_id) {
            out[i].get_or_insert(g.v_set);
        }
    }
    out
}

struct NewtonOutcome {
    vm: Vec<f64>,
    va: Vec<f64>,
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
    worst: Option<usize>,
}

fn mismatch(setup: &Setup, ybus: &Ybus, vm: &[f64], va: &[f64]) -> (Vec<f64>, f64, Option<usize>) {
    let (p, q) = power_injections(ybus, vm, va);
    let npvpq = setup.pv.len() + setup.pq.len();
    let mut f = Vec::with_capacity(npvpq + setup.pq.len());
    let mut worst = None;
    let mut max: f64 = 0.0;
    let mut track = |i: usize, v: f64| {
        if v.abs() > max || v.is_nan() {
            max = if v.is_nan() { f64::INFINITY } else { v.abs() };
            worst = Some(i);
        }
    };
    for &i in setup.pv.iter().chain(&setup.pq) {
        let d = p[i] - setup.p_spec[i];
        track(i, d);
        f.push(d);
    }
    for &i in &setup.pq {
        let d = q[i] - setup.q_spec[i];
        track(i, d);
        f.push(d);
    }
    (f, max, worst)
}

fn newton(
    setup: &Setup,
    ybus: &Ybus,
    mut vm: Vec<f64>,
    mut va: Vec<f64>,
    opts: &SolverOptions,
) -> Result<NewtonOutcome, PowerFlowError> {
    let n = vm.len();
    let pvpq: Vec<usize> = setup.pv.iter().chain(&setup.pq).copied().collect();
    let mut th_col = vec![usize::MAX; n];
    for (c, &i) in pvpq.iter().enumerate() {
        th_col[i] = c;
    }
    let mut v_col = vec![usize::MAX; n];
    for (c, &i) in setup.pq.iter().enumerate() {
        v_col[i] = pvpq.len() + c;
    }
    let dim = pvpq.len() + setup.pq.len();

    let mut iterations = 0;
    loop {
        let (f, max, worst) = mismatch(setup, ybus, &vm, &va);
        iterations += 1;
        if max <= opts.tolerance {
            return Ok(NewtonOutcome {
                vm,
                va,
                converged: true,
                iterations,
                max_mismatch: max,
                worst,
            });
        }
        if iterations > opts.max_iterations || !max.is_finite() {
            return Ok(NewtonOutcome {
                vm,
                va,
                converged: false,
                iterations,
                max_mismatch: max,
                worst,
            });
        }
        let jac = jacobian(ybus, &vm, &va, &th_col, &v_col, dim);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = jac
            .to_csc()
            .solve(&rhs)
            .map_err(|_| PowerFlowError::SingularJacobian { iteration: iterations })?;
        for &i in &pvpq {
            va[i] += dx[th_col[i]];
        }
        for &i in &setup.pq {
            vm[i] += dx[v_col[i]];
        }
    }
}

/// Reduced Jacobian: rows are ΔP at PV+PQ buses then ΔQ at PQ buses; columns
/// are θ at PV+PQ buses then |V| at PQ buses. `usize::MAX` marks an absent
/// row/column.
pub(crate) fn jacobian(
    ybus: &Ybus,
    vm: &[f64],
    va: &[f64],
    th_col: &[usize],
    v_col: &[usize],
    dim: usize,
) -> Triplets {
    let d = power_derivatives(ybus, vm, va);
    let mut t = Triplets::with_capacity(dim, dim, 4 * d.partials.len());
    for pa in &d.partials {
        // row index for P equation of bus `row` equals its θ column, Q row equals its V column
        let p_row = th_col[pa.row];
        let q_row = v_col[pa.row];
        let th = th_col[pa.col];
        let v = v_col[pa.col];
        if p_row != usize::MAX {
            if th != usize::MAX {
                t.push(p_row, th, pa.dp_dth);
            }
            if v != usize::MAX {
                t.push(p_row, v, pa.dp_dv);
            }
        }
        if q_row != usize::MAX {
            if th != usize::MAX {
                t.push(q_row, th, pa.dq_dth);
            }
            if v != usize::MAX {
                t.push(q_row, v, pa.dq_dv);
            }
        }
    }
    t
}

/// Dense reduced Jacobian at the given voltages, using the case's bus
/// classification. Exposed for verification against finite differences.
pub fn reduced_jacobian(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Result<Vec<Vec<f64>>, PowerFlowError> {
    let lookup = BusLookup::new(case)?;
    let ybus = ybus::build_with(case, &lookup)?;
    let setup = classify(case, &lookup)?;
    let n = case.buses.len();
    let mut th_col = vec![usize::MAX; n];
    let mut v_col = vec![usize::MAX; n];
    let npvpq = setup.pv.len() + setup.pq.len();
    for (c, &i) in setup.pv.iter().chain(&setup.pq).enumerate() {
        th_col[i] = c;
    }
    for (c, &i) in setup.pq.iter().enumerate() {
        v_col[i] = npvpq + c;
    }
    Ok(jacobian(&ybus, vm, va, &th_col, &v_col, npvpq + setup.pq.len()).to_dense())
}

/// The mismatch vector ordered like [`reduced_jacobian`]'s rows.
pub fn reduced_mismatch(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Result<Vec<f64>, PowerFlowError> {
    let lookup = BusLookup::new(case)?;
    let ybus = ybus::build_with(case, &lookup)?;
    let setup = classify(case, &lookup)?;
    Ok(mismatch(&setup, &ybus, vm, va).0)
}

/// Branch end flows `S_f = V_f conj(I_f)`, `S_t = V_t conj(I_t)`.
pub fn branch_flows(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Vec<BranchFlow> {
    let pos: HashMap<BusId, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    case.branches
        .iter()
        .map(|br| {
            let zero = BranchFlow {
                p_from: 0.0,
                q_from: 0.0,
                p_to: 0.0,
                q_to: 0.0,
            };
            let (Some(&f), Some(&t)) = (pos.get(&br.from_bus), pos.get(&br.to_bus)) else {
                return zero;
            };
            if !br.in_service || !case.buses[f].in_service() || !case.buses[t].in_service() {
                return zero;
            }
            let (yff, yft, ytf, ytt) = branch_admittances(br);
            let vf = Complex64::from_polar(vm[f], va[f]);
            let vt = Complex64::from_polar(vm[t], va[t]);
            let sf = vf * (yff * vf + yft * vt).conj();
            let st = vt * (ytf * vf + ytt * vt).conj();
            BranchFlow {
                p_from: sf.re,
                q_from: sf.im,
                p_to: st.re,
                q_to: st.im,
            }
        })
        .collect()
}

fn initial_voltages(case: &NetworkCase, setup: &Setup, set: &[Option<f64>], flat: bool) -> (Vec<f64>, Vec<f64>) {
    let slack_ang = case.buses[setup.slack].v_ang;
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if flat || !(b.v_mag > 0.0) { 1.0 } else { b.v_mag })
        .collect();
    let mut va: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if flat { slack_ang } else { b.v_ang })
        .collect();
    va[setup.slack] = slack_ang;
    for i in setup.pv.iter().copied().chain([setup.slack]) {
        if let Some(v) = set[i] {
            vm[i] = v;
        }
    }
    for (i, b) in case.buses.iter().enumerate() {
        if !b.in_service() {
            vm[i] = b.v_mag;
            va[i] = b.v_ang;
        }
    }
    (vm, va)
}

/// Solves the AC power flow. The case is not modified; see [`apply_solution`].
///
/// Non-convergence is reported through `converged = false`; structural
/// problems and a singular Jacobian are errors.
pub fn solve(case: &NetworkCase, opts: &SolverOptions) -> Result<PowerFlowSolution, PowerFlowError> {
    if !(opts.tolerance > 0.0) {
        return Err(PowerFlowError::InvalidOptions("tolerance must be positive".into()));
    }
    let lookup = BusLookup::new(case)?;
    let ybus = ybus::build_with(case, &lookup)?;
    let mut setup = classify(case, &lookup)?;
    let set = setpoints(case, &lookup);
    let (mut vm, mut va) = initial_voltages(case, &setup, &set, opts.flat_start);

    let mut total_iterations = 0;
    let outcome = loop {
        let out = newton(&setup, &ybus, vm, va, opts)?;
        total_iterations += out.iterations;
        if !out.converged || !opts.enforce_q_limits {
            break out;
        }
        let switched = switch_violated_pv(case, &lookup, &ybus, &mut setup, &out);
        if !switched {
            break out;
        }
        vm = out.vm;
        va = out.va;
    };

    let (p_inj, q_inj) = power_injections(&ybus, &outcome.vm, &outcome.va);
    let branch_flows = branch_flows(case, &outcome.vm, &outcome.va);
    Ok(PowerFlowSolution {
        branch_flows,
        p_inj,
        q_inj,
        converged: outcome.converged,
        iterations: total_iterations,
        max_mismatch: outcome.max_mismatch,
        worst_bus: outcome.worst.map(|i| case.buses[i].id),
        bus_kinds: setup.kinds,
        v_mag: outcome.vm,
        v_ang: outcome.va,
    })
}

/// Converts PV buses whose generators exceed reactive limits into PQ buses
/// held at the violated limit. Returns whether anything changed.
fn switch_violated_pv(
    case: &NetworkCase,
    lookup: &BusLookup,
    ybus: &Ybus,
    setup: &mut Setup,
    out: &NewtonOutcome,
) -> bool {
    let (_, q) = power_injections(ybus, &out.vm, &out.va);
    let mut switched = false;
    for &i in &setup.pv.clone() {
        let (mut qmin, mut qmax) = (0.0, 0.0);
        for g in case.generators.iter().filter(|g| g.in_service) {
            if lookup.position(g.bus_id).ok() == Some(i) {
                qmin += g.q_min;
                qmax += g.q_max;
            }
        }
        let q_gen = q[i] + case.buses[i].q_load;
        let limit = if q_gen > qmax {
            Some(qmax)
        } else if q_gen < qmin {
            Some(qmin)
        } else {
            None
        };
        if let Some(lim) = limit {
            setup.q_spec[i] = lim - case.buses[i].q_load;
            setup.kinds[i] = BusKind::Pq;
            switched = true;
        }
    }
    if switched {
        let n = setup.kinds.len();
        setup.pv = (0..n).filter(|&i| setup.kinds[i] == BusKind::Pv).collect();
        setup.pq = (0..n).filter(|&i| setup.kinds[i] == BusKind::Pq).collect();
    }
    switched
}

/// Writes voltages into the buses and dispatches the slack/PV generators so
/// that the case's specified injections reproduce the solution.
///
/// The slack bus residual active power goes to its first in-service
/// generator; reactive output at voltage-controlled buses is shared equally.
pub fn apply_solution(case: &mut NetworkCase, sol: &PowerFlowSolution) {
    for (i, bus) in case.buses.iter_mut().enumerate() {
        bus.v_mag = sol.v_mag[i];
        bus.v_ang = sol.v_ang[i];
    }
    let pos: HashMap<BusId, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    for (i, bus) in case.buses.iter().enumerate() {
        let kind = sol.bus_kinds[i];
        if !matches!(kind, BusKind::Slack | BusKind::Pv) {
            continue;
        }
        let gens: Vec<usize> = case
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.in_service && pos.get(&g.bus_id) == Some(&i))
            .map(|(k, _)| k)
            .collect();
        let Some(&first) = gens.first() else {
            continue;
        };
        let q_total = sol.q_inj[i] + bus.q_load;
        let share = q_total / gens.len() as f64;
        if kind == BusKind::Slack {
            let others: f64 = gens[1..].iter().map(|&k| case.generators[k].p).sum();
            case.generators[first].p = sol.p_inj[i] + bus.p_load - others;
        }
        for &k in &gens {
            case.generators[k].q = share;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Branch, Bus, GenKind, Generator};

    fn two_bus(p: f64, q: f64) -> NetworkCase {
        let mut case = NetworkCase::new(100.0);
        case.buses.push(Bus::new(1, BusKind::Slack, 10.0));
        let mut b = Bus::new(2, BusKind::Pq, 10.0);
        b.p_load = p;
        b.q_load = q;
        case.buses.push(b);
        case.branches.push(Branch::line(1, 2, 0.0, 0.1, 0.0));
        let mut g = Generator::new(1, GenKind::TnUnit);
        g.p_max = 10.0;
        g.q_min = -10.0;
        g.q_max = 10.0;
        case.generators.push(g);
        case
    }

    #[test]
    fn zero_load_is_flat_in_one_pass() {
        let case = two_bus(0.0, 0.0);
        let sol = solve(&case, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.v_mag, vec![1.0, 1.0]);
        assert_eq!(sol.v_ang, vec![0.0, 0.0]);
        assert!(sol.branch_flows.iter().all(|f| f.p_from == 0.0 && f.q_from == 0.0));
    }

    #[test]
    fn slack_angle_is_preserved() {
        let mut case = two_bus(0.4, 0.1);
        case.buses[0].v_ang = 0.3;
        let sol = solve(&case, &SolverOptions { flat_start: true, ..Default::default() }).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.v_ang[0], 0.3);
    }

    #[test]
    fn non_convergence_is_reported() {
        // far beyond the nose of a 0.1 pu line
        let case = two_bus(20.0, 5.0);
        let sol = solve(&case, &SolverOptions::default());
        match sol {
            Ok(s) => assert!(!s.converged),
            Err(e) => assert!(matches!(e, PowerFlowError::SingularJacobian { .. })),
        }
    }

    #[test]
    fn missing_slack_is_an_error() {
        let mut case = two_bus(0.1, 0.0);
        case.buses[0].kind = BusKind::Pq;
        assert_eq!(solve(&case, &SolverOptions::default()).unwrap_err(), PowerFlowError::NoSlack);
    }

    #[test]
    fn q_limits_switch_pv_to_pq() {
        let mut case = two_bus(0.2, 0.0);
        case.buses.push(Bus::new(3, BusKind::Pv, 10.0));
        case.branches.push(Branch::line(2, 3, 0.0, 0.2, 0.0));
        case.buses[1].q_load = 0.5;
        let mut g = Generator::new(3, GenKind::TnUnit);
        g.v_set = 1.05;
        g.q_min = -0.05;
        g.q_max = 0.05;
        g.p_max = 1.0;
        case.generators.push(g);

        let free = solve(&case, &SolverOptions::default()).unwrap();
        assert!(free.converged);
        assert!((free.v_mag[2] - 1.05).abs() < 1e-12);
        assert!(free.q_inj[2] > 0.05);

        let opts = SolverOptions {
            enforce_q_limits: true,
            ..Default::default()
        };
        let limited = solve(&case, &opts).unwrap();
        assert!(limited.converged);
        assert_eq!(limited.bus_kinds[2], BusKind::Pq);
        assert!((limited.q_inj[2] - 0.05).abs() < 1e-8);
        assert!(limited.v_mag[2] < 1.05);
    }

    #[test]
    fn apply_solution_balances_slack() {
        let mut case = two_bus(0.5, 0.2);
        let sol = solve(&case, &SolverOptions::default()).unwrap();
        apply_solution(&mut case, &sol);
        let report = mismatch::evaluate(&case, &sol.v_mag, &sol.v_ang);
        for d in &report.per_bus {
            assert!(d.norm() < 1e-8);
        }
        assert!((case.generators[0].p - 0.5).abs() < 1e-8, "lossless line");
    }
}
