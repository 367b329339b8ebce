//! Standalone residual evaluator.
//!
//! Recomputes bus injections branch by branch from the pi model, without the
//! Y-bus or any Jacobian code, so it can audit the Newton solver.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::netmodel::{BusKind, NetworkCase};

#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    /// Calculated minus specified complex injection per bus position.
    pub per_bus: Vec<Complex64>,
    /// Largest |ΔP| over PV/PQ buses and |ΔQ| over PQ buses.
    pub max_abs: f64,
}

fn end_currents(
    r: f64,
    x: f64,
    b: f64,
    ratio: f64,
    shift: f64,
    vf: Complex64,
    vt: Complex64,
) -> (Complex64, Complex64) {
    let z = Complex64::new(r, x);
    let a = Complex64::from_polar(ratio, shift);
    // ideal transformer on the from side, then series impedance and shunt halves
    let vf_internal = vf / a;
    let i_series = (vf_internal - vt) / z;
    let half = Complex64::new(0.0, b / 2.0);
    let i_to = -i_series + half * vt;
    let i_from_internal = i_series + half * vf_internal;
    (i_from_internal / a.conj(), i_to)
}

/// Net complex injection at every bus computed from branch currents and shunts.
pub fn calculated_injections(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    let pos: HashMap<u32, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let mut current = vec![Complex64::default(); case.buses.len()];
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.in_service() {
            current[i] += Complex64::new(bus.g_shunt, bus.b_shunt) * v[i];
        }
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (Some(&f), Some(&t)) = (pos.get(&br.from_bus), pos.get(&br.to_bus)) else {
            continue;
        };
        if !case.buses[f].in_service() || !case.buses[t].in_service() {
            continue;
        }
        let (i_f, i_t) = end_currents(br.r, br.x, br.b_charging, br.ratio, br.phase_shift, v[f], v[t]);
        current[f] += i_f;
        current[t] += i_t;
    }
    v.iter().zip(current).map(|(v, i)| v * i.conj()).collect()
}

/// Specified injection per bus: in-service generation minus load.
pub fn specified_injections(case: &NetworkCase) -> Vec<Complex64> {
    let pos: HashMap<u32, usize> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let mut s: Vec<Complex64> = case
        .buses
        .iter()
        .map(|b| Complex64::new(-b.p_load, -b.q_load))
        .collect();
    for g in case.generators.iter().filter(|g| g.in_service) {
        if let Some(&i) = pos.get(&g.bus_id) {
            s[i] += Complex64::new(g.p, g.q);
        }
    }
    s
}

/// Residual at voltages `(vm, va)` with generator outputs taken from `case`.
///
/// Buses are classified from `case`: a PV bus without any in-service
/// generator is treated as PQ, matching the solver.
pub fn evaluate(case: &NetworkCase, vm: &[f64], va: &[f64]) -> MismatchReport {
    let calc = calculated_injections(case, vm, va);
    let spec = specified_injections(case);
    let has_gen: Vec<bool> = case
        .buses
        .iter()
        .map(|b| {
            case.generators
                .iter()
                .any(|g| g.in_service && g.bus_id == b.id)
        })
        .collect();
    let per_bus: Vec<Complex64> = calc.iter().zip(&spec).map(|(c, s)| c - s).collect();
    let mut max_abs: f64 = 0.0;
    for (i, bus) in case.buses.iter().enumerate() {
        let d = per_bus[i];
        match bus.kind {
            BusKind::Slack | BusKind::Isolated => {}
            BusKind::Pv if has_gen[i] => max_abs = max_abs.max(d.re.abs()),
            _ => max_abs = max_abs.max(d.re.abs()).max(d.im.abs()),
        }
    }
    MismatchReport { per_bus, max_abs }
}
