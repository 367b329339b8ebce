//! Largest uniform load scaling a distribution template tolerates with its
//! DGs switched off and the tap changer regulating.

use serde::{Deserialize, Serialize};

use super::{Stage, SynthError};
use crate::netmodel::{BusId, BusKind, NetworkCase};
use crate::oltc::{self, RegulateError};
use crate::powerflow::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityOptions {
    pub ceiling: f64,
    pub tolerance: f64,
    pub solver: SolverOptions,
    pub max_rounds: usize,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        CapacityOptions {
            ceiling: 10.0,
            tolerance: 1e-3,
            solver: SolverOptions::default(),
            max_rounds: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub max_scale: f64,
    /// Bus that leaves the voltage band just above `max_scale`; `None` when
    /// the search hit the ceiling.
    pub binding_bus: Option<BusId>,
    /// Total template active load times `max_scale`, per unit.
    pub p_capacity: f64,
    /// Feasible at the ceiling: voltage limits never bind.
    pub unbounded_by_voltage: bool,
    pub probes: usize,
}

/// Outcome of one probe: `Ok(())` when every voltage is inside the limits,
/// otherwise the most offending bus.
fn probe(
    template: &NetworkCase,
    scale: f64,
    v_limits: (f64, f64),
    opts: &CapacityOptions,
) -> Result<Result<(), BusId>, SynthError> {
    let mut case = template.clone();
    for b in &mut case.buses {
        b.p_load *= scale;
        b.q_load *= scale;
    }
    match oltc::regulate(&mut case, &opts.solver, opts.max_rounds) {
        Ok((sol, _)) => {
            let mut worst: Option<(f64, BusId)> = None;
            for (i, b) in case.buses.iter().enumerate() {
                if b.kind == BusKind::Isolated {
                    continue;
                }
                let v = sol.v_mag[i];
                let excess = (v_limits.0 - v).max(v - v_limits.1);
                if excess > 0.0 && worst.map_or(true, |(e, _)| excess > e) {
                    worst = Some((excess, b.id));
                }
            }
            Ok(worst.map_or(Ok(()), |(_, id)| Err(id)))
        }
        Err(RegulateError::InitialDivergence { .. }) => Ok(Err(fallback_bus(&case))),
        Err(RegulateError::Diverged { last, .. }) => Ok(Err(last
            .worst_bus
            .unwrap_or_else(|| fallback_bus(&case)))),
        Err(e) => Err(SynthError::new(Stage::Capacity, e.to_string())),
    }
}

fn fallback_bus(case: &NetworkCase) -> BusId {
    case.buses
        .iter()
        .find(|b| b.kind == BusKind::Pq)
        .or(case.buses.first())
        .map_or(0, |b| b.id)
}

/// Bisection on the uniform load scale `s` (P and Q together) over
/// `[0, ceiling]`. DG outputs are zeroed and the slack generators are set to
/// `source_v`; taps restart from the template position at every probe.
pub fn dn_max_capacity(
    template: &NetworkCase,
    v_limits: (f64, f64),
    source_v: f64,
    opts: &CapacityOptions,
) -> Result<CapacityResult, SynthError> {
    let mut base = template.clone();
    let slack_ids: Vec<BusId> = base
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id)
        .collect();
    for g in &mut base.generators {
        if g.kind.is_distributed() {
            g.p = 0.0;
            g.q = 0.0;
        }
        if slack_ids.contains(&g.bus_id) {
            g.v_set = source_v;
        }
    }
    let (load, _) = base.total_load();

    let mut probes = 1;
    if let Err(bus) = probe(&base, 0.0, v_limits, opts)? {
        return Err(SynthError::new(
            Stage::Capacity,
            format!("template violates voltage limits even without load (bus {bus})"),
        ));
    }
    probes += 1;
    if probe(&base, opts.ceiling, v_limits, opts)?.is_ok() {
        return Ok(CapacityResult {
            max_scale: opts.ceiling,
            binding_bus: None,
            p_capacity: opts.ceiling * load,
            unbounded_by_voltage: true,
            probes,
        });
    }
    let (mut lo, mut hi) = (0.0, opts.ceiling);
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if probe(&base, mid, v_limits, opts)?.is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    probes += 1;
    let binding_bus = match probe(&base, lo + opts.tolerance, v_limits, opts)? {
        Err(bus) => Some(bus),
        // feasibility is not monotone right at the boundary; report the
        // offender at the infeasible bracket end instead
        Ok(()) => probe(&base, hi, v_limits, opts)?.err(),
    };
    Ok(CapacityResult {
        max_scale: lo,
        binding_bus,
        p_capacity: lo * load,
        unbounded_by_voltage: false,
        probes,
    })
}

/// Replicas needed to serve `tn_p_load` with DNs of capacity `dn_capacity`:
/// `ceil(tn_p_load / dn_capacity)`, at least one.
///
/// Quotients within a few ulps of an integer are rounded to it, so that an
/// exact multiple such as 0.9 / 0.3 does not gain a spurious extra replica.
pub fn dn_count(tn_p_load: f64, dn_capacity: f64) -> usize {
    assert!(dn_capacity > 0.0, "DN capacity must be positive");
    let q = tn_p_load / dn_capacity;
    let nearest = q.round();
    let q = if (q - nearest).abs() <= 8.0 * f64::EPSILON * nearest.abs().max(1.0) {
        nearest
    } else {
        q
    };
    (q.ceil() as usize).max(1)
}
