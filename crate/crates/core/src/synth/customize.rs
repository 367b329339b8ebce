//! Per-replica customization: load calibration, DG allocation, optional
//! constant-load compensation and tap regulation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::SynthesisConfig;
use super::template::DnTemplate;
use super::SynthError;
use crate::netmodel::{BusId, NetworkCase};
use crate::oltc::{self, RegulationReport};
use crate::powerflow::PowerFlowSolution;

/// Largest relative perturbation applied when `random` is set.
pub const RANDOM_SPREAD: f64 = 0.05;

const CALIBRATION_TOL: f64 = 1e-9;
const CALIBRATION_MAX_ITER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostPoint {
    pub bus: BusId,
    pub copy: usize,
    /// Host bus voltage magnitude from the transmission solve.
    pub v_mag: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnInstance {
    /// Customized replica, still rooted at its virtual source bus.
    pub case: NetworkCase,
    pub host_tn_bus: BusId,
    pub copy_index: usize,
    pub source_bus: BusId,
    pub root_branch: usize,
    /// Uniform factor applied to the template loads.
    pub load_scale: f64,
    /// Penetration and split after any random perturbation.
    pub penetration_used: f64,
    pub split_used: f64,
    /// DG output over the DN demand before any constant-load increase.
    pub realized_penetration: f64,
    /// `(generator index, p)` for every DG, per unit.
    pub dg_allocation: Vec<(usize, f64)>,
    /// DN active demand before the constant-load increase.
    pub base_load: f64,
    /// Active demand added to keep the boundary import constant.
    pub added_load: f64,
    /// Boundary import before DGs were switched on.
    pub import_before_dg: f64,
    /// Boundary import of the final stand-alone solve.
    pub import_p: f64,
    pub regulation: RegulationReport,
}

struct Solved {
    sol: PowerFlowSolution,
    report: RegulationReport,
}

fn solve(case: &mut NetworkCase, cfg: &SynthesisConfig, what: &str) -> Result<Solved, String> {
    oltc::regulate(case, &cfg.solver_options(), cfg.oltc_max_rounds)
        .map(|(sol, report)| Solved { sol, report })
        .map_err(|e| format!("{what}: {e}"))
}

fn set_active_loads(case: &mut NetworkCase, t: &DnTemplate, scale: f64, added: f64) {
    for (i, b) in case.buses.iter_mut().enumerate() {
        b.p_load = t.base.buses[i].p_load * scale + added * t.load_weights[i];
    }
}

fn set_loads(case: &mut NetworkCase, t: &DnTemplate, scale: f64) {
    for (i, b) in case.buses.iter_mut().enumerate() {
        b.p_load = t.base.buses[i].p_load * scale;
        b.q_load = t.base.buses[i].q_load * scale;
    }
}

/// Builds one replica whose boundary import, before DGs, equals `target_p`.
pub fn customize_dn<R: Rng>(
    t: &DnTemplate,
    host: HostPoint,
    target_p: f64,
    cfg: &SynthesisConfig,
    rng: &mut R,
) -> Result<DnInstance, SynthError> {
    let fail = |msg: String| SynthError::customize(host.bus, host.copy, msg);
    let mut case = t.instance_case(1.0, host.v_mag);

    // 1. uniform P/Q scaling, calibrated on the solved boundary import
    let mut scale = target_p / t.load;
    let mut solved;
    let mut iter = 0;
    loop {
        set_loads(&mut case, t, scale);
        solved = solve(&mut case, cfg, "load calibration").map_err(fail)?;
        let import = solved.sol.branch_flows[t.root_branch].p_from;
        iter += 1;
        if (import - target_p).abs() <= CALIBRATION_TOL * target_p.abs().max(1e-6)
            || iter >= CALIBRATION_MAX_ITER
        {
            break;
        }
        if !(import > 0.0) {
            return Err(fail(format!(
                "boundary import {import:.6} pu is not positive during load calibration"
            )));
        }
        scale *= target_p / import;
    }
    let import_before_dg = solved.sol.branch_flows[t.root_branch].p_from;
    let (base_load, _) = case.total_load();

    // 2. penetration and split, perturbed when requested
    let (mut pl, mut split) = (cfg.penetration_level, cfg.generation_split);
    if cfg.random {
        let u1: f64 = rng.gen_range(-RANDOM_SPREAD..=RANDOM_SPREAD);
        let u2: f64 = rng.gen_range(-RANDOM_SPREAD..=RANDOM_SPREAD);
        pl *= 1.0 + u1;
        split = (split * (1.0 + u2)).clamp(0.0, 1.0);
    }
    let dg_total = pl * base_load;

    // 3. equal shares inside each group; an empty group cedes its share
    let (nc, np) = (t.controllable.len(), t.pv.len());
    if dg_total > 0.0 && nc + np == 0 {
        return Err(fail("template has no DGs to carry the requested penetration".into()));
    }
    let ctrl_share = match (nc, np) {
        (_, 0) => 1.0,
        (0, _) => 0.0,
        _ => split,
    };
    let mut dg_allocation = Vec::with_capacity(nc + np);
    for (group, share) in [(&t.controllable, ctrl_share), (&t.pv, 1.0 - ctrl_share)] {
        if group.is_empty() {
            continue;
        }
        let each = dg_total * share / group.len() as f64;
        for &gi in group {
            let g = &mut case.generators[gi];
            if each > g.p_max + 1e-12 {
                return Err(fail(format!(
                    "DG allocation {:.4} MW exceeds p_max {:.4} MW of generator {} at template bus {}",
                    each * case.base_mva,
                    g.p_max * case.base_mva,
                    gi + 1,
                    g.bus_id
                )));
            }
            g.p = each;
            g.q = 0.0;
            dg_allocation.push((gi, each));
        }
    }
    let realized_penetration = dg_allocation.iter().map(|(_, p)| p).sum::<f64>() / base_load;

    // 4. constant load: add active demand until the import is restored
    let mut added_load = 0.0;
    if cfg.constant_load && dg_total > 0.0 {
        added_load = dg_total;
        let mut iter = 0;
        loop {
            set_active_loads(&mut case, t, scale, added_load);
            solved = solve(&mut case, cfg, "constant-load compensation").map_err(fail)?;
            let import = solved.sol.branch_flows[t.root_branch].p_from;
            iter += 1;
            let gap = import_before_dg - import;
            if gap.abs() <= CALIBRATION_TOL * import_before_dg.abs().max(1e-6)
                || iter >= CALIBRATION_MAX_ITER
            {
                break;
            }
            added_load += gap;
        }
    }

    // 5. final regulation with DGs in place
    solved = solve(&mut case, cfg, "final regulation").map_err(fail)?;
    let import_p = solved.sol.branch_flows[t.root_branch].p_from;

    Ok(DnInstance {
        case,
        host_tn_bus: host.bus,
        copy_index: host.copy,
        source_bus: t.source_bus,
        root_branch: t.root_branch,
        load_scale: scale,
        penetration_used: pl,
        split_used: split,
        realized_penetration,
        dg_allocation,
        base_load,
        added_load,
        import_before_dg,
        import_p,
        regulation: solved.report,
    })
}
