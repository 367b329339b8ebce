//! Combined T&D synthesis: TN initialization, DN capacity and replica count,
//! per-replica customization and assembly.

mod assemble;
mod capacity;
pub mod config;
mod customize;
mod template;

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{assemble, boundary_imports, dn_bus_name, host_of, tn_bus_name, Assembly, Attachment};
pub use capacity::{dn_count, dn_max_capacity, CapacityOptions, CapacityResult};
pub use config::{ConfigError, SynthesisConfig};
pub use customize::{customize_dn, DnInstance, HostPoint, RANDOM_SPREAD};
pub use template::{DnTemplate, DEFAULT_ROOT};

use crate::caseio::{self, BundleMeta, CaseBundle};
use crate::netmodel::{BusId, NetworkCase};
use crate::oltc::{self, RegulateError, RegulationReport};
use crate::opf::{self, OpfOptions, OpfProblem, OpfSolution, RelaxationSchedule};
use crate::powerflow::PowerFlowSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    TnSolve,
    Select,
    Template,
    Capacity,
    Customize,
    Assemble,
    Opf,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::TnSolve => "tn-solve",
            Stage::Select => "select",
            Stage::Template => "template",
            Stage::Capacity => "capacity",
            Stage::Customize => "customize",
            Stage::Assemble => "assemble",
            Stage::Opf => "opf",
            Stage::Export => "export",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("[{stage}] {message}")]
pub struct SynthError {
    pub stage: Stage,
    pub message: String,
}

impl SynthError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        SynthError {
            stage,
            message: message.into(),
        }
    }

    pub(crate) fn customize(host: BusId, copy: usize, msg: String) -> Self {
        SynthError::new(Stage::Customize, format!("TN bus {host}, copy {copy}: {msg}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaceableLoad {
    pub bus: BusId,
    pub p_load: f64,
    pub q_load: f64,
}

/// Loads (buses with positive active demand) to be replaced by DNs.
///
/// With `large_system` every area except `Equiv` qualifies; otherwise only
/// the `Central` area. Area names come from the bundle metadata.
pub fn select_replaceable_loads(
    tn: &NetworkCase,
    meta: &BundleMeta,
    large_system: bool,
) -> Result<Vec<ReplaceableLoad>, SynthError> {
    let err = |m: String| SynthError::new(Stage::Select, m);
    let keep: Box<dyn Fn(u32) -> bool> = if large_system {
        let equiv = meta.area_code("Equiv");
        Box::new(move |a| Some(a) != equiv)
    } else {
        let central = meta
            .area_code("Central")
            .ok_or_else(|| err("TN metadata defines no Central area".into()))?;
        Box::new(move |a| a == central)
    };
    let loads: Vec<ReplaceableLoad> = tn
        .buses
        .iter()
        .filter(|b| b.in_service() && b.p_load > 0.0 && keep(b.area))
        .map(|b| ReplaceableLoad {
            bus: b.id,
            p_load: b.p_load,
            q_load: b.q_load,
        })
        .collect();
    if loads.is_empty() {
        return Err(err("no replaceable loads in the selected areas".into()));
    }
    Ok(loads)
}

/// Independent random stream for replica `copy` at TN bus `bus`.
pub fn substream(seed: u64, bus: BusId, copy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(bus) << 32) | copy as u64);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostSummary {
    pub bus: BusId,
    pub area: u32,
    pub p_load: f64,
    pub q_load: f64,
    pub count: usize,
    /// Per-replica target import.
    pub target_p: f64,
}

/// Everything produced by one synthesis run.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub config: SynthesisConfig,
    pub case: NetworkCase,
    pub meta: BundleMeta,
    /// Transmission case after its own solve, before any replacement.
    pub tn_case: NetworkCase,
    pub tn_solution: PowerFlowSolution,
    pub capacity: CapacityResult,
    pub hosts: Vec<HostSummary>,
    pub instances: Vec<DnInstance>,
    pub attachments: Vec<Attachment>,
    /// Regulation of the combined case after assembly.
    pub regulation: RegulationReport,
    /// Combined solution after regulation (and after the OPF, when run).
    pub solution: PowerFlowSolution,
    /// Operating cost of the regulated combined case before any OPF.
    pub pre_opf_cost: f64,
    pub opf: Option<OpfSolution>,
    pub dn_template_buses: usize,
}

impl Synthesis {
    /// `(host bus, aggregated load replaced, import after assembly)`.
    pub fn boundary_transfer(&self) -> Vec<(BusId, f64, f64)> {
        boundary_imports(&self.attachments, &self.solution.branch_flows)
            .into_iter()
            .map(|(bus, imp)| {
                let orig = self.hosts.iter().find(|h| h.bus == bus).map_or(0.0, |h| h.p_load);
                (bus, orig, imp)
            })
            .collect()
    }

    pub fn total_transfer(&self) -> f64 {
        self.boundary_transfer().iter().map(|t| t.2).sum()
    }
}

fn solve_tn(tn: &mut NetworkCase, cfg: &SynthesisConfig) -> Result<PowerFlowSolution, SynthError> {
    match oltc::regulate(tn, &cfg.solver_options(), cfg.oltc_max_rounds) {
        Ok((sol, _)) => Ok(sol),
        Err(e) => Err(SynthError::new(Stage::TnSolve, e.to_string())),
    }
}

fn describe_bus(case: &NetworkCase, id: Option<BusId>) -> String {
    match id.and_then(|id| case.bus(id)) {
        Some(b) => match host_of(&b.name) {
            Some(host) => format!("bus {} ({}) under TN bus {host}", b.id, b.name),
            None => format!("TN bus {}", b.id),
        },
        None => "unknown bus".into(),
    }
}

/// Runs the whole pipeline on loaded bundles. `jobs` caps the worker count
/// for the replica stage (`None` uses the global pool).
pub fn generate(
    tn_bundle: &CaseBundle,
    dn_bundle: &CaseBundle,
    cfg: &SynthesisConfig,
    jobs: Option<usize>,
) -> Result<Synthesis, SynthError> {
    cfg.validate()
        .map_err(|e| SynthError::new(Stage::Load, e.to_string()))?;

    // A. master solve of the transmission case
    let mut tn = tn_bundle.case.clone();
    let report = tn.validate();
    if !report.is_empty() {
        return Err(SynthError::new(Stage::Load, format!("TN template is invalid: {report}")));
    }
    let tn_solution = solve_tn(&mut tn, cfg)?;
    let loads = select_replaceable_loads(&tn, &tn_bundle.meta, cfg.large_system)?;

    // B. capacity and replica counts
    let mut dn_bundle = dn_bundle.clone();
    if dn_bundle.case.base_mva != tn.base_mva {
        // impedances scale with new_base / old_base, powers inversely
        let k = tn.base_mva / dn_bundle.case.base_mva;
        dn_bundle.case = rebase(&dn_bundle.case, tn.base_mva);
        if let Some(r) = dn_bundle.meta.root.as_mut() {
            r.r *= k;
            r.x *= k;
            r.b /= k;
        }
    }
    let template = DnTemplate::from_bundle(&dn_bundle, cfg.oltc_v_set)?;
    let cap_opts = CapacityOptions {
        ceiling: cfg.capacity_ceiling,
        solver: cfg.solver_options(),
        max_rounds: cfg.oltc_max_rounds,
        ..CapacityOptions::default()
    };
    let capacity = dn_max_capacity(
        &template.template,
        (cfg.dn_v_min, cfg.dn_v_max),
        template.source_v,
        &cap_opts,
    )?;
    if !(capacity.p_capacity > 0.0) {
        return Err(SynthError::new(Stage::Capacity, "DN capacity is zero"));
    }
    let divisor = capacity.p_capacity * cfg.oversize;
    let index = tn.index();
    let hosts: Vec<HostSummary> = loads
        .iter()
        .map(|l| {
            let count = dn_count(l.p_load, divisor);
            HostSummary {
                bus: l.bus,
                area: tn.buses[index.by_id[&l.bus]].area,
                p_load: l.p_load,
                q_load: l.q_load,
                count,
                target_p: l.p_load / count as f64,
            }
        })
        .collect();

    // C. customize every replica independently
    let work: Vec<(HostPoint, f64)> = hosts
        .iter()
        .flat_map(|h| {
            let v = tn.buses[index.by_id[&h.bus]].v_mag;
            (0..h.count).map(move |copy| {
                (
                    HostPoint {
                        bus: h.bus,
                        copy,
                        v_mag: v,
                    },
                    h.target_p,
                )
            })
        })
        .collect();
    let run = || {
        work.par_iter()
            .map(|&(host, target)| {
                let mut rng = substream(cfg.rng_seed, host.bus, host.copy);
                customize_dn(&template, host, target, cfg, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let instances = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SynthError::new(Stage::Customize, e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    // D. assembly and combined regulation
    let Assembly {
        mut case,
        attachments,
    } = assemble(&tn, &instances)?;
    let (mut solution, regulation) =
        match oltc::regulate(&mut case, &cfg.solver_options(), cfg.oltc_max_rounds) {
            Ok(r) => r,
            Err(RegulateError::Diverged { last, round, .. }) => {
                return Err(SynthError::new(
                    Stage::Assemble,
                    format!(
                        "combined power flow diverged after tap round {round}; worst residual at {}",
                        describe_bus(&case, last.worst_bus)
                    ),
                ))
            }
            Err(e) => {
                let worst = crate::powerflow::solve(&case, &cfg.solver_options())
                    .ok()
                    .and_then(|s| s.worst_bus);
                return Err(SynthError::new(
                    Stage::Assemble,
                    format!("combined power flow failed ({e}); worst residual at {}", describe_bus(&case, worst)),
                ));
            }
        };
    let pre_opf_cost = opf::operating_cost(&case);

    // E. optional OPF
    let mut opf_solution = None;
    if cfg.run_opf {
        let problem = OpfProblem::for_combined(&case, (cfg.dn_v_min, cfg.dn_v_max))
            .map_err(|e| SynthError::new(Stage::Opf, e.to_string()))?;
        let schedule = RelaxationSchedule {
            rounds: cfg.opf_rounds,
            initial_slack: cfg.opf_initial_slack,
            max_extra_rounds: cfg.oltc_max_rounds,
        };
        let opts = OpfOptions {
            solver: cfg.solver_options(),
            ..OpfOptions::default()
        };
        let sol = opf::solve_with_relaxation(&problem, &schedule, &opts)
            .map_err(|e| SynthError::new(Stage::Opf, e.to_string()))?;
        opf::apply(&mut case, &sol);
        solution = crate::powerflow::solve(&case, &cfg.solver_options())
            .map_err(|e| SynthError::new(Stage::Opf, e.to_string()))?;
        if !solution.converged {
            return Err(SynthError::new(
                Stage::Opf,
                "power flow at the OPF dispatch did not converge",
            ));
        }
        crate::powerflow::apply_solution(&mut case, &solution);
        opf_solution = Some(sol);
    }

    let meta = BundleMeta {
        areas: tn_bundle.meta.areas.clone(),
        ..BundleMeta::default()
    };
    Ok(Synthesis {
        config: cfg.clone(),
        case,
        meta,
        tn_case: tn,
        tn_solution,
        capacity,
        hosts,
        instances,
        attachments,
        regulation,
        solution,
        pre_opf_cost,
        opf: opf_solution,
        dn_template_buses: template.bus_count,
    })
}

/// Re-expresses a case on a different MVA base.
pub fn rebase(case: &NetworkCase, new_base: f64) -> NetworkCase {
    let k = case.base_mva / new_base;
    let mut out = case.clone();
    out.base_mva = new_base;
    for b in &mut out.buses {
        b.p_load *= k;
        b.q_load *= k;
        b.g_shunt *= k;
        b.b_shunt *= k;
    }
    for g in &mut out.generators {
        for v in [&mut g.p, &mut g.q, &mut g.p_min, &mut g.p_max, &mut g.q_min, &mut g.q_max] {
            *v *= k;
        }
    }
    for br in &mut out.branches {
        br.r /= k;
        br.x /= k;
        br.b_charging *= k;
        br.rate_a *= k;
    }
    out
}

/// Loads the TN and DN bundles named in `cfg` from `templates`.
pub fn load_templates(templates: &Path, cfg: &SynthesisConfig) -> Result<(CaseBundle, CaseBundle), SynthError> {
    let load = |name: &str| {
        caseio::load_bundle(&templates.join(name))
            .map_err(|e| SynthError::new(Stage::Load, format!("template `{name}`: {e}")))
    };
    Ok((load(&cfg.tn_template)?, load(&cfg.dn_template)?))
}
