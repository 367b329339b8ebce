//! Batch front-end: config loading, the output bundle, and the printed
//! summaries of `generate` and `inspect`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::caseio::{self, CaseBundle, CaseIoError, DirSink, ExporterRegistry};
use crate::netmodel::{self, BusId, NetworkCase};
use crate::opf;
use crate::powerflow;
use crate::synth::{self, host_of, ConfigError, SynthError, Synthesis, SynthesisConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read config {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] SynthError),
    #[error(transparent)]
    Output(#[from] CaseIoError),
    #[error("{0}")]
    Inspect(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigFile { .. } => 2,
            _ => 1,
        }
    }
}

/// Reads and validates a config file; `seed` overrides `rng_seed`.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<SynthesisConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = SynthesisConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Templates shipped with the crate.
pub fn default_templates() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("templates")
}

#[derive(Debug, Clone, Serialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Stats> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Stats {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryRow {
    pub tn_bus: BusId,
    pub replaced_load_mw: f64,
    pub import_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpfSummary {
    pub objective: f64,
    pub feasible: bool,
    pub relaxation_rounds: usize,
    pub tap_moves: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub run_id: String,
    pub seed: u64,
    pub buses: usize,
    pub branches: usize,
    pub generators: usize,
    pub oltcs: usize,
    pub tn_buses: usize,
    pub dn_template_buses: usize,
    pub dn_instances: usize,
    pub dn_per_area: BTreeMap<String, usize>,
    pub dn_capacity_mw: f64,
    pub dn_capacity_scale: f64,
    pub penetration: Option<Stats>,
    pub oltc_rounds: usize,
    pub oltc_tap_moves: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub total_transfer_mw: f64,
    pub boundary: Vec<BoundaryRow>,
    pub operating_cost: f64,
    pub opf: Option<OpfSummary>,
}

pub fn summarize(syn: &Synthesis) -> Summary {
    let base = syn.case.base_mva;
    let mut dn_per_area = BTreeMap::new();
    for h in &syn.hosts {
        let area = syn
            .meta
            .areas
            .get(&h.area)
            .cloned()
            .unwrap_or_else(|| h.area.to_string());
        *dn_per_area.entry(area).or_insert(0) += h.count;
    }
    let (v_min, v_max) = syn
        .solution
        .min_max_voltage(0..syn.case.buses.len())
        .unwrap_or((f64::NAN, f64::NAN));
    Summary {
        run_id: syn.config.run_id(),
        seed: syn.config.rng_seed,
        buses: syn.case.buses.len(),
        branches: syn.case.branches.len(),
        generators: syn.case.generators.len(),
        oltcs: syn.case.oltcs.len(),
        tn_buses: syn.tn_case.buses.len(),
        dn_template_buses: syn.dn_template_buses,
        dn_instances: syn.instances.len(),
        dn_per_area,
        dn_capacity_mw: syn.capacity.p_capacity * base,
        dn_capacity_scale: syn.capacity.max_scale,
        penetration: Stats::of(syn.instances.iter().map(|i| i.realized_penetration)),
        oltc_rounds: syn.regulation.rounds,
        oltc_tap_moves: syn.regulation.tap_moves(),
        v_min,
        v_max,
        total_transfer_mw: syn.total_transfer() * base,
        boundary: syn
            .boundary_transfer()
            .into_iter()
            .map(|(bus, orig, imp)| BoundaryRow {
                tn_bus: bus,
                replaced_load_mw: orig * base,
                import_mw: imp * base,
            })
            .collect(),
        operating_cost: opf::operating_cost(&syn.case),
        opf: syn.opf.as_ref().map(|o| OpfSummary {
            objective: o.objective,
            feasible: o.feasible,
            relaxation_rounds: o.relaxation_rounds,
            tap_moves: o.tap_moves,
            kkt_residual: o.kkt_residual,
        }),
    }
}

impl Summary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run {} (seed {})", self.run_id, self.seed);
        let _ = writeln!(
            s,
            "combined case: {} buses, {} branches, {} generators, {} OLTCs",
            self.buses, self.branches, self.generators, self.oltcs
        );
        let _ = writeln!(
            s,
            "DN capacity {:.3} MW (scale {:.4}); {} replicas of {} buses",
            self.dn_capacity_mw, self.dn_capacity_scale, self.dn_instances, self.dn_template_buses
        );
        for (area, n) in &self.dn_per_area {
            let _ = writeln!(s, "  {area}: {n} DNs");
        }
        if let Some(p) = &self.penetration {
            let _ = writeln!(
                s,
                "penetration min/mean/max: {:.4} / {:.4} / {:.4}",
                p.min, p.mean, p.max
            );
        }
        let _ = writeln!(
            s,
            "OLTC rounds {} ({} tap moves); voltages {:.4}..{:.4} pu",
            self.oltc_rounds, self.oltc_tap_moves, self.v_min, self.v_max
        );
        let _ = writeln!(s, "TN -> DN transfer {:.3} MW", self.total_transfer_mw);
        for b in &self.boundary {
            let _ = writeln!(
                s,
                "  bus {}: replaced {:.3} MW, imports {:.3} MW",
                b.tn_bus, b.replaced_load_mw, b.import_mw
            );
        }
        match &self.opf {
            Some(o) => {
                let _ = writeln!(
                    s,
                    "OPF objective {:.4} (feasible: {}, {} rounds, {} tap moves)",
                    o.objective, o.feasible, o.relaxation_rounds, o.tap_moves
                );
            }
            None => {
                let _ = writeln!(s, "operating cost {:.4}", self.operating_cost);
            }
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
struct InstanceRecord {
    host_tn_bus: BusId,
    copy_index: usize,
    first_bus: BusId,
    last_bus: BusId,
    load_scale: f64,
    penetration_used: f64,
    split_used: f64,
    realized_penetration: f64,
    base_load_mw: f64,
    added_load_mw: f64,
    import_mw: f64,
    dg_mw: Vec<f64>,
    oltc_taps: Vec<i32>,
    oltc_rounds: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    run_id: String,
    seed: u64,
    config: &'a SynthesisConfig,
    hosts: &'a [synth::HostSummary],
    instances: Vec<InstanceRecord>,
}

fn manifest(syn: &Synthesis) -> Manifest<'_> {
    let base = syn.case.base_mva;
    let instances = syn
        .instances
        .iter()
        .zip(&syn.attachments)
        .map(|(inst, att)| InstanceRecord {
            host_tn_bus: inst.host_tn_bus,
            copy_index: inst.copy_index,
            first_bus: att.first_bus,
            last_bus: att.last_bus,
            load_scale: inst.load_scale,
            penetration_used: inst.penetration_used,
            split_used: inst.split_used,
            realized_penetration: inst.realized_penetration,
            base_load_mw: inst.base_load * base,
            added_load_mw: inst.added_load * base,
            import_mw: inst.import_p * base,
            dg_mw: inst.dg_allocation.iter().map(|(_, p)| p * base).collect(),
            oltc_taps: att.oltcs.iter().map(|&k| syn.case.oltcs[k].tap).collect(),
            oltc_rounds: inst.regulation.rounds,
        })
        .collect();
    Manifest {
        run_id: syn.config.run_id(),
        seed: syn.config.rng_seed,
        config: &syn.config,
        hosts: &syn.hosts,
        instances,
    }
}

fn put(path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, bytes).map_err(|e| CliError::Output(CaseIoError::io(&path, e)))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Writes the output bundle into `run_dir`: `case.m`, `case.oltc.csv`,
/// `meta.csv`, `manifest.json`, `summary.json`, `opf_trace.csv` when the
/// OPF ran, plus the files of `export_format` when it is not `matpower`.
pub fn write_output(run_dir: &Path, syn: &Synthesis, registry: &ExporterRegistry) -> Result<Summary, CliError> {
    let bundle = CaseBundle {
        case: syn.case.clone(),
        meta: syn.meta.clone(),
    };
    caseio::write_bundle(run_dir, &bundle)?;
    if syn.config.export_format != "matpower" {
        registry.export(&syn.case, &syn.config.export_format, &mut DirSink::new(run_dir))?;
    }
    let summary = summarize(syn);
    put(run_dir.join("manifest.json"), json(&manifest(syn)))?;
    put(run_dir.join("summary.json"), json(&summary))?;
    if let Some(o) = &syn.opf {
        put(run_dir.join("opf_trace.csv"), opf::trace_csv(&o.trace))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub config: PathBuf,
    pub templates: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Full `generate` command; returns the run directory and its summary.
pub fn generate(args: &GenerateArgs) -> Result<(PathBuf, Summary), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    let registry = ExporterRegistry::with_builtins();
    if !registry.contains(&cfg.export_format) {
        return Err(ConfigError {
            field: "export_format".into(),
            message: format!("unknown format; registered: {}", registry.names().join(", ")),
        }
        .into());
    }
    let (tn, dn) = synth::load_templates(&args.templates, &cfg)?;
    let syn = synth::generate(&tn, &dn, &cfg, args.jobs)?;
    let run_dir = args.out.join(cfg.run_id());
    let summary = write_output(&run_dir, &syn, &registry)?;
    Ok((run_dir, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub buses: usize,
    pub branches: usize,
    pub generators: usize,
    pub oltcs: usize,
    pub issues: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub total_load_mw: f64,
    pub penetration: Option<f64>,
    /// `(host bus, DN bus, import MW)` per boundary branch.
    pub transfers: Vec<(BusId, BusId, f64)>,
}

fn boundary_branches(case: &NetworkCase) -> Vec<(usize, BusId, BusId, bool)> {
    let index = case.index();
    let is_dn = |id: BusId| host_of(&case.buses[index.by_id[&id]].name).is_some();
    case.branches
        .iter()
        .enumerate()
        .filter(|(_, br)| br.in_service)
        .filter_map(|(k, br)| match (is_dn(br.from_bus), is_dn(br.to_bus)) {
            (false, true) => Some((k, br.from_bus, br.to_bus, true)),
            (true, false) => Some((k, br.to_bus, br.from_bus, false)),
            _ => None,
        })
        .collect()
}

pub fn inspect(dir: &Path, opts: &powerflow::SolverOptions) -> Result<InspectReport, CliError> {
    let bundle = caseio::load_bundle(dir)?;
    let case = bundle.case;
    let issues = case.validate().messages();
    let sol = powerflow::solve(&case, opts).map_err(|e| CliError::Inspect(format!("power flow: {e}")))?;
    let (v_min, v_max) = sol
        .min_max_voltage((0..case.buses.len()).filter(|&i| case.buses[i].in_service()))
        .unwrap_or((f64::NAN, f64::NAN));
    let base = case.base_mva;
    let transfers = boundary_branches(&case)
        .into_iter()
        .map(|(k, host, dn, host_is_from)| {
            let f = &sol.branch_flows[k];
            let p = if host_is_from { f.p_from } else { f.p_to };
            (host, dn, p * base)
        })
        .collect();
    Ok(InspectReport {
        buses: case.buses.len(),
        branches: case.branches.len(),
        generators: case.generators.len(),
        oltcs: case.oltcs.len(),
        issues,
        converged: sol.converged,
        iterations: sol.iterations,
        v_min,
        v_max,
        total_load_mw: case.total_load().0 * base,
        penetration: netmodel::penetration_level(&case).ok(),
        transfers,
    })
}

impl InspectReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} buses, {} branches, {} generators, {} OLTCs",
            self.buses, self.branches, self.generators, self.oltcs
        );
        if self.issues.is_empty() {
            let _ = writeln!(s, "validation: ok");
        } else {
            let _ = writeln!(s, "validation: {} issue(s)", self.issues.len());
            for i in &self.issues {
                let _ = writeln!(s, "  {i}");
            }
        }
        let _ = writeln!(
            s,
            "power flow: {} in {} iterations; voltages {:.4}..{:.4} pu",
            if self.converged { "converged" } else { "NOT converged" },
            self.iterations,
            self.v_min,
            self.v_max
        );
        let _ = writeln!(s, "total load {:.3} MW", self.total_load_mw);
        match self.penetration {
            Some(p) => {
                let _ = writeln!(s, "penetration {p:.4}");
            }
            None => {
                let _ = writeln!(s, "penetration undefined (no load)");
            }
        }
        if !self.transfers.is_empty() {
            let _ = writeln!(s, "TN -> DN transfers:");
            for (host, dn, p) in &self.transfers {
                let _ = writeln!(s, "  {host} -> {dn}: {p:.3} MW");
            }
        }
        s
    }
}
