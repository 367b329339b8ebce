//! Preparation of a distribution template for stand-alone solves against a
//! host voltage.
//!
//! The template's slack bus becomes an ordinary bus fed through the root
//! branch from a new source bus. That source bus stands in for the host
//! transmission bus and is dropped again at assembly.

use crate::caseio::{CaseBundle, RootImpedance};
use crate::netmodel::{Branch, Bus, BusId, BusKind, GenKind, Generator, NetworkCase};

use super::{Stage, SynthError};

/// Used when the template metadata carries no `root` record.
pub const DEFAULT_ROOT: RootImpedance = RootImpedance {
    r: 0.0,
    x: 1e-3,
    b: 0.0,
};

#[derive(Debug, Clone)]
pub struct DnTemplate {
    /// Template with the DG outputs zeroed and the OLTC setpoint applied;
    /// used for the capacity search.
    pub template: NetworkCase,
    /// Template re-rooted at a virtual source bus.
    pub base: NetworkCase,
    pub source_bus: BusId,
    pub root_bus: BusId,
    /// Index of the source→root branch in `base`.
    pub root_branch: usize,
    /// Generator indices in `base`.
    pub controllable: Vec<usize>,
    pub pv: Vec<usize>,
    /// Template total active load, per unit.
    pub load: f64,
    /// Per-bus share of the template active load.
    pub load_weights: Vec<f64>,
    /// Voltage setpoint of the template's own source, used for the capacity search.
    pub source_v: f64,
    /// Number of template buses (the virtual source excluded).
    pub bus_count: usize,
}

impl DnTemplate {
    pub fn from_bundle(bundle: &CaseBundle, oltc_v_set: f64) -> Result<Self, SynthError> {
        let err = |m: String| SynthError::new(Stage::Template, m);
        let mut template = bundle.case.clone();
        let report = template.validate();
        if !report.is_empty() {
            return Err(err(format!("distribution template is invalid: {report}")));
        }
        for o in &mut template.oltcs {
            o.v_set = oltc_v_set;
        }
        for g in &mut template.generators {
            if g.kind.is_distributed() {
                g.p = 0.0;
                g.q = 0.0;
            }
        }
        let root_bus = template
            .buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .ok_or_else(|| err("distribution template has no slack bus".into()))?;
        let source_v = template
            .generators
            .iter()
            .find(|g| g.in_service && g.bus_id == root_bus)
            .map_or(1.0, |g| g.v_set);
        if template
            .generators
            .iter()
            .any(|g| g.bus_id == root_bus && g.kind.is_distributed())
        {
            return Err(err("a DG sits on the template's source bus".into()));
        }
        let (load, _) = template.total_load();
        if !(load > 0.0) {
            return Err(err("distribution template carries no active load".into()));
        }

        let mut base = template.clone();
        base.generators.retain(|g| g.bus_id != root_bus);
        let root = base.bus_mut(root_bus).expect("root bus exists");
        root.kind = BusKind::Pq;
        let root_kv = root.base_kv;
        let source_bus = base.max_bus_id() + 1;
        let mut src = Bus::new(source_bus, BusKind::Slack, root_kv);
        src.name = "source".into();
        src.v_min = 0.0;
        src.v_max = 2.0;
        base.buses.push(src);
        let mut g = Generator::new(source_bus, GenKind::TnUnit);
        g.p_min = -1e3;
        g.p_max = 1e3;
        g.q_min = -1e3;
        g.q_max = 1e3;
        base.generators.push(g);
        let rz = bundle.meta.root.unwrap_or(DEFAULT_ROOT);
        base.branches
            .push(Branch::line(source_bus, root_bus, rz.r, rz.x, rz.b));
        let root_branch = base.branches.len() - 1;

        let controllable = base
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == GenKind::DnControllable)
            .map(|(i, _)| i)
            .collect();
        let pv = base
            .generators
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == GenKind::DnPv)
            .map(|(i, _)| i)
            .collect();
        let load_weights = base
            .buses
            .iter()
            .map(|b| if b.in_service() { b.p_load / load } else { 0.0 })
            .collect();
        Ok(DnTemplate {
            bus_count: template.buses.len(),
            template,
            base,
            source_bus,
            root_bus,
            root_branch,
            controllable,
            pv,
            load,
            load_weights,
            source_v,
        })
    }

    /// Copy of `base` with loads scaled by `scale` and the source at `v`.
    pub fn instance_case(&self, scale: f64, v: f64) -> NetworkCase {
        let mut case = self.base.clone();
        for b in &mut case.buses {
            b.p_load *= scale;
            b.q_load *= scale;
        }
        let src = case.bus_mut(self.source_bus).expect("source bus exists");
        src.v_mag = v;
        let gen = case
            .generators
            .iter_mut()
            .find(|g| g.bus_id == self.source_bus)
            .expect("source generator exists");
        gen.v_set = v;
        case
    }
}
