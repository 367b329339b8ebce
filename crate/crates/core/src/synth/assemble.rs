//! Merging customized replicas into the transmission case.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::customize::DnInstance;
use super::{Stage, SynthError};
use crate::netmodel::{BusId, NetworkCase, OltcTransformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub host_tn_bus: BusId,
    pub copy_index: usize,
    /// Host→DN root branch in the combined case.
    pub root_branch: usize,
    pub first_bus: BusId,
    pub last_bus: BusId,
    /// OLTC indices in the combined case.
    pub oltcs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub case: NetworkCase,
    pub attachments: Vec<Attachment>,
}

pub fn tn_bus_name(id: BusId) -> String {
    format!("tn:{id}")
}

pub fn dn_bus_name(host: BusId, copy: usize, local: BusId) -> String {
    format!("dn:{host}:{copy}:{local}")
}

/// Host TN bus encoded in a `dn:<host>:<copy>:<local>` name.
pub fn host_of(name: &str) -> Option<BusId> {
    name.strip_prefix("dn:")?.split(':').next()?.parse().ok()
}

/// Replaces the aggregated load of every host bus by its replicas.
///
/// Each replica's virtual source bus is identified with the host bus, its
/// other buses get fresh ids after the largest TN id, and its angles are
/// shifted by the host angle. The TN is expected to hold solved voltages.
pub fn assemble(tn: &NetworkCase, instances: &[DnInstance]) -> Result<Assembly, SynthError> {
    let err = |m: String| SynthError::new(Stage::Assemble, m);
    let mut case = tn.clone();
    for b in &mut case.buses {
        if b.name.is_empty() {
            b.name = tn_bus_name(b.id);
        }
    }
    let index = case.index();
    let hosts: BTreeSet<BusId> = instances.iter().map(|i| i.host_tn_bus).collect();
    for &h in &hosts {
        let pos = *index
            .by_id
            .get(&h)
            .ok_or_else(|| err(format!("host bus {h} is not in the transmission case")))?;
        case.buses[pos].p_load = 0.0;
        case.buses[pos].q_load = 0.0;
    }

    let mut next_id = case.max_bus_id() + 1;
    let mut attachments = Vec::with_capacity(instances.len());
    for inst in instances {
        let host = inst.host_tn_bus;
        let host_bus = &case.buses[index.by_id[&host]];
        let (host_area, host_angle) = (host_bus.area, host_bus.v_ang);
        let mut map: HashMap<BusId, BusId> = HashMap::with_capacity(inst.case.buses.len());
        map.insert(inst.source_bus, host);
        let first_bus = next_id;
        for b in &inst.case.buses {
            if b.id == inst.source_bus {
                continue;
            }
            map.insert(b.id, next_id);
            let mut nb = b.clone();
            nb.id = next_id;
            nb.name = dn_bus_name(host, inst.copy_index, b.id);
            nb.area = host_area;
            nb.v_ang += host_angle;
            case.buses.push(nb);
            next_id += 1;
        }
        let last_bus = next_id - 1;

        for g in inst.case.generators.iter().filter(|g| g.bus_id != inst.source_bus) {
            let mut ng = g.clone();
            ng.bus_id = map[&g.bus_id];
            case.generators.push(ng);
        }
        let branch_offset = case.branches.len();
        for br in &inst.case.branches {
            let mut nb = br.clone();
            nb.from_bus = map[&br.from_bus];
            nb.to_bus = map[&br.to_bus];
            case.branches.push(nb);
        }
        let mut oltcs = Vec::with_capacity(inst.case.oltcs.len());
        for o in &inst.case.oltcs {
            oltcs.push(case.oltcs.len());
            case.oltcs.push(OltcTransformer {
                branch: o.branch + branch_offset,
                controlled_bus: map[&o.controlled_bus],
                ..o.clone()
            });
        }
        attachments.push(Attachment {
            host_tn_bus: host,
            copy_index: inst.copy_index,
            root_branch: inst.root_branch + branch_offset,
            first_bus,
            last_bus,
            oltcs,
        });
    }

    let report = case.validate();
    if !report.is_empty() {
        return Err(err(format!("combined case is invalid: {report}")));
    }
    Ok(Assembly { case, attachments })
}

/// Net active power flowing from each host bus into its replicas, per unit,
/// read from solved branch flows; hosts in ascending id order.
pub fn boundary_imports(
    attachments: &[Attachment],
    flows: &[crate::powerflow::BranchFlow],
) -> Vec<(BusId, f64)> {
    let mut out: Vec<(BusId, f64)> = Vec::new();
    let mut by_host: std::collections::BTreeMap<BusId, f64> = Default::default();
    for a in attachments {
        *by_host.entry(a.host_tn_bus).or_default() += flows[a.root_branch].p_from;
    }
    out.extend(by_host);
    out
}
