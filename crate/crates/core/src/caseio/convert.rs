//! Conversion between `CaseDocument` tables (MW, degrees) and the per-unit
//! `NetworkCase`, plus the OLTC sidecar table.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::matpower::{CaseDocument, BRANCH_COLS, BUS_COLS, GEN_COLS};
use super::CaseIoError;
use crate::netmodel::{
    Branch, Bus, BusKind, GenKind, Generator, NetworkCase, OltcTransformer, QuadraticCost,
};

/// One row of `case.oltc.csv`. `branch_index` is 1-based into the branch table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OltcAnnotation {
    pub branch_index: usize,
    pub controlled_bus: u32,
    pub v_set: f64,
    pub deadband: f64,
    pub tap: i32,
    pub tap_min: i32,
    pub tap_max: i32,
    pub tap_step: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OltcAnnotations {
    pub rows: Vec<OltcAnnotation>,
}

impl OltcAnnotations {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, CaseIoError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<Result<Vec<OltcAnnotation>, _>>()?;
        Ok(OltcAnnotations { rows })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CaseIoError> {
        let mut wtr = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            wtr.write_record([
                "branch_index",
                "controlled_bus",
                "v_set",
                "deadband",
                "tap",
                "tap_min",
                "tap_max",
                "tap_step",
            ])?;
        }
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn bus_kind(code: f64) -> Result<BusKind, CaseIoError> {
    match code as i64 {
        1 => Ok(BusKind::Pq),
        2 => Ok(BusKind::Pv),
        3 => Ok(BusKind::Slack),
        4 => Ok(BusKind::Isolated),
        _ => Err(CaseIoError::Structure(format!("bad bus type {code}"))),
    }
}

fn bus_code(kind: BusKind) -> f64 {
    match kind {
        BusKind::Pq => 1.0,
        BusKind::Pv => 2.0,
        BusKind::Slack => 3.0,
        BusKind::Isolated => 4.0,
    }
}

fn polynomial_cost(row: &[f64], gen: usize) -> Result<QuadraticCost, CaseIoError> {
    if row[0] != 2.0 {
        return Err(CaseIoError::Structure(format!(
            "gencost row {}: only polynomial (model 2) costs are supported",
            gen + 1
        )));
    }
    let n = row[3] as usize;
    if n > 3 || row.len() < 4 + n {
        return Err(CaseIoError::Structure(format!(
            "gencost row {}: need at most 3 coefficients",
            gen + 1
        )));
    }
    // coefficients are listed highest order first
    let mut c = [0.0; 3];
    for (k, v) in row[4..4 + n].iter().rev().enumerate() {
        c[k] = *v;
    }
    Ok(QuadraticCost::new(c[2], c[1], c[0]))
}

/// `v · base`, written with fewer digits when a shorter decimal converts
/// back to exactly the same per-unit value (1.1 pu → 110 MW rather than
/// 110.00000000000001).
fn to_mw(v: f64, base: f64) -> f64 {
    let x = v * base;
    if !x.is_finite() {
        return x;
    }
    match format!("{x:.10e}").parse::<f64>() {
        Ok(s) if s / base == v => s,
        _ => x,
    }
}

/// Builds the per-unit model. Generators come out as [`GenKind::TnUnit`];
/// DN classification lives in the bundle metadata.
pub fn to_network(doc: &CaseDocument, oltc: &OltcAnnotations) -> Result<NetworkCase, CaseIoError> {
    doc.check()?;
    let base = doc.base_mva;
    if !(base > 0.0) {
        return Err(CaseIoError::Structure(format!("baseMVA must be positive, got {base}")));
    }
    let mut case = NetworkCase::new(base);

    for (i, r) in doc.bus.iter().enumerate() {
        let mut bus = Bus::new(r[0] as u32, bus_kind(r[1])?, r[9]);
        bus.p_load = r[2] / base;
        bus.q_load = r[3] / base;
        bus.g_shunt = r[4] / base;
        bus.b_shunt = r[5] / base;
        bus.area = r[6] as u32;
        bus.v_mag = r[7];
        bus.v_ang = r[8].to_radians();
        bus.zone = r[10] as u32;
        bus.v_max = r[11];
        bus.v_min = r[12];
        if let Some(names) = &doc.bus_name {
            bus.name = names[i].clone();
        }
        case.buses.push(bus);
    }

    for (i, r) in doc.gen.iter().enumerate() {
        let mut g = Generator::new(r[0] as u32, GenKind::TnUnit);
        g.p = r[1] / base;
        g.q = r[2] / base;
        g.q_max = r[3] / base;
        g.q_min = r[4] / base;
        g.v_set = r[5];
        g.in_service = r[7] > 0.0;
        g.p_max = r[8] / base;
        g.p_min = r[9] / base;
        if let Some(gc) = doc.gencost.as_ref().filter(|gc| !gc.is_empty()) {
            g.cost = polynomial_cost(&gc[i], i)?;
        }
        case.generators.push(g);
    }

    for r in &doc.branch {
        let mut br = Branch::line(r[0] as u32, r[1] as u32, r[2], r[3], r[4]);
        br.rate_a = r[5] / base;
        br.ratio = if r[8] == 0.0 { 1.0 } else { r[8] };
        br.phase_shift = r[9].to_radians();
        br.in_service = r[10] > 0.0;
        case.branches.push(br);
    }

    for a in &oltc.rows {
        if a.branch_index == 0 || a.branch_index > case.branches.len() {
            return Err(CaseIoError::Annotation(format!(
                "OLTC references branch {} but the case has {} branches",
                a.branch_index,
                case.branches.len()
            )));
        }
        if case.bus(a.controlled_bus).is_none() {
            return Err(CaseIoError::Annotation(format!(
                "OLTC on branch {} controls unknown bus {}",
                a.branch_index, a.controlled_bus
            )));
        }
        if a.tap < a.tap_min || a.tap > a.tap_max {
            return Err(CaseIoError::Annotation(format!(
                "OLTC on branch {}: tap {} outside [{}, {}]",
                a.branch_index, a.tap, a.tap_min, a.tap_max
            )));
        }
        case.oltcs.push(OltcTransformer {
            branch: a.branch_index - 1,
            controlled_bus: a.controlled_bus,
            v_set: a.v_set,
            deadband: a.deadband,
            tap: a.tap,
            tap_min: a.tap_min,
            tap_max: a.tap_max,
            tap_step: a.tap_step,
        });
    }
    case.sync_tap_ratios();
    Ok(case)
}

/// Inverse of [`to_network`]. Plain lines (ratio 1, no OLTC) get RATIO 0.
pub fn from_network(case: &NetworkCase) -> (CaseDocument, OltcAnnotations) {
    let base = case.base_mva;
    let mut doc = CaseDocument::new(base);
    doc.function_name = Some("case".into());

    for b in &case.buses {
        let mut r = vec![0.0; BUS_COLS];
        r[0] = f64::from(b.id);
        r[1] = bus_code(b.kind);
        r[2] = to_mw(b.p_load, base);
        r[3] = to_mw(b.q_load, base);
        r[4] = to_mw(b.g_shunt, base);
        r[5] = to_mw(b.b_shunt, base);
        r[6] = f64::from(b.area);
        r[7] = b.v_mag;
        r[8] = b.v_ang.to_degrees();
        r[9] = b.base_kv;
        r[10] = f64::from(b.zone);
        r[11] = b.v_max;
        r[12] = b.v_min;
        doc.bus.push(r);
    }
    if case.buses.iter().any(|b| !b.name.is_empty()) {
        doc.bus_name = Some(case.buses.iter().map(|b| b.name.clone()).collect());
    }

    let mut costs = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let mut r = vec![0.0; GEN_COLS];
        r[0] = f64::from(g.bus_id);
        r[1] = to_mw(g.p, base);
        r[2] = to_mw(g.q, base);
        r[3] = to_mw(g.q_max, base);
        r[4] = to_mw(g.q_min, base);
        r[5] = g.v_set;
        r[6] = base;
        r[7] = if g.in_service { 1.0 } else { 0.0 };
        r[8] = to_mw(g.p_max, base);
        r[9] = to_mw(g.p_min, base);
        doc.gen.push(r);
        costs.push(vec![2.0, 0.0, 0.0, 3.0, g.cost.c2, g.cost.c1, g.cost.c0]);
    }
    doc.gencost = Some(costs);

    let oltc_branch: Vec<bool> = (0..case.branches.len())
        .map(|i| case.oltcs.iter().any(|o| o.branch == i))
        .collect();
    for (i, br) in case.branches.iter().enumerate() {
        let mut r = vec![0.0; BRANCH_COLS];
        r[0] = f64::from(br.from_bus);
        r[1] = f64::from(br.to_bus);
        r[2] = br.r;
        r[3] = br.x;
        r[4] = br.b_charging;
        r[5] = to_mw(br.rate_a, base);
        r[8] = if br.ratio == 1.0 && !oltc_branch[i] { 0.0 } else { br.ratio };
        r[9] = br.phase_shift.to_degrees();
        r[10] = if br.in_service { 1.0 } else { 0.0 };
        r[11] = -360.0;
        r[12] = 360.0;
        doc.branch.push(r);
    }

    let rows = case
        .oltcs
        .iter()
        .map(|o| OltcAnnotation {
            branch_index: o.branch + 1,
            controlled_bus: o.controlled_bus,
            v_set: o.v_set,
            deadband: o.deadband,
            tap: o.tap,
            tap_min: o.tap_min,
            tap_max: o.tap_max,
            tap_step: o.tap_step,
        })
        .collect();
    (doc, OltcAnnotations { rows })
}
