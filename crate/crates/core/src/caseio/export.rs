//! Exporter registry with the built-in `matpower` and `flat` writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use super::convert::from_network;
use super::matpower::emit_case;
use super::CaseIoError;
use crate::netmodel::{BusKind, NetworkCase};

/// Destination for named output files.
pub trait ExportSink {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), CaseIoError>;
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct MemorySink {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl MemorySink {
    pub fn text(&self, name: &str) -> Option<&str> {
        self.files.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }
}

impl ExportSink for MemorySink {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), CaseIoError> {
        self.files.insert(name.to_string(), contents.to_vec());
        Ok(())
    }
}

/// Writes files into a directory, creating it on first use.
#[derive(Debug, Clone)]
pub struct DirSink {
    pub dir: PathBuf,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirSink { dir: dir.into() }
    }
}

impl ExportSink for DirSink {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), CaseIoError> {
        fs::create_dir_all(&self.dir).map_err(|e| CaseIoError::io(&self.dir, e))?;
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CaseIoError::io(&path, e))
    }
}

pub trait Exporter: Send + Sync {
    fn export(&self, case: &NetworkCase, sink: &mut dyn ExportSink) -> Result<(), CaseIoError>;
}

impl<F> Exporter for F
where
    F: Fn(&NetworkCase, &mut dyn ExportSink) -> Result<(), CaseIoError> + Send + Sync,
{
    fn export(&self, case: &NetworkCase, sink: &mut dyn ExportSink) -> Result<(), CaseIoError> {
        self(case, sink)
    }
}

/// `case.m` plus the `case.oltc.csv` sidecar.
#[derive(Debug, Default, Clone, Copy)]
pub struct MatpowerExporter;

impl Exporter for MatpowerExporter {
    fn export(&self, case: &NetworkCase, sink: &mut dyn ExportSink) -> Result<(), CaseIoError> {
        let (doc, ann) = from_network(case);
        sink.put("case.m", emit_case(&doc).as_bytes())?;
        sink.put("case.oltc.csv", ann.to_csv_string().as_bytes())
    }
}

/// Four CSV tables in engineering units (MW, Mvar, kV, degrees).
#[derive(Debug, Default, Clone, Copy)]
pub struct FlatExporter;

#[derive(Serialize)]
struct FlatBus<'a> {
    id: u32,
    name: &'a str,
    kind: &'static str,
    area: u32,
    base_kv: f64,
    p_load_mw: f64,
    q_load_mvar: f64,
    g_shunt_mw: f64,
    b_shunt_mvar: f64,
    v_mag_pu: f64,
    v_kv: f64,
    v_ang_deg: f64,
    v_min_pu: f64,
    v_max_pu: f64,
}

#[derive(Serialize)]
struct FlatBranch {
    index: usize,
    from_bus: u32,
    to_bus: u32,
    r_pu: f64,
    x_pu: f64,
    b_pu: f64,
    ratio: f64,
    phase_shift_deg: f64,
    rate_a_mva: f64,
    in_service: bool,
}

#[derive(Serialize)]
struct FlatGen {
    index: usize,
    bus: u32,
    kind: &'static str,
    p_mw: f64,
    q_mvar: f64,
    p_min_mw: f64,
    p_max_mw: f64,
    q_min_mvar: f64,
    q_max_mvar: f64,
    v_set_pu: f64,
    in_service: bool,
    c2: f64,
    c1: f64,
    c0: f64,
}

#[derive(Serialize)]
struct FlatOltc {
    branch_index: usize,
    from_bus: u32,
    to_bus: u32,
    controlled_bus: u32,
    v_set_pu: f64,
    deadband_pu: f64,
    tap: i32,
    tap_min: i32,
    tap_max: i32,
    tap_step: f64,
    ratio: f64,
}

fn kind_label(kind: BusKind) -> &'static str {
    match kind {
        BusKind::Pq => "PQ",
        BusKind::Pv => "PV",
        BusKind::Slack => "slack",
        BusKind::Isolated => "isolated",
    }
}

fn table<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, CaseIoError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner()
        .map_err(|e| CaseIoError::Csv(csv::Error::from(e.into_error())))
}

impl Exporter for FlatExporter {
    fn export(&self, case: &NetworkCase, sink: &mut dyn ExportSink) -> Result<(), CaseIoError> {
        let base = case.base_mva;
        let buses = case.buses.iter().map(|b| FlatBus {
            id: b.id,
            name: &b.name,
            kind: kind_label(b.kind),
            area: b.area,
            base_kv: b.base_kv,
            p_load_mw: b.p_load * base,
            q_load_mvar: b.q_load * base,
            g_shunt_mw: b.g_shunt * base,
            b_shunt_mvar: b.b_shunt * base,
            v_mag_pu: b.v_mag,
            v_kv: b.v_mag * b.base_kv,
            v_ang_deg: b.v_ang.to_degrees(),
            v_min_pu: b.v_min,
            v_max_pu: b.v_max,
        });
        sink.put("buses.csv", &table(buses)?)?;

        let branches = case.branches.iter().enumerate().map(|(i, br)| FlatBranch {
            index: i + 1,
            from_bus: br.from_bus,
            to_bus: br.to_bus,
            r_pu: br.r,
            x_pu: br.x,
            b_pu: br.b_charging,
            ratio: br.ratio,
            phase_shift_deg: br.phase_shift.to_degrees(),
            rate_a_mva: br.rate_a * base,
            in_service: br.in_service,
        });
        sink.put("branches.csv", &table(branches)?)?;

        let gens = case.generators.iter().enumerate().map(|(i, g)| FlatGen {
            index: i + 1,
            bus: g.bus_id,
            kind: g.kind.label(),
            p_mw: g.p * base,
            q_mvar: g.q * base,
            p_min_mw: g.p_min * base,
            p_max_mw: g.p_max * base,
            q_min_mvar: g.q_min * base,
            q_max_mvar: g.q_max * base,
            v_set_pu: g.v_set,
            in_service: g.in_service,
            c2: g.cost.c2,
            c1: g.cost.c1,
            c0: g.cost.c0,
        });
        sink.put("generators.csv", &table(gens)?)?;

        let oltcs = case.oltcs.iter().map(|o| {
            let br = &case.branches[o.branch];
            FlatOltc {
                branch_index: o.branch + 1,
                from_bus: br.from_bus,
                to_bus: br.to_bus,
                controlled_bus: o.controlled_bus,
                v_set_pu: o.v_set,
                deadband_pu: o.deadband,
                tap: o.tap,
                tap_min: o.tap_min,
                tap_max: o.tap_max,
                tap_step: o.tap_step,
                ratio: br.ratio,
            }
        });
        let mut bytes = table(oltcs)?;
        if case.oltcs.is_empty() {
            bytes = b"branch_index,from_bus,to_bus,controlled_bus,v_set_pu,deadband_pu,tap,tap_min,tap_max,tap_step,ratio\n".to_vec();
        }
        sink.put("oltc.csv", &bytes)
    }
}

pub struct ExporterRegistry {
    exporters: BTreeMap<String, Box<dyn Exporter>>,
}

impl Default for ExporterRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ExporterRegistry {
    pub fn empty() -> Self {
        ExporterRegistry {
            exporters: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("matpower", MatpowerExporter);
        r.register("flat", FlatExporter);
        r
    }

    /// Adds or replaces the exporter stored under `name`.
    pub fn register(&mut self, name: &str, exporter: impl Exporter + 'static) {
        self.exporters.insert(name.to_string(), Box::new(exporter));
    }

    pub fn names(&self) -> Vec<String> {
        self.exporters.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.exporters.contains_key(name)
    }

    pub fn export(
        &self,
        case: &NetworkCase,
        name: &str,
        sink: &mut dyn ExportSink,
    ) -> Result<(), CaseIoError> {
        match self.exporters.get(name) {
            Some(e) => e.export(case, sink),
            None => Err(CaseIoError::UnknownExporter {
                name: name.to_string(),
                registered: self.names(),
            }),
        }
    }
}
