//! Case bundles: a directory holding `case.m`, `case.oltc.csv` and `meta.csv`.
//!
//! `meta.csv` has the columns `record,key,value` with these record types:
//!
//! ```text
//! area,<area number>,<area name>
//! feeder,<bus id>,<feeder number>
//! gen,<1-based generator row>,controllable|pv
//! root,r|x|b,<per-unit value>
//! ```
//!
//! Generators not listed under `gen` are transmission units. The `root`
//! record gives the impedance of the branch that connects a distribution
//! template to its host bus.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::convert::{from_network, to_network, OltcAnnotations};
use super::matpower::{emit_case, parse_case};
use super::CaseIoError;
use crate::netmodel::{BusId, GenKind, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootImpedance {
    pub r: f64,
    pub x: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BundleMeta {
    pub areas: BTreeMap<u32, String>,
    pub feeders: BTreeMap<BusId, u32>,
    pub root: Option<RootImpedance>,
}

impl BundleMeta {
    pub fn area_code(&self, name: &str) -> Option<u32> {
        self.areas
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(name))
            .map(|(&c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBundle {
    pub case: NetworkCase,
    pub meta: BundleMeta,
}

#[derive(Debug, Deserialize, Serialize)]
struct MetaRecord {
    record: String,
    key: String,
    value: String,
}

fn bad(msg: String) -> CaseIoError {
    CaseIoError::Annotation(format!("meta.csv: {msg}"))
}

fn parse_meta(text: &str, case: &mut NetworkCase) -> Result<BundleMeta, CaseIoError> {
    let mut meta = BundleMeta::default();
    let mut root = [None; 3];
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    for rec in rdr.deserialize::<MetaRecord>() {
        let rec = rec?;
        let num = |s: &str| -> Result<f64, CaseIoError> {
            s.parse().map_err(|_| bad(format!("`{s}` is not a number")))
        };
        match rec.record.as_str() {
            "area" => {
                meta.areas.insert(num(&rec.key)? as u32, rec.value);
            }
            "feeder" => {
                meta.feeders.insert(num(&rec.key)? as BusId, num(&rec.value)? as u32);
            }
            "gen" => {
                let row = num(&rec.key)? as usize;
                let kind = GenKind::from_label(&rec.value)
                    .ok_or_else(|| bad(format!("unknown generator class `{}`", rec.value)))?;
                let g = row
                    .checked_sub(1)
                    .and_then(|i| case.generators.get_mut(i))
                    .ok_or_else(|| bad(format!("generator row {row} does not exist")))?;
                g.kind = kind;
                g.controllable = kind != GenKind::DnPv;
            }
            "root" => {
                let slot = match rec.key.as_str() {
                    "r" => 0,
                    "x" => 1,
                    "b" => 2,
                    k => return Err(bad(format!("unknown root field `{k}`"))),
                };
                root[slot] = Some(num(&rec.value)?);
            }
            other => return Err(bad(format!("unknown record type `{other}`"))),
        }
    }
    if let [Some(r), Some(x), b] = root {
        meta.root = Some(RootImpedance { r, x, b: b.unwrap_or(0.0) });
    } else if root.iter().any(Option::is_some) {
        return Err(bad("root needs both r and x".into()));
    }
    Ok(meta)
}

/// Renders `meta.csv`; generator classes are taken from the case itself.
pub fn render_meta(meta: &BundleMeta, case: &NetworkCase) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut put = |record: &str, key: String, value: String| {
        wtr.serialize(MetaRecord {
            record: record.into(),
            key,
            value,
        })
        .expect("writing to memory");
    };
    for (code, name) in &meta.areas {
        put("area", code.to_string(), name.clone());
    }
    for (bus, feeder) in &meta.feeders {
        put("feeder", bus.to_string(), feeder.to_string());
    }
    for (i, g) in case.generators.iter().enumerate() {
        if g.kind != GenKind::TnUnit {
            put("gen", (i + 1).to_string(), g.kind.label().into());
        }
    }
    if let Some(root) = meta.root {
        put("root", "r".into(), root.r.to_string());
        put("root", "x".into(), root.x.to_string());
        put("root", "b".into(), root.b.to_string());
    }
    let bytes = wtr.into_inner().expect("flush to memory");
    let text = String::from_utf8(bytes).expect("utf-8");
    if text.is_empty() {
        "record,key,value\n".into()
    } else {
        text
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, CaseIoError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CaseIoError::io(path, e)),
    }
}

/// Loads a bundle directory. `case.m` is required; the sidecars are optional.
pub fn load_bundle(dir: &Path) -> Result<CaseBundle, CaseIoError> {
    let case_path = dir.join("case.m");
    let text = fs::read_to_string(&case_path).map_err(|e| CaseIoError::io(&case_path, e))?;
    let doc = parse_case(&text)?;
    let ann = match read_optional(&dir.join("case.oltc.csv"))? {
        Some(s) => OltcAnnotations::read_csv(s.as_bytes())?,
        None => OltcAnnotations::default(),
    };
    let mut case = to_network(&doc, &ann)?;
    let meta = match read_optional(&dir.join("meta.csv"))? {
        Some(s) => parse_meta(&s, &mut case)?,
        None => BundleMeta::default(),
    };
    Ok(CaseBundle { case, meta })
}

pub fn write_bundle(dir: &Path, bundle: &CaseBundle) -> Result<(), CaseIoError> {
    fs::create_dir_all(dir).map_err(|e| CaseIoError::io(dir, e))?;
    let (doc, ann) = from_network(&bundle.case);
    let files = [
        ("case.m", emit_case(&doc)),
        ("case.oltc.csv", ann.to_csv_string()),
        ("meta.csv", render_meta(&bundle.meta, &bundle.case)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| CaseIoError::io(&path, e))?;
    }
    Ok(())
}
