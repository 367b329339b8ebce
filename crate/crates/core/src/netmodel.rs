//! Per-unit steady-state network model.
//!
//! All electrical quantities are stored in per-unit on the case `base_mva`,
//! angles in radians. Conversion to MW/Mvar/degrees happens only in the
//! I/O layer.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Pq,
    Pv,
    Slack,
    /// Out of service (MATPOWER bus type 4).
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_mag: f64,
    pub v_ang: f64,
    pub base_kv: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub area: u32,
    pub zone: u32,
    pub name: String,
}

impl Bus {
    /// A PQ bus at flat voltage with no load and limits of [0.9, 1.1].
    pub fn new(id: BusId, kind: BusKind, base_kv: f64) -> Self {
        Bus {
            id,
            kind,
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v_mag: 1.0,
            v_ang: 0.0,
            base_kv,
            v_max: 1.1,
            v_min: 0.9,
            area: 1,
            zone: 1,
            name: String::new(),
        }
    }

    pub fn in_service(&self) -> bool {
        self.kind != BusKind::Isolated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenKind {
    TnUnit,
    DnControllable,
    DnPv,
}

impl GenKind {
    pub fn is_distributed(self) -> bool {
        matches!(self, GenKind::DnControllable | GenKind::DnPv)
    }

    pub fn label(self) -> &'static str {
        match self {
            GenKind::TnUnit => "tn",
            GenKind::DnControllable => "controllable",
            GenKind::DnPv => "pv",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "tn" => Some(GenKind::TnUnit),
            "controllable" => Some(GenKind::DnControllable),
            "pv" => Some(GenKind::DnPv),
            _ => None,
        }
    }
}

/// Quadratic cost `c2·P² + c1·P + c0` with `P` in MW.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuadraticCost {
    pub fn new(c2: f64, c1: f64, c0: f64) -> Self {
        QuadraticCost { c2, c1, c0 }
    }

    pub fn eval_mw(&self, p_mw: f64) -> f64 {
        self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus_id: BusId,
    pub p: f64,
    pub q: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
    pub in_service: bool,
    pub controllable: bool,
    pub kind: GenKind,
    pub cost: QuadraticCost,
}

impl Generator {
    pub fn new(bus_id: BusId, kind: GenKind) -> Self {
        Generator {
            bus_id,
            p: 0.0,
            q: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            q_min: 0.0,
            q_max: 0.0,
            v_set: 1.0,
            in_service: true,
            controllable: kind != GenKind::DnPv,
            kind,
            cost: QuadraticCost::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    /// Off-nominal turns ratio on the from side; 1.0 for a plain line.
    pub ratio: f64,
    pub phase_shift: f64,
    /// MVA rating in per-unit; 0 means unlimited.
    pub rate_a: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn line(from_bus: BusId, to_bus: BusId, r: f64, x: f64, b_charging: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r,
            x,
            b_charging,
            ratio: 1.0,
            phase_shift: 0.0,
            rate_a: 0.0,
            in_service: true,
        }
    }
}

/// On-load tap changer attached to a branch (by index into `NetworkCase::branches`).
///
/// The branch ratio is always `1 + tap * tap_step`; use
/// [`NetworkCase::set_tap`] to move the tap so both stay in sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OltcTransformer {
    pub branch: usize,
    pub controlled_bus: BusId,
    pub v_set: f64,
    pub deadband: f64,
    pub tap: i32,
    pub tap_min: i32,
    pub tap_max: i32,
    pub tap_step: f64,
}

impl OltcTransformer {
    pub fn ratio_at(&self, tap: i32) -> f64 {
        1.0 + f64::from(tap) * self.tap_step
    }

    pub fn ratio(&self) -> f64 {
        self.ratio_at(self.tap)
    }

    pub fn band(&self) -> (f64, f64) {
        (self.v_set - self.deadband / 2.0, self.v_set + self.deadband / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub oltcs: Vec<OltcTransformer>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("undefined penetration: total active load is zero")]
    UndefinedPenetration,
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("tap {tap} outside [{min}, {max}] for transformer {index}")]
    TapOutOfRange {
        index: usize,
        tap: i32,
        min: i32,
        max: i32,
    },
}

/// Lookup tables from bus id / bus name to position in `NetworkCase::buses`.
#[derive(Debug, Clone, Default)]
pub struct CaseIndex {
    pub by_id: HashMap<BusId, usize>,
    pub by_name: HashMap<String, usize>,
}

impl NetworkCase {
    pub fn new(base_mva: f64) -> Self {
        NetworkCase {
            base_mva,
            buses: Vec::new(),
            generators: Vec::new(),
            branches: Vec::new(),
            oltcs: Vec::new(),
        }
    }

    pub fn index(&self) -> CaseIndex {
        let mut idx = CaseIndex::default();
        for (i, b) in self.buses.iter().enumerate() {
            idx.by_id.entry(b.id).or_insert(i);
            if !b.name.is_empty() {
                idx.by_name.entry(b.name.clone()).or_insert(i);
            }
        }
        idx
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_mut(&mut self, id: BusId) -> Option<&mut Bus> {
        self.buses.iter_mut().find(|b| b.id == id)
    }

    pub fn bus_by_name(&self, name: &str) -> Option<&Bus> {
        self.buses.iter().find(|b| b.name == name)
    }

    pub fn max_bus_id(&self) -> BusId {
        self.buses.iter().map(|b| b.id).max().unwrap_or(0)
    }

    /// Moves transformer `index` to `tap`, rewriting the branch ratio.
    pub fn set_tap(&mut self, index: usize, tap: i32) -> Result<(), ModelError> {
        let oltc = &mut self.oltcs[index];
        if tap < oltc.tap_min || tap > oltc.tap_max {
            return Err(ModelError::TapOutOfRange {
                index,
                tap,
                min: oltc.tap_min,
                max: oltc.tap_max,
            });
        }
        oltc.tap = tap;
        let ratio = oltc.ratio();
        self.branches[oltc.branch].ratio = ratio;
        Ok(())
    }

    pub fn taps(&self) -> Vec<i32> {
        self.oltcs.iter().map(|o| o.tap).collect()
    }

    /// Re-derives every OLTC branch ratio from its tap.
    pub fn sync_tap_ratios(&mut self) {
        for o in &self.oltcs {
            if let Some(br) = self.branches.get_mut(o.branch) {
                br.ratio = o.ratio();
            }
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }

    pub fn total_load(&self) -> (f64, f64) {
        total_load(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    DuplicateBusId(BusId),
    MissingSlack { island: usize, buses: usize },
    MultipleSlack { island: usize, slacks: Vec<BusId> },
    DanglingBranch { branch: usize, bus: BusId },
    DanglingGenerator { generator: usize, bus: BusId },
    DanglingOltc { oltc: usize, detail: String },
    Disconnected { islands: usize },
    VoltageLimits { bus: BusId, v_min: f64, v_max: f64 },
    BaseKv { bus: BusId, base_kv: f64 },
    ZeroReactance { branch: usize },
    NonPositiveRatio { branch: usize, ratio: f64 },
    Tap { oltc: usize, detail: String },
    PvReactive { generator: usize },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::DuplicateBusId(id) => write!(f, "duplicate bus id {id}"),
            Issue::MissingSlack { island, buses } => {
                write!(f, "missing slack in island {island} ({buses} buses)")
            }
            Issue::MultipleSlack { island, slacks } => {
                write!(f, "multiple slack buses in island {island}: {slacks:?}")
            }
            Issue::DanglingBranch { branch, bus } => {
                write!(f, "dangling reference: branch {branch} -> bus {bus}")
            }
            Issue::DanglingGenerator { generator, bus } => {
                write!(f, "dangling reference: generator {generator} -> bus {bus}")
            }
            Issue::DanglingOltc { oltc, detail } => {
                write!(f, "dangling reference: oltc {oltc}: {detail}")
            }
            Issue::Disconnected { islands } => write!(f, "network has {islands} islands"),
            Issue::VoltageLimits { bus, v_min, v_max } => {
                write!(f, "bus {bus}: v_min {v_min} >= v_max {v_max}")
            }
            Issue::BaseKv { bus, base_kv } => write!(f, "bus {bus}: base_kv {base_kv} <= 0"),
            Issue::ZeroReactance { branch } => write!(f, "branch {branch}: x = 0 in service"),
            Issue::NonPositiveRatio { branch, ratio } => {
                write!(f, "branch {branch}: ratio {ratio} <= 0")
            }
            Issue::Tap { oltc, detail } => write!(f, "oltc {oltc}: {detail}"),
            Issue::PvReactive { generator } => {
                write!(f, "generator {generator}: PV unit must have q = 0 and not be controllable")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.issues.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "no issues");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Island label (0-based, ordered by first bus) for every bus position, using
/// in-service branches between in-service buses. Isolated buses get `None`.
pub fn islands(case: &NetworkCase) -> Vec<Option<usize>> {
    let idx = case.index();
    let mut ds = DisjointSet::new(case.buses.len());
    for br in case.branches.iter().filter(|b| b.in_service) {
        if let (Some(&f), Some(&t)) = (idx.by_id.get(&br.from_bus), idx.by_id.get(&br.to_bus)) {
            if case.buses[f].in_service() && case.buses[t].in_service() {
                ds.union(f, t);
            }
        }
    }
    let mut labels: HashMap<usize, usize> = HashMap::new();
    (0..case.buses.len())
        .map(|i| {
            if !case.buses[i].in_service() {
                return None;
            }
            let root = ds.find(i);
            let next = labels.len();
            Some(*labels.entry(root).or_insert(next))
        })
        .collect()
}

/// Lists every structural invariant violation; never fails.
pub fn validate(case: &NetworkCase) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            issues.push(Issue::DuplicateBusId(b.id));
        }
        if b.v_min >= b.v_max {
            issues.push(Issue::VoltageLimits {
                bus: b.id,
                v_min: b.v_min,
                v_max: b.v_max,
            });
        }
        if !(b.base_kv > 0.0) {
            issues.push(Issue::BaseKv {
                bus: b.id,
                base_kv: b.base_kv,
            });
        }
    }

    for (i, br) in case.branches.iter().enumerate() {
        for bus in [br.from_bus, br.to_bus] {
            if !seen.contains(&bus) {
                issues.push(Issue::DanglingBranch { branch: i, bus });
            }
        }
        if br.in_service && br.x == 0.0 {
            issues.push(Issue::ZeroReactance { branch: i });
        }
        if !(br.ratio > 0.0) {
            issues.push(Issue::NonPositiveRatio {
                branch: i,
                ratio: br.ratio,
            });
        }
    }

    for (i, g) in case.generators.iter().enumerate() {
        if !seen.contains(&g.bus_id) {
            issues.push(Issue::DanglingGenerator {
                generator: i,
                bus: g.bus_id,
            });
        }
        if g.kind == GenKind::DnPv && (g.q != 0.0 || g.controllable) {
            issues.push(Issue::PvReactive { generator: i });
        }
    }

    for (i, o) in case.oltcs.iter().enumerate() {
        match case.branches.get(o.branch) {
            None => issues.push(Issue::DanglingOltc {
                oltc: i,
                detail: format!("branch {} does not exist", o.branch),
            }),
            Some(br) => {
                let expected = o.ratio();
                if (br.ratio - expected).abs() > 1e-12 {
                    issues.push(Issue::Tap {
                        oltc: i,
                        detail: format!("branch ratio {} != 1 + tap*step = {expected}", br.ratio),
                    });
                }
            }
        }
        if !seen.contains(&o.controlled_bus) {
            issues.push(Issue::DanglingOltc {
                oltc: i,
                detail: format!("controlled bus {} does not exist", o.controlled_bus),
            });
        }
        if o.tap < o.tap_min || o.tap > o.tap_max {
            issues.push(Issue::Tap {
                oltc: i,
                detail: format!("tap {} outside [{}, {}]", o.tap, o.tap_min, o.tap_max),
            });
        }
        if !(o.deadband > 0.0) || !(o.tap_step > 0.0) {
            issues.push(Issue::Tap {
                oltc: i,
                detail: "deadband and tap_step must be positive".into(),
            });
        }
    }

    let labels = islands(case);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut slacks: Vec<Vec<BusId>> = vec![Vec::new(); count];
    let mut sizes = vec![0usize; count];
    for (b, label) in case.buses.iter().zip(&labels) {
        if let Some(l) = *label {
            sizes[l] += 1;
            if b.kind == BusKind::Slack {
                slacks[l].push(b.id);
            }
        }
    }
    for (island, s) in slacks.into_iter().enumerate() {
        match s.len() {
            0 => issues.push(Issue::MissingSlack {
                island,
                buses: sizes[island],
            }),
            1 => {}
            _ => issues.push(Issue::MultipleSlack { island, slacks: s }),
        }
    }
    if count > 1 {
        issues.push(Issue::Disconnected { islands: count });
    }

    ValidationReport { issues }
}

/// Sum of active and reactive demand over in-service buses.
pub fn total_load(case: &NetworkCase) -> (f64, f64) {
    case.buses
        .iter()
        .filter(|b| b.in_service())
        .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
}

/// Total active output of in-service distributed generators.
pub fn distributed_generation(case: &NetworkCase) -> f64 {
    case.generators
        .iter()
        .filter(|g| g.in_service && g.kind.is_distributed())
        .map(|g| g.p)
        .sum()
}

/// Ratio of distributed generation to total active demand.
pub fn penetration_level(case: &NetworkCase) -> Result<f64, ModelError> {
    let (p_load, _) = total_load(case);
    if !(p_load > 0.0) {
        return Err(ModelError::UndefinedPenetration);
    }
    Ok(distributed_generation(case) / p_load)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus() -> NetworkCase {
        let mut case = NetworkCase::new(100.0);
        case.buses.push(Bus::new(1, BusKind::Slack, 100.0));
        let mut b2 = Bus::new(2, BusKind::Pq, 100.0);
        b2.p_load = 0.5;
        case.buses.push(b2);
        case.branches.push(Branch::line(1, 2, 0.0, 0.1, 0.0));
        let mut g = Generator::new(1, GenKind::TnUnit);
        g.p_max = 10.0;
        case.generators.push(g);
        case
    }

    #[test]
    fn well_formed_case_validates() {
        assert!(validate(&two_bus()).is_empty());
    }

    #[test]
    fn missing_slack_reported() {
        let mut case = two_bus();
        case.buses[0].kind = BusKind::Pv;
        let report = validate(&case);
        assert!(report.messages().iter().any(|m| m.contains("missing slack")));
    }

    #[test]
    fn dangling_branch_reported() {
        let mut case = two_bus();
        case.branches.push(Branch::line(2, 9, 0.0, 0.1, 0.0));
        let report = validate(&case);
        assert!(report
            .issues
            .contains(&Issue::DanglingBranch { branch: 1, bus: 9 }));
        assert!(report.messages().iter().any(|m| m.contains("dangling reference")));
    }

    #[test]
    fn duplicate_ids_and_islands_reported() {
        let mut case = two_bus();
        case.buses.push(Bus::new(2, BusKind::Pq, 10.0));
        case.buses.push(Bus::new(3, BusKind::Pq, 10.0));
        let report = validate(&case);
        assert!(report.issues.contains(&Issue::DuplicateBusId(2)));
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, Issue::Disconnected { islands: 3 })));
    }

    #[test]
    fn tap_ratio_mismatch_reported() {
        let mut case = two_bus();
        case.oltcs.push(OltcTransformer {
            branch: 0,
            controlled_bus: 2,
            v_set: 1.0,
            deadband: 0.02,
            tap: 2,
            tap_min: -16,
            tap_max: 16,
            tap_step: 0.01,
        });
        assert!(!validate(&case).is_empty());
        case.sync_tap_ratios();
        assert!(validate(&case).is_empty());
        case.set_tap(0, -3).unwrap();
        assert_eq!(case.branches[0].ratio, 1.0 - 0.03);
        assert!(case.set_tap(0, 17).is_err());
    }

    #[test]
    fn total_load_sums_in_service() {
        let mut case = two_bus();
        case.buses[0].p_load = 0.3;
        let (p, _) = total_load(&case);
        assert!((p - 0.8).abs() < 1e-15);
        case.buses[0].kind = BusKind::Isolated;
        assert_eq!(total_load(&case).0, 0.5);
        assert_eq!(total_load(&NetworkCase::new(100.0)), (0.0, 0.0));
    }

    fn with_dg(load: f64, dg: &[(GenKind, f64)]) -> NetworkCase {
        let mut case = two_bus();
        case.buses[1].p_load = load;
        for &(kind, p) in dg {
            let mut g = Generator::new(2, kind);
            g.p = p;
            g.p_max = 10.0;
            case.generators.push(g);
        }
        case
    }

    #[test]
    fn penetration_examples() {
        let c = with_dg(1.0, &[(GenKind::DnControllable, 0.2), (GenKind::DnPv, 0.3)]);
        assert!((penetration_level(&c).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(penetration_level(&with_dg(1.0, &[])).unwrap(), 0.0);
        let c = with_dg(1.0, &[(GenKind::DnPv, 1.15)]);
        assert!((penetration_level(&c).unwrap() - 1.15).abs() < 1e-15);
        let c = with_dg(0.0, &[(GenKind::DnPv, 1.0)]);
        assert_eq!(penetration_level(&c), Err(ModelError::UndefinedPenetration));
    }

    #[test]
    fn tn_units_do_not_count_as_dg() {
        let c = with_dg(1.0, &[(GenKind::TnUnit, 0.7)]);
        assert_eq!(penetration_level(&c).unwrap(), 0.0);
    }
}
