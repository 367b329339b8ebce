#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdsynth::caseio::{load_bundle, CaseBundle, CaseDocument, RawStatement};
use tdsynth::netmodel::{Branch, Bus, BusKind, GenKind, Generator, NetworkCase, QuadraticCost};
use tdsynth::powerflow::{self, SolverOptions};
use tdsynth::synth::{self, Synthesis, SynthesisConfig};

pub fn templates() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("templates")
}

pub fn bundles() -> (CaseBundle, CaseBundle) {
    let t = templates();
    (
        load_bundle(&t.join("mini-tn")).expect("mini-tn loads"),
        load_bundle(&t.join("mini-dn")).expect("mini-dn loads"),
    )
}

/// Default config with `key = value` overrides.
pub fn config(overrides: &[(&str, &str)]) -> SynthesisConfig {
    let mut cfg = SynthesisConfig::default();
    for (k, v) in overrides {
        cfg.set(k, v).unwrap();
    }
    cfg
}

pub fn run(cfg: &SynthesisConfig) -> Synthesis {
    let (tn, dn) = bundles();
    synth::generate(&tn, &dn, cfg, None).unwrap_or_else(|e| panic!("generate failed: {e}"))
}

pub fn tight() -> SolverOptions {
    SolverOptions {
        tolerance: 1e-13,
        max_iterations: 30,
        ..SolverOptions::default()
    }
}

/// Two buses joined by a lossless reactance `x`; bus 2 draws `p` at unity
/// power factor, bus 1 holds 1.0 pu.
pub fn two_bus(p: f64, x: f64) -> NetworkCase {
    let mut case = NetworkCase::new(100.0);
    case.buses.push(Bus::new(1, BusKind::Slack, 132.0));
    let mut b = Bus::new(2, BusKind::Pq, 132.0);
    b.p_load = p;
    case.buses.push(b);
    case.branches.push(Branch::line(1, 2, 0.0, x, 0.0));
    let mut g = Generator::new(1, GenKind::TnUnit);
    g.p_max = 10.0;
    g.q_min = -10.0;
    g.q_max = 10.0;
    case.generators.push(g);
    case
}

/// Connected random case with 2..=`max_n` buses: one slack, some PV buses,
/// lines, off-nominal and phase-shifting transformers, shunts.
pub fn random_case(rng: &mut ChaCha8Rng, max_n: usize) -> NetworkCase {
    let n = rng.gen_range(2..=max_n);
    let mut case = NetworkCase::new(100.0);
    for i in 0..n {
        let kind = if i == 0 {
            BusKind::Slack
        } else if rng.gen_bool(0.3) {
            BusKind::Pv
        } else {
            BusKind::Pq
        };
        let mut b = Bus::new(i as u32 + 1, kind, 110.0);
        b.p_load = rng.gen_range(0.0..0.5);
        b.q_load = rng.gen_range(-0.1..0.2);
        if rng.gen_bool(0.2) {
            b.b_shunt = rng.gen_range(-0.05..0.05);
            b.g_shunt = rng.gen_range(0.0..0.01);
        }
        b.v_mag = rng.gen_range(0.9..1.1);
        b.v_ang = rng.gen_range(-0.3..0.3);
        case.buses.push(b);
        if kind != BusKind::Pq {
            let mut g = Generator::new(i as u32 + 1, GenKind::TnUnit);
            g.p = rng.gen_range(0.0..0.5);
            g.v_set = rng.gen_range(0.97..1.05);
            g.p_max = 10.0;
            g.q_min = -10.0;
            g.q_max = 10.0;
            case.generators.push(g);
        }
    }
    let edge = |case: &mut NetworkCase, f: usize, t: usize, rng: &mut ChaCha8Rng| {
        let mut br = Branch::line(
            f as u32 + 1,
            t as u32 + 1,
            rng.gen_range(0.001..0.05),
            rng.gen_range(0.01..0.2),
            rng.gen_range(0.0..0.05),
        );
        if rng.gen_bool(0.25) {
            br.ratio = rng.gen_range(0.95..1.05);
            br.phase_shift = rng.gen_range(-0.1..0.1);
        }
        case.branches.push(br);
    };
    for t in 1..n {
        let f = rng.gen_range(0..t);
        edge(&mut case, f, t, rng);
    }
    for _ in 0..rng.gen_range(0..n) {
        let f = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        if f != t {
            edge(&mut case, f, t, rng);
        }
    }
    case
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest `|J - J_fd|` over the largest `|J|`, with central differences of
/// the mismatch at the case's stored voltages.
pub fn jacobian_fd_error(case: &NetworkCase) -> f64 {
    let vm: Vec<f64> = case.buses.iter().map(|b| b.v_mag).collect();
    let va: Vec<f64> = case.buses.iter().map(|b| b.v_ang).collect();
    let jac = powerflow::reduced_jacobian(case, &vm, &va).unwrap();
    // columns: θ of PV then PQ buses, then V of PQ buses
    let pv: Vec<usize> = (0..vm.len()).filter(|&i| case.buses[i].kind == BusKind::Pv).collect();
    let pq: Vec<usize> = (0..vm.len()).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let mut cols: Vec<(bool, usize)> = pv.iter().chain(&pq).map(|&i| (true, i)).collect();
    cols.extend(pq.iter().map(|&i| (false, i)));
    assert_eq!(jac.len(), cols.len());

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (c, &(is_angle, i)) in cols.iter().enumerate() {
        let eval = |delta: f64| {
            let (mut m, mut a) = (vm.clone(), va.clone());
            if is_angle {
                a[i] += delta;
            } else {
                m[i] += delta;
            }
            powerflow::reduced_mismatch(case, &m, &a).unwrap()
        };
        let (fp, fm) = (eval(h), eval(-h));
        for r in 0..cols.len() {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            // the mismatch may be defined as specified minus computed
            worst = worst.max((jac[r][c] - fd).abs().min((jac[r][c] + fd).abs()));
            scale = scale.max(jac[r][c].abs());
        }
    }
    worst / scale.max(1.0)
}

/// Three buses in a triangle: cheap unit at the slack, dearer unit at a PV
/// bus, one load.
pub fn three_bus_opf() -> NetworkCase {
    let mut case = NetworkCase::new(100.0);
    let mut b1 = Bus::new(1, BusKind::Slack, 132.0);
    b1.v_min = 0.95;
    b1.v_max = 1.05;
    let mut b2 = Bus::new(2, BusKind::Pv, 132.0);
    b2.v_min = 0.95;
    b2.v_max = 1.05;
    let mut b3 = Bus::new(3, BusKind::Pq, 132.0);
    b3.p_load = 1.5;
    b3.q_load = 0.3;
    b3.v_min = 0.95;
    b3.v_max = 1.05;
    case.buses.extend([b1, b2, b3]);
    for (bus, c2, c1) in [(1, 0.02, 10.0), (2, 0.04, 8.0)] {
        let mut g = Generator::new(bus, GenKind::TnUnit);
        g.p = 0.75;
        g.p_max = 2.0;
        g.q_min = -1.0;
        g.q_max = 1.0;
        g.cost = QuadraticCost::new(c2, c1, 0.0);
        case.generators.push(g);
    }
    case.branches.push(Branch::line(1, 2, 0.01, 0.1, 0.02));
    case.branches.push(Branch::line(1, 3, 0.02, 0.12, 0.02));
    case.branches.push(Branch::line(2, 3, 0.015, 0.1, 0.02));
    case
}

/// Cheapest operating cost of [`three_bus_opf`] found by enumerating the
/// second unit's output and both generator voltage setpoints on a grid,
/// refined once around the best point. Each point is a power flow; points
/// violating any limit are discarded.
pub fn grid_search_cost(case: &NetworkCase) -> f64 {
    let opts = SolverOptions::default();
    let eval = |p2: f64, v1: f64, v2: f64| -> Option<f64> {
        let mut c = case.clone();
        c.generators[0].v_set = v1;
        c.generators[1].v_set = v2;
        c.generators[1].p = p2;
        let sol = powerflow::solve(&c, &opts).ok().filter(|s| s.converged)?;
        if c.buses.iter().zip(&sol.v_mag).any(|(b, &v)| v < b.v_min - 1e-9 || v > b.v_max + 1e-9) {
            return None;
        }
        powerflow::apply_solution(&mut c, &sol);
        for g in &c.generators {
            if g.p < g.p_min || g.p > g.p_max || g.q < g.q_min || g.q > g.q_max {
                return None;
            }
        }
        Some(c.generators.iter().map(|g| g.cost.eval_mw(g.p * c.base_mva)).sum())
    };
    let search = |p_range: (f64, f64, usize), v_range: (f64, f64, usize)| {
        let steps = |(lo, hi, k): (f64, f64, usize)| (0..=k).map(move |i| lo + (hi - lo) * i as f64 / k as f64);
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for p2 in steps(p_range) {
            for v1 in steps(v_range) {
                for v2 in steps(v_range) {
                    if let Some(cost) = eval(p2, v1, v2) {
                        if cost < best.0 {
                            best = (cost, p2, v1, v2);
                        }
                    }
                }
            }
        }
        best
    };
    let coarse = search((0.0, 2.0, 100), (0.95, 1.05, 4));
    let (_, p2, v1, v2) = coarse;
    let fine_v = |v: f64| ((v - 0.0125).max(0.95), (v + 0.0125).min(1.05));
    let (v1lo, v1hi) = fine_v(v1);
    let (v2lo, v2hi) = fine_v(v2);
    // the refinement keeps the shared voltage window of both units
    let fine = search(
        ((p2 - 0.03).max(0.0), (p2 + 0.03).min(2.0), 60),
        (v1lo.min(v2lo), v1hi.max(v2hi), 10),
    );
    coarse.0.min(fine.0)
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(f64::from),
        (-1e4f64..1e4),
        (-1e-3f64..1e-3),
        Just(0.0),
        Just(-0.0),
        (1e10f64..1e20),
    ]
}

/// Structurally valid documents with arbitrary finite numbers, optional
/// names and cost table, and unknown tables kept verbatim.
pub fn document() -> impl Strategy<Value = CaseDocument> {
    (1usize..6, 0usize..4, 0usize..6).prop_flat_map(|(nb, ng, nbr)| {
        (
            prop::option::of("[a-z][a-z0-9_]{0,8}"),
            prop_oneof![Just(100.0), (1.0f64..1000.0)],
            prop::collection::vec(prop::collection::vec(finite(), 13), nb),
            prop::collection::vec(prop::collection::vec(finite(), 21), ng),
            prop::collection::vec(prop::collection::vec(finite(), 13), nbr),
            prop::option::of(prop::collection::vec(
                prop::collection::vec(finite(), 3).prop_map(|c| {
                    let mut row = vec![2.0, 0.0, 0.0, 3.0];
                    row.extend(c);
                    row
                }),
                ng,
            )),
            prop::option::of(prop::collection::vec("[A-Za-z0-9 :'_-]{0,10}", nb)),
            prop::collection::vec((0u32..3, "[a-z]{1,6}"), 0..3),
        )
            .prop_map(|(fname, base, bus, gen, branch, gencost, names, extra)| {
                let mut doc = CaseDocument::new(base);
                doc.function_name = fname;
                doc.bus = bus;
                doc.gen = gen;
                doc.branch = branch;
                doc.gencost = gencost;
                doc.bus_name = names;
                doc.extra = extra
                    .into_iter()
                    .enumerate()
                    .map(|(i, (kind, word))| {
                        let name = format!("x{i}{word}");
                        let text = match kind {
                            0 => format!("mpc.{name} = [\n\t1\t2.5;\n\t3 4;\n];"),
                            1 => format!("mpc.{name} = {{'{word}', 'a;b'}};"),
                            _ => format!("mpc.{name} = 'text';"),
                        };
                        RawStatement { name, text }
                    })
                    .collect();
                doc
            })
    })
}
