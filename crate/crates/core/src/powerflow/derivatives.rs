//! Polar power-injection kernels shared by the Newton solver and the OPF.
//!
//! For bus i, with `Y_ik = G + jB` and `θ = θ_i − θ_k`:
//!
//! ```text
//! P_i = Σ_k V_i V_k (G cos θ + B sin θ)
//! Q_i = Σ_k V_i V_k (G sin θ − B cos θ)
//! ```

use super::ybus::Ybus;
use crate::sparse::Triplets;

/// First derivatives of `(P_i, Q_i)` with respect to `(θ_k, V_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partial {
    pub row: usize,
    pub col: usize,
    pub dp_dth: f64,
    pub dp_dv: f64,
    pub dq_dth: f64,
    pub dq_dv: f64,
}

#[derive(Debug, Clone)]
pub struct PowerDerivatives {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// One entry per structural nonzero of Y; the diagonal entry of each row
    /// carries the accumulated self terms.
    pub partials: Vec<Partial>,
}

pub fn power_injections(ybus: &Ybus, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = ybus.dim();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for &(k, y) in ybus.row(i) {
            let (g, b) = (y.re, y.im);
            if k == i {
                p[i] += vm[i] * vm[i] * g;
                q[i] -= vm[i] * vm[i] * b;
            } else {
                let (s, c) = (va[i] - va[k]).sin_cos();
                p[i] += vm[i] * vm[k] * (g * c + b * s);
                q[i] += vm[i] * vm[k] * (g * s - b * c);
            }
        }
    }
    (p, q)
}

pub fn power_derivatives(ybus: &Ybus, vm: &[f64], va: &[f64]) -> PowerDerivatives {
    let n = ybus.dim();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut partials = Vec::with_capacity(ybus.nnz() + n);
    for i in 0..n {
        let mut diag = Partial {
            row: i,
            col: i,
            dp_dth: 0.0,
            dp_dv: 0.0,
            dq_dth: 0.0,
            dq_dv: 0.0,
        };
        for &(k, y) in ybus.row(i) {
            let (g, b) = (y.re, y.im);
            if k == i {
                p[i] += vm[i] * vm[i] * g;
                q[i] -= vm[i] * vm[i] * b;
                diag.dp_dv += 2.0 * vm[i] * g;
                diag.dq_dv -= 2.0 * vm[i] * b;
                continue;
            }
            let (s, c) = (va[i] - va[k]).sin_cos();
            let a = g * c + b * s;
            let bb = g * s - b * c;
            let vv = vm[i] * vm[k];
            p[i] += vv * a;
            q[i] += vv * bb;
            diag.dp_dth -= vv * bb;
            diag.dq_dth += vv * a;
            diag.dp_dv += vm[k] * a;
            diag.dq_dv += vm[k] * bb;
            partials.push(Partial {
                row: i,
                col: k,
                dp_dth: vv * bb,
                dp_dv: vm[i] * a,
                dq_dth: -vv * a,
                dq_dv: vm[i] * bb,
            });
        }
        partials.push(diag);
    }
    PowerDerivatives { p, q, partials }
}

/// Hessian of `Σ_i (λp_i P_i + λq_i Q_i)` over the stacked variables
/// `[θ_0..θ_{n-1}, V_0..V_{n-1}]`, as a symmetric 2n×2n triplet list.
pub fn weighted_hessian(ybus: &Ybus, vm: &[f64], va: &[f64], lam_p: &[f64], lam_q: &[f64]) -> Triplets {
    let n = ybus.dim();
    let th = |i: usize| i;
    let v = |i: usize| n + i;
    let mut h = Triplets::with_capacity(2 * n, 2 * n, 8 * ybus.nnz());
    let sym = |h: &mut Triplets, r: usize, c: usize, val: f64| {
        h.push(r, c, val);
        if r != c {
            h.push(c, r, val);
        }
    };
    for i in 0..n {
        let (lp, lq) = (lam_p[i], lam_q[i]);
        for &(k, y) in ybus.row(i) {
            let (g, b) = (y.re, y.im);
            if k == i {
                sym(&mut h, v(i), v(i), 2.0 * (lp * g - lq * b));
                continue;
            }
            let (s, co) = (va[i] - va[k]).sin_cos();
            let a = g * co + b * s;
            let bb = g * s - b * co;
            let cw = lp * a + lq * bb;
            let dw = lq * a - lp * bb;
            let vv = vm[i] * vm[k];
            sym(&mut h, th(i), th(i), -vv * cw);
            sym(&mut h, th(i), th(k), vv * cw);
            sym(&mut h, th(k), th(k), -vv * cw);
            sym(&mut h, th(i), v(i), vm[k] * dw);
            sym(&mut h, th(i), v(k), vm[i] * dw);
            sym(&mut h, th(k), v(i), -vm[k] * dw);
            sym(&mut h, th(k), v(k), -vm[i] * dw);
            sym(&mut h, v(i), v(k), cw);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Branch, Bus, BusKind, NetworkCase};
    use crate::powerflow::build_ybus;

    fn meshed() -> NetworkCase {
        let mut case = NetworkCase::new(100.0);
        for id in 1..=4 {
            let mut b = Bus::new(id, if id == 1 { BusKind::Slack } else { BusKind::Pq }, 20.0);
            b.b_shunt = 0.01 * f64::from(id);
            case.buses.push(b);
        }
        case.branches.push(Branch::line(1, 2, 0.02, 0.08, 0.03));
        case.branches.push(Branch::line(2, 3, 0.05, 0.12, 0.0));
        case.branches.push(Branch::line(3, 4, 0.01, 0.05, 0.01));
        let mut t = Branch::line(1, 4, 0.002, 0.1, 0.0);
        t.ratio = 1.04;
        t.phase_shift = 0.03;
        case.branches.push(t);
        case
    }

    const VM: [f64; 4] = [1.02, 0.97, 1.01, 0.99];
    const VA: [f64; 4] = [0.0, -0.05, -0.11, 0.02];

    #[test]
    fn hessian_matches_finite_difference_of_gradient() {
        let case = meshed();
        let y = build_ybus(&case).unwrap();
        let lp = [0.3, -1.2, 0.7, 2.0];
        let lq = [-0.4, 0.9, 1.5, -0.6];
        let n = 4;
        let grad = |vm: &[f64], va: &[f64]| {
            let d = power_derivatives(&y, vm, va);
            let mut g = vec![0.0; 2 * n];
            for pa in &d.partials {
                g[pa.col] += lp[pa.row] * pa.dp_dth + lq[pa.row] * pa.dq_dth;
                g[n + pa.col] += lp[pa.row] * pa.dp_dv + lq[pa.row] * pa.dq_dv;
            }
            g
        };
        let h = weighted_hessian(&y, &VM, &VA, &lp, &lq).to_dense();
        let eps = 1e-6;
        for j in 0..2 * n {
            let (mut vp, mut ap) = (VM.to_vec(), VA.to_vec());
            let (mut vmn, mut amn) = (VM.to_vec(), VA.to_vec());
            if j < n {
                ap[j] += eps;
                amn[j] -= eps;
            } else {
                vp[j - n] += eps;
                vmn[j - n] -= eps;
            }
            let (gp, gm) = (grad(&vp, &ap), grad(&vmn, &amn));
            for i in 0..2 * n {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h[i][j]).abs() < 1e-6 * (1.0 + fd.abs()), "H[{i}][{j}] {} vs {fd}", h[i][j]);
            }
        }
    }

    #[test]
    fn injections_agree_with_complex_product() {
        let case = meshed();
        let y = build_ybus(&case).unwrap();
        let v: Vec<_> = VM
            .iter()
            .zip(VA)
            .map(|(&m, a)| num_complex::Complex64::from_polar(m, a))
            .collect();
        let i = y.mul(&v);
        let (p, q) = power_injections(&y, &VM, &VA);
        let d = power_derivatives(&y, &VM, &VA);
        for k in 0..4 {
            let s = v[k] * i[k].conj();
            assert!((s.re - p[k]).abs() < 1e-13 && (s.im - q[k]).abs() < 1e-13);
            assert!((d.p[k] - p[k]).abs() < 1e-13 && (d.q[k] - q[k]).abs() < 1e-13);
        }
    }
}
