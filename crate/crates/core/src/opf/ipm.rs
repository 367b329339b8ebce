//! Primal-dual interior-point method for
//!
//! ```text
//! min f(x)  s.t.  g(x) = 0,  x_v ≤ u  /  x_v ≥ l  (simple bounds)
//! ```
//!
//! Step rule and stopping tests follow the usual step-length-controlled
//! primal-dual scheme: a Newton step on the perturbed KKT system, a
//! fraction-to-boundary rule on slacks and multipliers, and a centering
//! parameter σ·(zᵀμ)/m.

use crate::sparse::Triplets;

/// Inequality `sign·(x[var] − value) ≤ 0`: sign +1 for an upper bound, −1
/// for a lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub var: usize,
    pub sign: f64,
    pub value: f64,
}

impl Bound {
    pub fn upper(var: usize, value: f64) -> Self {
        Bound { var, sign: 1.0, value }
    }

    pub fn lower(var: usize, value: f64) -> Self {
        Bound { var, sign: -1.0, value }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.sign * (x[self.var] - self.value)
    }
}

pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn bounds(&self) -> &[Bound];
    /// Objective value and gradient.
    fn objective(&self, x: &[f64]) -> (f64, Vec<f64>);
    /// Equality residuals and their Jacobian (`num_eq × num_vars`).
    fn equalities(&self, x: &[f64]) -> (Vec<f64>, Triplets);
    /// Hessian of `f(x) + λᵀg(x)`.
    fn lagrangian_hessian(&self, x: &[f64], lam: &[f64]) -> Triplets;
}

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tolerance: 1e-6,
            max_iterations: 150,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub lam: Vec<f64>,
    pub mu: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feas: f64,
    pub grad: f64,
    pub comp: f64,
}

impl IpmResult {
    pub fn kkt_residual(&self) -> f64 {
        self.feas.max(self.grad).max(self.comp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularKkt {
    pub iteration: usize,
}

const XI: f64 = 0.99995;
const SIGMA: f64 = 0.1;
const Z0: f64 = 1.0;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

fn lagrangian_gradient(df: &[f64], jac: &Triplets, lam: &[f64], bounds: &[Bound], mu: &[f64]) -> Vec<f64> {
    let mut lx = df.to_vec();
    for &(r, c, v) in jac.entries() {
        lx[c] += v * lam[r];
    }
    for (b, m) in bounds.iter().zip(mu) {
        lx[b.var] += b.sign * m;
    }
    lx
}

pub fn solve<P: Nlp>(p: &P, x0: &[f64], opts: &IpmOptions) -> Result<IpmResult, SingularKkt> {
    let n = p.num_vars();
    let neq = p.num_eq();
    let bounds = p.bounds();
    let m = bounds.len();
    let mut x = x0.to_vec();

    let (mut f, mut df) = p.objective(&x);
    let (mut g, mut jac) = p.equalities(&x);
    let mut h: Vec<f64> = bounds.iter().map(|b| b.eval(&x)).collect();
    let f0 = f;

    let mut gamma = 1.0;
    let mut lam = vec![0.0; neq];
    let mut z: Vec<f64> = h.iter().map(|&hv| if hv < -Z0 { -hv } else { Z0 }).collect();
    let mut mu: Vec<f64> = z
        .iter()
        .map(|&zv| if gamma / zv > Z0 { gamma / zv } else { Z0 })
        .collect();

    let conditions = |x: &[f64], z: &[f64], g: &[f64], h: &[f64], lx: &[f64], lam: &[f64], mu: &[f64]| {
        let maxh = h.iter().fold(0.0f64, |a, &b| a.max(b));
        let xnorm = inf_norm(x);
        let feas = inf_norm(g).max(maxh) / (1.0 + xnorm.max(inf_norm(z)));
        let grad = inf_norm(lx) / (1.0 + inf_norm(lam).max(inf_norm(mu)));
        let comp = z.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() / (1.0 + xnorm);
        (feas, grad, comp)
    };

    let mut lx = lagrangian_gradient(&df, &jac, &lam, bounds, &mu);
    let (mut feas, mut grad, mut comp) = conditions(&x, &z, &g, &h, &lx, &lam, &mu);
    let mut f_prev = f0;
    let mut converged = feas < opts.tolerance && grad < opts.tolerance && comp < opts.tolerance;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;

        // reduced KKT system [M Jᵀ; J 0] [dx; dλ] = [−N; −g]
        let hess = p.lagrangian_hessian(&x, &lam);
        let dim = n + neq;
        let mut kkt = Triplets::with_capacity(dim, dim, hess.entries().len() + 2 * jac.entries().len() + m);
        for &(r, c, v) in hess.entries() {
            kkt.push(r, c, v);
        }
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            rhs[i] = -lx[i];
        }
        for (j, b) in bounds.iter().enumerate() {
            kkt.push(b.var, b.var, mu[j] / z[j]);
            rhs[b.var] -= b.sign * (mu[j] * h[j] + gamma) / z[j];
        }
        for &(r, c, v) in jac.entries() {
            kkt.push(n + r, c, v);
            kkt.push(c, n + r, v);
        }
        for i in 0..neq {
            rhs[n + i] = -g[i];
        }
        let sol = kkt
            .to_csc()
            .solve(&rhs)
            .map_err(|_| SingularKkt { iteration: iterations })?;
        let (dx, dlam) = sol.split_at(n);

        let dz: Vec<f64> = bounds
            .iter()
            .enumerate()
            .map(|(j, b)| -h[j] - z[j] - b.sign * dx[b.var])
            .collect();
        let dmu: Vec<f64> = (0..m)
            .map(|j| -mu[j] + (gamma - mu[j] * dz[j]) / z[j])
            .collect();

        let step = |v: &[f64], dv: &[f64]| {
            let mut a: f64 = 1.0;
            for (vi, di) in v.iter().zip(dv) {
                if *di < 0.0 {
                    a = a.min(XI * (-vi / di));
                }
            }
            a
        };
        let alpha_p = step(&z, &dz);
        let alpha_d = step(&mu, &dmu);

        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for j in 0..m {
            z[j] += alpha_p * dz[j];
            mu[j] += alpha_d * dmu[j];
        }
        for i in 0..neq {
            lam[i] += alpha_d * dlam[i];
        }
        if m > 0 {
            gamma = SIGMA * z.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() / m as f64;
        }

        (f, df) = p.objective(&x);
        (g, jac) = p.equalities(&x);
        h = bounds.iter().map(|b| b.eval(&x)).collect();
        lx = lagrangian_gradient(&df, &jac, &lam, bounds, &mu);
        (feas, grad, comp) = conditions(&x, &z, &g, &h, &lx, &lam, &mu);
        let cost = (f - f_prev).abs() / (1.0 + f_prev.abs());
        f_prev = f;
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        converged = feas < opts.tolerance
            && grad < opts.tolerance
            && comp < opts.tolerance
            && cost < opts.tolerance;
    }

    Ok(IpmResult {
        x,
        lam,
        mu,
        f,
        iterations,
        converged,
        feas,
        grad,
        comp,
    })
}
