use num_complex::Complex64;

use super::{BusLookup, PowerFlowError};
use crate::netmodel::{Branch, NetworkCase};

/// Pi-model admittances of one branch: (Y_ff, Y_ft, Y_tf, Y_tt).
pub fn branch_admittances(br: &Branch) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(br.r, br.x).inv();
    let half_b = Complex64::new(0.0, br.b_charging / 2.0);
    let tap = Complex64::from_polar(br.ratio, br.phase_shift);
    let ytt = ys + half_b;
    let yff = ytt / (br.ratio * br.ratio);
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    (yff, yft, ytf, ytt)
}

/// Bus admittance matrix in row-compressed form, columns sorted per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ybus {
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl Ybus {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_default()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        let mut d = vec![vec![Complex64::default(); n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                d[i][j] = y;
            }
        }
        d
    }

    /// Current injections `I = Y V`.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

/// Assembles the bus admittance matrix, indexed by bus position in `case.buses`.
///
/// Out-of-service branches and branches touching isolated buses are skipped.
pub fn build_ybus(case: &NetworkCase) -> Result<Ybus, PowerFlowError> {
    let lookup = BusLookup::new(case)?;
    build_with(case, &lookup)
}

pub(crate) fn build_with(case: &NetworkCase, lookup: &BusLookup) -> Result<Ybus, PowerFlowError> {
    let n = case.buses.len();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| rows[i].push((j, y));

    for (i, bus) in case.buses.iter().enumerate() {
        if bus.in_service() {
            add(i, i, Complex64::new(bus.g_shunt, bus.b_shunt));
        }
    }
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let f = lookup.position(br.from_bus)?;
        let t = lookup.position(br.to_bus)?;
        if !case.buses[f].in_service() || !case.buses[t].in_service() {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(PowerFlowError::ZeroImpedance { branch: k });
        }
        if !(br.ratio > 0.0) {
            return Err(PowerFlowError::InvalidRatio { branch: k });
        }
        let (yff, yft, ytf, ytt) = branch_admittances(br);
        add(f, f, yff);
        add(f, t, yft);
        add(t, f, ytf);
        add(t, t, ytt);
    }

    for row in &mut rows {
        row.sort_unstable_by_key(|&(j, _)| j);
        row.dedup_by(|later, kept| {
            if later.0 == kept.0 {
                kept.1 += later.1;
                true
            } else {
                false
            }
        });
    }
    Ok(Ybus { rows })
}
