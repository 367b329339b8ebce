//! Discrete tap-changer control: a deadband rule applied to every
//! transformer at once, alternated with power-flow solves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{NetworkCase, OltcTransformer};
use crate::powerflow::{self, PowerFlowError, PowerFlowSolution, SolverOptions};

/// Tap move requested by the deadband rule: +1 raises the HV-side ratio
/// (lowering the controlled voltage), −1 lowers it.
pub fn tap_update(xfmr: &OltcTransformer, v_controlled: f64) -> i32 {
    let (lo, hi) = xfmr.band();
    if v_controlled > hi && xfmr.tap < xfmr.tap_max {
        1
    } else if v_controlled < lo && xfmr.tap > xfmr.tap_min {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegulationOutcome {
    /// Every controlled voltage is in band, or its tap is at a bound, or frozen.
    Settled,
    /// The round cap was reached with taps still wanting to move.
    RoundLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationReport {
    /// Rounds in which at least one tap moved.
    pub rounds: usize,
    pub solves: usize,
    pub taps: Vec<i32>,
    /// Transformers stopped after reversing direction.
    pub frozen: Vec<bool>,
    /// Controlled voltage outside its band with the tap at a bound.
    pub saturated: Vec<bool>,
    /// Tap deltas applied in each round.
    pub history: Vec<Vec<i32>>,
    pub outcome: RegulationOutcome,
}

impl RegulationReport {
    pub fn tap_moves(&self) -> usize {
        self.history
            .iter()
            .flatten()
            .map(|d| d.unsigned_abs() as usize)
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum RegulateError {
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("power flow did not converge on the initial solve (mismatch {mismatch:.3e})")]
    InitialDivergence { mismatch: f64 },
    /// The case is left at the last convergent taps and voltages.
    #[error("power flow diverged after tap round {round}")]
    Diverged {
        round: usize,
        last: Box<PowerFlowSolution>,
        taps: Vec<i32>,
    },
    #[error("controlled bus {0} not found")]
    UnknownControlledBus(u32),
}

/// Alternates solves and simultaneous tap updates until quiescent.
///
/// The case is modified in place: taps are moved and the final voltages and
/// slack dispatch are written back, so later solves warm-start from here.
pub fn regulate(
    case: &mut NetworkCase,
    opts: &SolverOptions,
    max_rounds: usize,
) -> Result<(PowerFlowSolution, RegulationReport), RegulateError> {
    let index = case.index();
    let controlled: Vec<usize> = case
        .oltcs
        .iter()
        .map(|o| {
            index
                .by_id
                .get(&o.controlled_bus)
                .copied()
                .ok_or(RegulateError::UnknownControlledBus(o.controlled_bus))
        })
        .collect::<Result<_, _>>()?;
    let n = case.oltcs.len();

    let mut sol = powerflow::solve(case, opts)?;
    if !sol.converged {
        return Err(RegulateError::InitialDivergence {
            mismatch: sol.max_mismatch,
        });
    }
    powerflow::apply_solution(case, &sol);
    let mut solves = 1;
    let mut last_dir = vec![0i32; n];
    let mut frozen = vec![false; n];
    let mut history = Vec::new();

    let outcome = loop {
        let mut deltas = vec![0i32; n];
        for (k, o) in case.oltcs.iter().enumerate() {
            if frozen[k] {
                continue;
            }
            let d = tap_update(o, sol.v_mag[controlled[k]]);
            if d != 0 && d == -last_dir[k] {
                frozen[k] = true;
            } else {
                deltas[k] = d;
            }
        }
        if deltas.iter().all(|&d| d == 0) {
            break RegulationOutcome::Settled;
        }
        if history.len() >= max_rounds {
            break RegulationOutcome::RoundLimit;
        }

        let before = case.taps();
        for (k, &d) in deltas.iter().enumerate() {
            if d != 0 {
                case.set_tap(k, before[k] + d)
                    .expect("tap_update respects tap bounds");
                last_dir[k] = d;
            }
        }
        history.push(deltas);
        let next = powerflow::solve(case, opts)?;
        solves += 1;
        if !next.converged {
            for (k, &t) in before.iter().enumerate() {
                case.set_tap(k, t).expect("restoring previous taps");
            }
            return Err(RegulateError::Diverged {
                round: history.len(),
                last: Box::new(sol),
                taps: before,
            });
        }
        powerflow::apply_solution(case, &next);
        sol = next;
    };

    let saturated = case
        .oltcs
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let v = sol.v_mag[controlled[k]];
            let (lo, hi) = o.band();
            (v > hi && o.tap == o.tap_max) || (v < lo && o.tap == o.tap_min)
        })
        .collect();
    let report = RegulationReport {
        rounds: history.len(),
        solves,
        taps: case.taps(),
        frozen,
        saturated,
        history,
        outcome,
    };
    Ok((sol, report))
}
