//! Numerical ground truth for the DTR closed forms: the DTR-induced chain on a
//! truncated space, its certified stationary distribution, and checks of the
//! column and first-row recurrences that the exact stationary law satisfies.

use serde::{Deserialize, Serialize};

use crate::chain::{self, TransitionRows};
use crate::dtr::{dtr_action, DtrThresholds, SubspaceTerms};
use crate::error::{Error, Result};
use crate::model::{Action, LinkParams, SystemState};
use crate::space::TruncatedStateSpace;

/// Absolute tolerance used by [`verify_lemma_recurrences`].
pub const RECURRENCE_TOLERANCE: f64 = 1e-9;

/// Default caps for oracle validation.
pub const DEFAULT_CAP: u64 = 600;

/// The DTR-induced chain with saturation at the caps.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    thresholds: DtrThresholds,
    params: LinkParams,
    forward: Vec<f64>,
    rows: TransitionRows,
}

/// Builds the chain; caps must exceed `delta1 + 1` and `delta2 + 2`.
pub fn build_chain(
    t: DtrThresholds,
    lp: LinkParams,
    space: TruncatedStateSpace,
) -> Result<TruncatedChain> {
    if space.k_max() <= t.delta1() + 1 {
        return Err(Error::InvalidParameter {
            name: "k_max",
            value: space.k_max() as f64,
            reason: "must exceed delta1 + 1",
        });
    }
    if space.d_max() <= t.delta2() + 2 {
        return Err(Error::InvalidParameter {
            name: "d_max",
            value: space.d_max() as f64,
            reason: "must exceed delta2 + 2",
        });
    }
    let forward: Vec<f64> = space
        .states()
        .map(|s| match dtr_action(t, s) {
            Action::Forward => 1.0,
            Action::Receive => 0.0,
        })
        .collect();
    let rows = TransitionRows::from_forward_probabilities(space, lp, &forward)?;
    Ok(TruncatedChain {
        thresholds: t,
        params: lp,
        forward,
        rows,
    })
}

impl TruncatedChain {
    pub fn space(&self) -> &TruncatedStateSpace {
        self.rows.space()
    }

    pub fn thresholds(&self) -> DtrThresholds {
        self.thresholds
    }

    pub fn params(&self) -> LinkParams {
        self.params
    }

    /// Nonzero transitions out of `s`.
    pub fn row(&self, s: SystemState) -> Result<Vec<(SystemState, f64)>> {
        let space = self.space();
        let i = space.index_of(s).ok_or(Error::OutOfSpace(s))?;
        Ok(self
            .rows
            .row(i)
            .iter()
            .map(|&(j, prob)| (space.state_at(j), prob))
            .collect())
    }

    pub fn transition_rows(&self) -> &TransitionRows {
        &self.rows
    }
}

/// Stationary law and metrics of a [`TruncatedChain`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub params: LinkParams,
    pub thresholds: DtrThresholds,
    pub space: TruncatedStateSpace,
    /// Mass per state in the space's index order.
    pub stationary: Vec<f64>,
    pub avg_aoi: f64,
    pub forwarding_rate: f64,
    pub subspace_terms: SubspaceTerms,
    /// `max |pi P - pi|`.
    pub residual: f64,
    /// Mass on states with `k = k_max` or `d = d_max`.
    pub boundary_mass: f64,
}

/// [`OracleReport`] without the distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleSummary {
    pub params: LinkParams,
    pub thresholds: DtrThresholds,
    pub space: TruncatedStateSpace,
    pub avg_aoi: f64,
    pub forwarding_rate: f64,
    pub subspace_terms: SubspaceTerms,
    pub residual: f64,
    pub boundary_mass: f64,
}

impl OracleReport {
    /// Mass of `s`; zero outside the space.
    pub fn prob(&self, s: SystemState) -> f64 {
        self.space.index_of(s).map_or(0.0, |i| self.stationary[i])
    }

    fn at(&self, k: u64, d: u64) -> f64 {
        self.prob(SystemState::new_unchecked(k, d))
    }

    pub fn summary(&self) -> OracleSummary {
        OracleSummary {
            params: self.params,
            thresholds: self.thresholds,
            space: self.space,
            avg_aoi: self.avg_aoi,
            forwarding_rate: self.forwarding_rate,
            subspace_terms: self.subspace_terms,
            residual: self.residual,
            boundary_mass: self.boundary_mass,
        }
    }
}

pub fn solve_stationary(chain: &TruncatedChain) -> Result<OracleReport> {
    let space = *chain.space();
    let st = chain::solve_with_rows(&chain.rows, chain.params, &chain.forward)?;
    let d2 = chain.thresholds.delta2();
    let mut terms = SubspaceTerms {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };
    let mut rate = 0.0;
    let mut boundary = 0.0;
    for (i, s) in space.states().enumerate() {
        let mass = st.pi[i];
        let age = s.destination_age() as f64 * mass;
        match s.d() {
            0 => terms.a += age,
            d if d < d2 => terms.b += age,
            _ => terms.c += age,
        }
        rate += chain.forward[i] * mass;
        if s.k() == space.k_max() || s.d() == space.d_max() {
            boundary += mass;
        }
    }
    Ok(OracleReport {
        params: chain.params,
        thresholds: chain.thresholds,
        space,
        stationary: st.pi,
        avg_aoi: terms.total(),
        forwarding_rate: rate,
        subspace_terms: terms,
        residual: st.residual,
        boundary_mass: boundary,
    })
}

/// Builds and solves the DTR chain on a `cap x cap` space.
pub fn solve_dtr(lp: LinkParams, t: DtrThresholds, cap: u64) -> Result<OracleReport> {
    let space = TruncatedStateSpace::new(cap, cap)?;
    solve_stationary(&build_chain(t, lp, space)?)
}

/// Which recurrence a [`LemmaViolation`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recurrence {
    /// Sub-threshold columns decay by `1 - p`.
    SubThresholdColumn,
    /// Forward-eligible columns decay by `1 - q` up to `k = delta1 + 1`, then by `1 - p`.
    ForwardColumn,
    /// Synchronized column: decay by `1 - p` plus the delivered mass `x (1 - q)^(k-2)` while `k <= delta1 + 1`.
    SynchronizedColumn,
    /// First row below the gain threshold.
    FirstRowBelowThreshold,
    /// First row above the gain threshold; exact only when `delta1 <= delta2 - 1`.
    FirstRowAboveThreshold,
    /// `q * sum_{d >= delta2} pi(1, d) = pi(2, 0)`.
    DeliveryBalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaViolation {
    pub recurrence: Recurrence,
    pub state: SystemState,
    pub lhs: f64,
    pub rhs: f64,
}

/// Residual `lhs - rhs` of a first-row recurrence above the gain threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstRowResidual {
    pub d: u64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Checks a distribution (given as `pi(k, d)`) against every recurrence on
/// `k < k_lim`, `d < d_lim`. The first-row recurrence above the gain
/// threshold is only checked when `delta1 <= delta2 - 1`.
pub fn lemma_violations(
    lp: LinkParams,
    t: DtrThresholds,
    pi: impl Fn(u64, u64) -> f64,
    k_lim: u64,
    d_lim: u64,
    tol: f64,
) -> Vec<LemmaViolation> {
    let (p, q) = (lp.p(), lp.q());
    let (a, b) = (1.0 - p, 1.0 - q);
    let (d1, d2) = (t.delta1(), t.delta2());
    let x = pi(2, 0);
    let mut out = Vec::new();
    let mut check = |recurrence, k, d, lhs: f64, rhs: f64| {
        if (lhs - rhs).abs().is_nan() || (lhs - rhs).abs() > tol {
            out.push(LemmaViolation {
                recurrence,
                state: SystemState::new_unchecked(k, d),
                lhs,
                rhs,
            });
        }
    };

    for d in 2..d_lim.min(d2) {
        for k in 2..k_lim {
            check(
                Recurrence::SubThresholdColumn,
                k,
                d,
                pi(k, d),
                a * pi(k - 1, d),
            );
        }
    }
    for d in d2..d_lim {
        for k in 2..k_lim {
            let rate = if k <= d1 + 1 { b } else { a };
            check(
                Recurrence::ForwardColumn,
                k,
                d,
                pi(k, d),
                rate * pi(k - 1, d),
            );
        }
    }
    for k in 3..k_lim {
        let injected = if k <= d1 + 1 {
            x * b.powi((k - 2) as i32)
        } else {
            0.0
        };
        check(
            Recurrence::SynchronizedColumn,
            k,
            0,
            pi(k, 0),
            a * pi(k - 1, 0) + injected,
        );
    }
    if d_lim > 2 {
        check(Recurrence::FirstRowBelowThreshold, 1, 2, pi(1, 2), p * x);
    }
    for d in 3..=d2.min(d_lim - 1) {
        let rhs = if d <= d1 + 1 {
            pi(1, d - 1) + p * b.powi((d - 2) as i32) * x
        } else {
            pi(1, d - 1)
        };
        check(Recurrence::FirstRowBelowThreshold, 1, d, pi(1, d), rhs);
    }
    if t.is_exact() {
        for r in first_row_residuals(lp, t, &pi, d_lim) {
            check(Recurrence::FirstRowAboveThreshold, 1, r.d, r.lhs, r.rhs);
        }
    }
    let delivered: f64 = (d2..=d_lim).map(|d| pi(1, d)).sum::<f64>() * q;
    check(Recurrence::DeliveryBalance, 2, 0, delivered, x);
    out
}

fn first_row_residuals(
    lp: LinkParams,
    t: DtrThresholds,
    pi: &impl Fn(u64, u64) -> f64,
    d_lim: u64,
) -> Vec<FirstRowResidual> {
    let p = lp.p();
    let (d1, d2) = (t.delta1(), t.delta2());
    let carry = p * (1.0 - lp.q()).powi(d1 as i32);
    (d2 + 1..d_lim)
        .map(|d| {
            let mut rhs = (1.0 - p) * pi(1, d - 1);
            if d > d1 + d2 {
                rhs += carry * pi(1, d - d1 - 1);
            }
            FirstRowResidual {
                d,
                lhs: pi(1, d),
                rhs,
            }
        })
        .collect()
}

/// Runs [`lemma_violations`] on an oracle solution, away from the saturated
/// boundary, at [`RECURRENCE_TOLERANCE`].
pub fn verify_lemma_recurrences(
    lp: LinkParams,
    t: DtrThresholds,
    report: &OracleReport,
) -> Vec<LemmaViolation> {
    lemma_violations(
        lp,
        t,
        |k, d| report.at(k, d),
        report.space.k_max(),
        report.space.d_max(),
        RECURRENCE_TOLERANCE,
    )
}

/// Residuals of the first-row recurrence above the gain threshold on an
/// oracle solution, for either branch. In the `delta1 > delta2 - 1` branch
/// they measure how far the chain departs from the product-form approximation.
pub fn gain_row_residuals(
    lp: LinkParams,
    t: DtrThresholds,
    report: &OracleReport,
) -> Vec<FirstRowResidual> {
    first_row_residuals(lp, t, &|k, d| report.at(k, d), report.space.d_max())
}
