//! Double-threshold relaying (DTR): forward iff `k <= delta1` and `d >= delta2`.
//!
//! Closed forms for the stationary distribution, average AoI and forwarding
//! rate of the DTR-induced chain on the untruncated state space. Two parameter
//! regimes are distinguished by [`CaseBranch`]: when `delta1 <= delta2 - 1`
//! everything is exact; when `delta1 >= delta2 - 1` the normalization, the
//! forwarding rate and subspaces A and B are exact but the first row of
//! subspace C (and hence the average AoI) is approximate. At
//! `delta1 = delta2 - 1` both branches coincide and are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Action, LinkParams, ResourceBudget, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct DtrThresholds {
    delta1: u64,
    delta2: u64,
}

#[derive(Serialize, Deserialize)]
struct RawThresholds {
    delta1: u64,
    delta2: u64,
}

impl TryFrom<RawThresholds> for DtrThresholds {
    type Error = Error;

    fn try_from(raw: RawThresholds) -> Result<Self> {
        DtrThresholds::new(raw.delta1, raw.delta2)
    }
}

impl From<DtrThresholds> for RawThresholds {
    fn from(t: DtrThresholds) -> Self {
        RawThresholds {
            delta1: t.delta1,
            delta2: t.delta2,
        }
    }
}

impl DtrThresholds {
    pub fn new(delta1: u64, delta2: u64) -> Result<Self> {
        if delta1 < 1 {
            return Err(Error::InvalidParameter {
                name: "delta1",
                value: delta1 as f64,
                reason: "must be at least 1",
            });
        }
        if delta2 < 2 {
            return Err(Error::InvalidParameter {
                name: "delta2",
                value: delta2 as f64,
                reason: "must be at least 2",
            });
        }
        Ok(Self { delta1, delta2 })
    }

    pub fn delta1(&self) -> u64 {
        self.delta1
    }

    pub fn delta2(&self) -> u64 {
        self.delta2
    }

    pub fn case_flag(&self) -> CaseBranch {
        if self.delta1 + 1 > self.delta2 {
            CaseBranch::Ge
        } else {
            CaseBranch::Le
        }
    }

    /// True when every closed form is exact, i.e. `delta1 <= delta2 - 1`.
    pub fn is_exact(&self) -> bool {
        self.case_flag() == CaseBranch::Le
    }
}

/// Which closed-form branch applies. `delta1 = delta2 - 1` is reported as
/// [`CaseBranch::Le`]; both branches agree there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseBranch {
    /// `delta1 >= delta2 - 1`.
    Ge,
    /// `delta1 <= delta2 - 1`.
    Le,
}

pub fn dtr_action(t: DtrThresholds, s: SystemState) -> Action {
    if s.k() <= t.delta1 && s.d() >= t.delta2 {
        Action::Forward
    } else {
        Action::Receive
    }
}

/// `base^n`, with `0^0 = 1`.
fn pow(base: f64, n: u64) -> f64 {
    match i32::try_from(n) {
        Ok(n) => base.powi(n),
        Err(_) => base.powf(n as f64),
    }
}

/// `ln C(n, k)` for `k <= n`.
fn ln_binomial(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    let lg = |m: u64| libm::lgamma(m as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

/// `ln(base^n)`, with `0^0 = 1`.
fn ln_pow(base: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * base.ln()
    }
}

/// `(a^n - b^n) / (a - b)`, summed term by term when `a` and `b` are close.
fn diff_quotient(a: f64, b: f64, n: u64) -> f64 {
    if (a - b).abs() >= 1e-3 {
        return (pow(a, n) - pow(b, n)) / (a - b);
    }
    // sum_{i < n} a^i b^(n-1-i)
    let mut acc = 0.0;
    let mut bi = 1.0;
    for _ in 0..n {
        acc = acc * a + bi;
        bi *= b;
    }
    acc
}

/// Stationary mass of the synchronized state `(2, 0)`.
pub fn normalization_x(lp: LinkParams, t: DtrThresholds) -> f64 {
    x_for_branch(lp, t, t.case_flag())
}

fn x_for_branch(lp: LinkParams, t: DtrThresholds, branch: CaseBranch) -> f64 {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    let (d1, d2) = (t.delta1, t.delta2);
    match branch {
        CaseBranch::Ge => {
            let tail = pow(b, d2 - 1) * (1.0 - pow(b, (d1 + 1).saturating_sub(d2)));
            p * q * q / (q * (1.0 - p) + p * q * d2 as f64 + p * tail)
        }
        CaseBranch::Le => {
            p * q / ((1.0 - p) + p * d2 as f64 - p * (d2 - d1 - 1) as f64 * pow(b, d1))
        }
    }
}

/// Stationary mass of `(1, delta2)`.
pub fn pi_1_delta2(lp: LinkParams, t: DtrThresholds) -> f64 {
    pi_1_delta2_for_branch(lp, t, t.case_flag())
}

fn pi_1_delta2_for_branch(lp: LinkParams, t: DtrThresholds, branch: CaseBranch) -> f64 {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    let e = match branch {
        CaseBranch::Ge => t.delta2 - 1,
        CaseBranch::Le => t.delta1,
    };
    p * (1.0 - pow(b, e)) * x_for_branch(lp, t, branch) / q
}

/// Closed-form stationary distribution of the DTR chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormDistribution {
    params: LinkParams,
    thresholds: DtrThresholds,
    x: f64,
    pi_1_delta2: f64,
    case_flag: CaseBranch,
}

impl ClosedFormDistribution {
    pub fn new(lp: LinkParams, t: DtrThresholds) -> Self {
        Self::with_branch(lp, t, t.case_flag())
    }

    /// Evaluates the formulas of `branch` even where the other one applies.
    /// Only meaningful at `delta1 = delta2 - 1`, where both are valid.
    pub fn with_branch(lp: LinkParams, t: DtrThresholds, branch: CaseBranch) -> Self {
        Self {
            params: lp,
            thresholds: t,
            x: x_for_branch(lp, t, branch),
            pi_1_delta2: pi_1_delta2_for_branch(lp, t, branch),
            case_flag: branch,
        }
    }

    pub fn params(&self) -> LinkParams {
        self.params
    }

    pub fn thresholds(&self) -> DtrThresholds {
        self.thresholds
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn pi_1_delta2(&self) -> f64 {
        self.pi_1_delta2
    }

    pub fn case_flag(&self) -> CaseBranch {
        self.case_flag
    }

    /// True if the value at `s` is exact rather than approximate.
    pub fn is_exact_at(&self, s: SystemState) -> bool {
        self.case_flag == CaseBranch::Le || s.d() < self.thresholds.delta2
    }

    /// Mass of `(1, d)` divided by `pi(1, delta2)`, for `d >= delta2`.
    ///
    /// Sum over `l` of `C(N+l-1, l) (p (1-q)^delta1)^l (1-p)^(N-1)` with
    /// `n = (d - delta2) div (delta1 + 1)`, `m = (d - delta2) mod (delta1 + 1)`
    /// and `N = (n - l)(delta1 + 1) + m + 1`.
    pub fn first_row_ratio(&self, d: u64) -> f64 {
        let (d1, d2) = (self.thresholds.delta1, self.thresholds.delta2);
        debug_assert!(d >= d2);
        let a = 1.0 - self.params.p();
        let r = self.params.p() * pow(1.0 - self.params.q(), d1);
        let n = (d - d2) / (d1 + 1);
        let m = (d - d2) % (d1 + 1);
        (0..=n)
            .map(|l| {
                let big_n = (n - l) * (d1 + 1) + m + 1;
                (ln_binomial(big_n + l - 1, l) + ln_pow(r, l) + ln_pow(a, big_n - 1)).exp()
            })
            .sum()
    }

    /// `pi(k, d)` for `d >= delta2` given `pi(1, d)`.
    fn c_column(&self, k: u64, first_row: f64) -> f64 {
        let d1 = self.thresholds.delta1;
        let (a, b) = (1.0 - self.params.p(), 1.0 - self.params.q());
        if k <= d1 + 1 {
            pow(b, k - 1) * first_row
        } else {
            pow(b, d1) * pow(a, k - d1 - 1) * first_row
        }
    }

    /// `pi(k, d)`; exact except in subspace C when the branch is [`CaseBranch::Ge`].
    pub fn prob(&self, s: SystemState) -> f64 {
        let (k, d) = (s.k(), s.d());
        let (p, q) = (self.params.p(), self.params.q());
        let (a, b) = (1.0 - p, 1.0 - q);
        let (d1, d2) = (self.thresholds.delta1, self.thresholds.delta2);
        if d == 0 {
            if k <= d1 + 1 {
                diff_quotient(a, b, k - 1) * self.x
            } else {
                diff_quotient(a, b, d1) * pow(a, k - d1 - 1) * self.x
            }
        } else if d < d2 {
            let e = match self.case_flag {
                CaseBranch::Ge => d - 1,
                CaseBranch::Le => (d - 1).min(d1),
            };
            p * pow(a, k - 1) * (1.0 - pow(b, e)) * self.x / q
        } else {
            self.c_column(k, self.pi_1_delta2 * self.first_row_ratio(d))
        }
    }

    /// Evaluates every state with `k <= k_max`, `d <= d_max` as `(state, mass)`.
    ///
    /// Shares the first-row sums across each column, so this is much cheaper
    /// than calling [`Self::prob`] per state.
    pub fn grid(&self, k_max: u64, d_max: u64) -> Vec<(SystemState, f64)> {
        let mut out = Vec::new();
        for k in 2..=k_max {
            let s = SystemState::new_unchecked(k, 0);
            out.push((s, self.prob(s)));
        }
        for d in 2..=d_max {
            if d < self.thresholds.delta2 {
                for k in 1..=k_max {
                    let s = SystemState::new_unchecked(k, d);
                    out.push((s, self.prob(s)));
                }
            } else {
                let first = self.pi_1_delta2 * self.first_row_ratio(d);
                for k in 1..=k_max {
                    out.push((SystemState::new_unchecked(k, d), self.c_column(k, first)));
                }
            }
        }
        out
    }
}

pub fn stationary_prob(lp: LinkParams, t: DtrThresholds, s: SystemState) -> f64 {
    ClosedFormDistribution::new(lp, t).prob(s)
}

/// An average AoI together with whether the formula that produced it is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoiValue {
    pub value: f64,
    pub exact: bool,
}

/// Average destination AoI. Approximate (`exact = false`) iff `delta1 > delta2 - 1`.
pub fn dtr_avg_aoi(lp: LinkParams, t: DtrThresholds) -> AoiValue {
    if t.delta1 + 1 == t.delta2 {
        return AoiValue {
            value: aoi_equal_minus_one(lp, t.delta1),
            exact: true,
        };
    }
    match t.case_flag() {
        CaseBranch::Ge => AoiValue {
            value: aoi_ge(lp, t),
            exact: false,
        },
        CaseBranch::Le => AoiValue {
            value: aoi_le(lp, t),
            exact: true,
        },
    }
}

pub(crate) fn aoi_ge(lp: LinkParams, t: DtrThresholds) -> f64 {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    let (d1, d2) = (t.delta1 as f64, t.delta2 as f64);
    let b_d1 = pow(b, t.delta1);
    let b_d2 = pow(b, t.delta2 - 1);
    let den = q * (1.0 - p) + p * q * d2 + p * b_d2 - p * b_d1;
    let first = ((p * d1 - q * d2) * b_d1 + q * d2 * (p * (d2 - 1.0) / 2.0 + 1.0) + 1.0) / den;
    let second = (1.0 - b_d2)
        * (p * (p * d1 - q * d1 - q) * b_d1 + p - q - p * q * d1
            + q * (p * d1 + 1.0) / (1.0 - b_d1))
        / (p * (1.0 - b_d1) * den);
    1.0 / p + 1.0 / q + d2 - first + second
}

pub(crate) fn aoi_le(lp: LinkParams, t: DtrThresholds) -> f64 {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    let (d1, d2) = (t.delta1 as f64, t.delta2 as f64);
    let b_d1 = pow(b, t.delta1);
    let num = (d2 + (1.0 - p) * d1 + p * d1 * d2) / 2.0;
    let den = (1.0 - p) + p * d2 - p * (d2 - d1 - 1.0) * b_d1;
    1.0 / q + 1.0 / (p * (1.0 - b_d1)) + (d1 + d2) / 2.0 - num / den
}

fn aoi_equal_minus_one(lp: LinkParams, delta1: u64) -> f64 {
    let (p, q) = (lp.p(), lp.q());
    let d1 = delta1 as f64;
    let g = 1.0 - pow(1.0 - q, delta1);
    1.0 / q + (d1 + 1.0) / 2.0 + 1.0 / (p * g) - (d1 + 1.0) / (2.0 * (1.0 + p * d1))
}

/// Reduced closed forms for special threshold configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecialCase {
    /// `delta1 = delta2 - 1`; exact.
    EqualMinusOne,
    /// Perfect relay-destination link (`q -> 1`) with `delta1 >= delta2 - 1`. Ignores `q`.
    QtoOne,
    /// Gain threshold inactive, `delta2 = 2`.
    Delta2Inactive,
    /// Relay-age threshold inactive, `delta1 -> infinity`. Ignores `delta1`.
    Delta1Infinite,
}

pub fn dtr_avg_aoi_special(lp: LinkParams, t: DtrThresholds, case: SpecialCase) -> Result<f64> {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    match case {
        SpecialCase::EqualMinusOne => {
            if t.delta1 + 1 != t.delta2 {
                return Err(Error::SpecialCase(
                    "EqualMinusOne needs delta1 = delta2 - 1",
                ));
            }
            Ok(aoi_equal_minus_one(lp, t.delta1))
        }
        SpecialCase::QtoOne => {
            if t.delta1 + 1 < t.delta2 {
                return Err(Error::SpecialCase("QtoOne needs delta1 >= delta2 - 1"));
            }
            let d2 = t.delta2 as f64;
            Ok(1.0 + 1.0 / p + p * d2 * (d2 - 1.0) / (2.0 * (1.0 - p + p * d2)))
        }
        SpecialCase::Delta2Inactive => {
            if t.delta2 != 2 {
                return Err(Error::SpecialCase("Delta2Inactive needs delta2 = 2"));
            }
            let d1 = t.delta1 as f64;
            let b_d1 = pow(b, t.delta1);
            let g = 1.0 - b_d1;
            let h = q + p * g;
            Ok(1.0 / p + 1.0 / q + 2.0
                - ((p * d1 - 2.0 * q) * b_d1 + p * q * (d1 + 1.0) + 2.0 * q + 1.0) / h
                + q * (p * d1 + 1.0) / (p * g * g)
                - q * (p * (q * d1 + q) * b_d1 + q + p * q * d1) / (p * g * h))
        }
        SpecialCase::Delta1Infinite => {
            let d2 = t.delta2 as f64;
            let b_d2 = pow(b, t.delta2 - 1);
            Ok(1.0 / p + 1.0 / q + d2
                - (q * d2 * (p * (d2 - 1.0) / 2.0 + 1.0) + b_d2)
                    / (q * (1.0 - p) + p * q * d2 + p * b_d2))
        }
    }
}

/// Long-run fraction of slots spent forwarding; exact in both branches.
pub fn dtr_forwarding_rate(lp: LinkParams, t: DtrThresholds) -> f64 {
    let q = lp.q();
    (1.0 - pow(1.0 - q, t.delta1)) * normalization_x(lp, t) / (q * q)
}

/// Average-AoI contributions of the three subspaces.
///
/// `a = sum k pi(k, 0)`, `b = sum (k + d) pi(k, d)` over `2 <= d < delta2`,
/// `c = sum (k + d) pi(k, d)` over `d >= delta2`. The destination age in the
/// synchronized column is `k`, so `a + b + c` is the average AoI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SubspaceTerms {
    pub fn total(&self) -> f64 {
        self.a + self.b + self.c
    }
}

/// Closed-form subspace terms; `c` is approximate in the [`CaseBranch::Ge`] branch.
pub fn subspace_terms(lp: LinkParams, t: DtrThresholds) -> SubspaceTerms {
    let (p, q) = (lp.p(), lp.q());
    let b = 1.0 - q;
    let (d1, d2) = (t.delta1 as f64, t.delta2 as f64);
    let x = normalization_x(lp, t);
    let b_d1 = pow(b, t.delta1);
    let g = 1.0 - b_d1;

    let a_term = ((p + q) * g - p * q * d1 * b_d1) / (p * p * q * q) * x;
    let c_head = (b_d1 * ((d1 + d2) / p + 1.0 / (p * p) - (d1 + d2) / q - 1.0 / (q * q))
        + d2 / q
        + 1.0 / (q * q))
        / q
        * x;
    let c_scale = ((1.0 / p - 1.0 / q) * b_d1 + 1.0 / q) * x;

    let (b_term, c_term) = match t.case_flag() {
        CaseBranch::Ge => {
            let b_d2 = pow(b, t.delta2 - 1);
            let h = 1.0 - b_d2;
            let b_term = (q * d2 - q - h) / (p * q * q) * x
                + (d2 + 1.0) * (d2 - 2.0) / (2.0 * q) * x
                - (1.0 - q * q - (1.0 - q + q * d2) * b_d2) / (q * q * q) * x;
            let c_term = c_head
                + c_scale * (d1 * b_d1 * h / (q * g * g) + h / (p * q * g * g) - h / (q * g));
            (b_term, c_term)
        }
        CaseBranch::Le => {
            let b_term = (q * d2 - q - 1.0 + (1.0 - q * d2 + q * d1 + q) * b_d1) / (p * q * q) * x
                + (d2 + 1.0) * (d2 - 2.0) / (2.0 * q) * x
                - (1.0 - q * q - (1.0 + q + q * d1) * b_d1 * b) / (q * q * q) * x
                - b_d1 * (d1 + d2 + 1.0) * (d2 - d1 - 2.0) / (2.0 * q) * x;
            let c_term = c_head + (d1 * b_d1 / (q * g) + 1.0 / (p * q * g) - 1.0 / q) * c_scale;
            (b_term, c_term)
        }
    };
    SubspaceTerms {
        a: a_term,
        b: b_term,
        c: c_term,
    }
}

/// Best thresholds found by [`optimize_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizedThresholds {
    pub thresholds: DtrThresholds,
    pub avg_aoi: AoiValue,
    pub forwarding_rate: f64,
}

/// Exhaustive search over `[1, delta1_max] x [2, delta2_max]` for the pair
/// with the smallest closed-form average AoI among those whose forwarding
/// rate is within the budget. Ties keep the smaller `delta1`, then `delta2`.
pub fn optimize_thresholds(
    lp: LinkParams,
    budget: ResourceBudget,
    delta1_max: u64,
    delta2_max: u64,
) -> Result<OptimizedThresholds> {
    if delta1_max < 1 || delta2_max < 2 {
        return Err(Error::InvalidParameter {
            name: "search bounds",
            value: delta1_max.min(delta2_max) as f64,
            reason: "need delta1_max >= 1 and delta2_max >= 2",
        });
    }
    let mut best: Option<OptimizedThresholds> = None;
    let mut min_rate = f64::INFINITY;
    for d1 in 1..=delta1_max {
        for d2 in 2..=delta2_max {
            let t = DtrThresholds {
                delta1: d1,
                delta2: d2,
            };
            let rate = dtr_forwarding_rate(lp, t);
            min_rate = min_rate.min(rate);
            if rate > budget.eta_c() {
                continue;
            }
            let aoi = dtr_avg_aoi(lp, t);
            let better = match &best {
                None => true,
                Some(b) => aoi.value < b.avg_aoi.value * (1.0 - 1e-12),
            };
            if better {
                best = Some(OptimizedThresholds {
                    thresholds: t,
                    avg_aoi: aoi,
                    forwarding_rate: rate,
                });
            }
        }
    }
    best.ok_or(Error::NoFeasibleThresholds { min_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(p: f64, q: f64) -> LinkParams {
        LinkParams::new(p, q).unwrap()
    }

    fn th(d1: u64, d2: u64) -> DtrThresholds {
        DtrThresholds::new(d1, d2).unwrap()
    }

    fn st(k: u64, d: u64) -> SystemState {
        SystemState::new(k, d).unwrap()
    }

    #[test]
    fn action_examples() {
        assert_eq!(dtr_action(th(3, 4), st(2, 5)), Action::Forward);
        assert_eq!(dtr_action(th(3, 4), st(4, 5)), Action::Receive);
        assert_eq!(dtr_action(th(3, 4), st(2, 0)), Action::Receive);
    }

    #[test]
    fn threshold_domain() {
        assert!(DtrThresholds::new(0, 2).is_err());
        assert!(DtrThresholds::new(1, 1).is_err());
        assert_eq!(th(3, 4).case_flag(), CaseBranch::Le);
        assert_eq!(th(3, 3).case_flag(), CaseBranch::Ge);
        assert_eq!(th(1, 5).case_flag(), CaseBranch::Le);
    }

    #[test]
    fn perfect_links_cycle() {
        let (l, t) = (lp(1.0, 1.0), th(1, 2));
        assert_eq!(normalization_x(l, t), 0.5);
        assert_eq!(stationary_prob(l, t, st(1, 2)), 0.5);
        assert_eq!(stationary_prob(l, t, st(2, 0)), 0.5);
        assert_eq!(dtr_avg_aoi(l, t).value, 2.5);
        assert_eq!(dtr_forwarding_rate(l, t), 0.5);
    }

    #[test]
    fn first_row_ratio_is_one_at_threshold() {
        for (d1, d2) in [(1, 2), (3, 2), (1, 5), (4, 4)] {
            let cf = ClosedFormDistribution::new(lp(0.6, 0.7), th(d1, d2));
            assert_eq!(cf.first_row_ratio(d2), 1.0);
            assert_eq!(cf.prob(st(1, d2)), cf.pi_1_delta2());
        }
    }

    #[test]
    fn equal_links_use_the_limit() {
        let t = th(3, 6);
        let near = ClosedFormDistribution::new(lp(0.5, 0.5 + 1e-10), t);
        let same = ClosedFormDistribution::new(lp(0.5, 0.5), t);
        for k in 2..12 {
            let (a, b) = (near.prob(st(k, 0)), same.prob(st(k, 0)));
            assert!(a.is_finite() && b.is_finite());
            assert!((a - b).abs() < 1e-9, "k={k}: {a} vs {b}");
        }
        // (k - 1) (1 - p)^(k - 2) x at k = 3
        assert!((same.prob(st(3, 0)) - 2.0 * 0.5 * same.x()).abs() < 1e-15);
    }

    #[test]
    fn diff_quotient_branches_agree() {
        for n in [0, 1, 2, 7, 40] {
            let (a, b) = (0.4, 0.4 + 5e-4);
            let closed = (pow(a, n) - pow(b, n)) / (a - b);
            let summed = diff_quotient(a, b, n);
            assert!((closed - summed).abs() <= 1e-9 * summed.max(1.0), "n={n}");
        }
        assert!((diff_quotient(0.3, 0.3, 3) - 3.0 * 0.3 * 0.3).abs() < 1e-16);
    }

    #[test]
    fn boundary_branches_agree() {
        for (p, q) in [(0.3, 0.9), (0.6, 0.7), (0.5, 0.5), (0.9, 0.3)] {
            for d1 in 1..6 {
                let t = th(d1, d1 + 1);
                let l = lp(p, q);
                let ge = aoi_ge(l, t);
                let le = aoi_le(l, t);
                let special = dtr_avg_aoi_special(l, t, SpecialCase::EqualMinusOne).unwrap();
                assert!((ge - le).abs() < 1e-12, "{ge} vs {le}");
                assert!((le - special).abs() < 1e-12);
                assert_eq!(
                    dtr_avg_aoi(l, t),
                    AoiValue {
                        value: special,
                        exact: true
                    }
                );
            }
        }
    }

    #[test]
    fn special_case_preconditions() {
        let l = lp(0.6, 0.7);
        assert!(dtr_avg_aoi_special(l, th(2, 5), SpecialCase::EqualMinusOne).is_err());
        assert!(dtr_avg_aoi_special(l, th(1, 4), SpecialCase::QtoOne).is_err());
        assert!(dtr_avg_aoi_special(l, th(3, 3), SpecialCase::Delta2Inactive).is_err());
        assert!(dtr_avg_aoi_special(l, th(1, 4), SpecialCase::Delta1Infinite).is_ok());
    }

    #[test]
    fn q_to_one_value() {
        let v = dtr_avg_aoi_special(lp(0.6, 0.5), th(1, 2), SpecialCase::QtoOne).unwrap();
        assert!((v - (1.0 + 1.0 / 0.6 + 0.6 * 2.0 / (2.0 * 1.6))).abs() < 1e-15);
        assert!((v - 3.0417).abs() < 5e-5);
        let v = dtr_avg_aoi_special(lp(1.0, 0.5), th(2, 3), SpecialCase::QtoOne).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
    }

    #[test]
    fn inactive_gain_threshold_matches_general_form() {
        for (p, q) in [(0.3, 0.9), (0.6, 0.7), (0.5, 0.5), (0.9, 0.3), (1.0, 0.4)] {
            for d1 in 1..10 {
                let l = lp(p, q);
                let t = th(d1, 2);
                let general = aoi_ge(l, t);
                let special = dtr_avg_aoi_special(l, t, SpecialCase::Delta2Inactive).unwrap();
                assert!((general - special).abs() < 1e-11, "{general} vs {special}");
            }
        }
    }

    #[test]
    fn forwarding_rate_monotone() {
        let l = lp(0.6, 0.7);
        for d2 in 2..10 {
            let rates: Vec<f64> = (1..12)
                .map(|d1| dtr_forwarding_rate(l, th(d1, d2)))
                .collect();
            assert!(rates.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        }
    }

    #[test]
    fn subspace_terms_sum_to_closed_form() {
        for (p, q, d1, d2) in [
            (0.5, 0.5, 1, 4),
            (0.3, 0.9, 2, 5),
            (0.6, 0.7, 3, 2),
            (0.9, 0.3, 4, 3),
        ] {
            let (l, t) = (lp(p, q), th(d1, d2));
            let total = subspace_terms(l, t).total();
            let v = if t.is_exact() {
                aoi_le(l, t)
            } else {
                aoi_ge(l, t)
            };
            assert!((total - v).abs() < 1e-10 * v, "{total} vs {v}");
        }
    }

    #[test]
    fn optimizer_on_perfect_links() {
        let best =
            optimize_thresholds(lp(1.0, 1.0), ResourceBudget::new(1.0).unwrap(), 10, 10).unwrap();
        assert_eq!(best.thresholds, th(1, 2));
        assert_eq!(best.avg_aoi.value, 2.5);
    }

    #[test]
    fn optimizer_reports_infeasible() {
        let err = optimize_thresholds(lp(0.6, 0.7), ResourceBudget::new(0.01).unwrap(), 3, 3);
        assert!(matches!(err, Err(Error::NoFeasibleThresholds { .. })));
    }

    #[test]
    fn thresholds_serde_round_trip() {
        let t = th(3, 5);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<DtrThresholds>(&s).unwrap(), t);
        assert!(serde_json::from_str::<DtrThresholds>(r#"{"delta1":0,"delta2":3}"#).is_err());
    }
}
