//! Optimal scheduling under a forwarding-rate budget.
//!
//! The constrained problem is relaxed with a multiplier `lambda` on the
//! forwarding action. For fixed `lambda`, [`rvi_solve`] finds an average-cost
//! optimal deterministic policy on a truncated space by relative value
//! iteration. [`cmdp_solve`] bisects `lambda` until two policies bracket the
//! budget, then mixes them so that the long-run forwarding rate meets the
//! budget with equality.

use serde::{Deserialize, Serialize};

use crate::chain::{self, Stationary};
use crate::error::{Error, Result};
use crate::model::{Action, LinkParams, ResourceBudget, SystemState};
use crate::space::TruncatedStateSpace;

/// Default caps for the constrained solver.
pub const DEFAULT_CAP: u64 = 200;

/// Default bisection stopping gap on the multiplier.
pub const MULTIPLIER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviConfig {
    pub span_tolerance: f64,
    pub max_iterations: usize,
    pub reference_state: SystemState,
    /// Weight `tau` of the previous iterate in `V <- tau V + (1 - tau) T V`.
    /// Any `tau` in `(0, 1)` makes the iteration converge on periodic chains.
    pub damping: f64,
}

impl Default for RviConfig {
    fn default() -> Self {
        Self {
            span_tolerance: 1e-9,
            max_iterations: 200_000,
            reference_state: SystemState::synchronized(),
            damping: 0.5,
        }
    }
}

impl RviConfig {
    fn validate(&self, space: &TruncatedStateSpace) -> Result<usize> {
        if self.span_tolerance.is_nan() || self.span_tolerance <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "span_tolerance",
                value: self.span_tolerance,
                reason: "must be positive",
            });
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter {
                name: "damping",
                value: self.damping,
                reason: "must lie in [0, 1)",
            });
        }
        space
            .index_of(self.reference_state)
            .ok_or(Error::OutOfSpace(self.reference_state))
    }
}

/// One action per state of a truncated space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    space: TruncatedStateSpace,
    actions: Vec<Action>,
}

/// One `(k, d, action)` record of a policy grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCell {
    pub k: u64,
    pub d: u64,
    pub action: Action,
}

impl DeterministicPolicy {
    pub fn new(space: TruncatedStateSpace, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::PolicySizeMismatch {
                expected: space.len(),
                got: actions.len(),
            });
        }
        Ok(Self { space, actions })
    }

    pub fn from_fn(space: TruncatedStateSpace, f: impl Fn(SystemState) -> Action) -> Self {
        let actions = space.states().map(f).collect();
        Self { space, actions }
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Action at `s`, or `None` outside the space.
    pub fn get(&self, s: SystemState) -> Option<Action> {
        self.space.index_of(s).map(|i| self.actions[i])
    }

    /// Action at `s`; states beyond the caps use the saturated state's action.
    pub fn action(&self, s: SystemState) -> Action {
        let s = self.space.saturate(s);
        self.actions[self
            .space
            .index_of(s)
            .expect("saturated state lies in space")]
    }

    pub fn forward_field(&self) -> Vec<f64> {
        self.actions
            .iter()
            .map(|a| if *a == Action::Forward { 1.0 } else { 0.0 })
            .collect()
    }

    /// States where the two policies disagree. Both must share a space.
    pub fn differing_states(&self, other: &Self) -> Result<Vec<SystemState>> {
        if self.space != other.space {
            return Err(Error::PolicySizeMismatch {
                expected: self.space.len(),
                got: other.space.len(),
            });
        }
        Ok(self
            .actions
            .iter()
            .zip(&other.actions)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| self.space.state_at(i))
            .collect())
    }

    pub fn cells(&self) -> impl Iterator<Item = PolicyCell> + '_ {
        self.space
            .states()
            .zip(&self.actions)
            .map(|(s, &action)| PolicyCell {
                k: s.k(),
                d: s.d(),
                action,
            })
    }
}

/// `k + d + lambda * [a = Forward]`.
pub fn lagrangian_cost(s: SystemState, a: Action, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "must be non-negative",
        });
    }
    let penalty = if a == Action::Forward { lambda } else { 0.0 };
    Ok(s.destination_age() as f64 + penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RviSolution {
    pub policy: DeterministicPolicy,
    /// Optimal long-run average Lagrangian cost.
    pub average_cost: f64,
    pub iterations: usize,
    /// Span of the last value difference.
    pub span: f64,
}

/// Relative value iteration for the Lagrangian cost. Forwarding is chosen only
/// when strictly cheaper than receiving (relative margin `1e-10`).
pub fn rvi_solve(
    lp: LinkParams,
    lambda: f64,
    space: TruncatedStateSpace,
    cfg: RviConfig,
) -> Result<RviSolution> {
    lagrangian_cost(SystemState::synchronized(), Action::Forward, lambda)?;
    let reference = cfg.validate(&space)?;
    let (p, q) = (lp.p(), lp.q());
    let tau = cfg.damping;
    let n = space.len();
    let succ: Vec<_> = space.states().map(|s| space.successors(s)).collect();
    let cost: Vec<f64> = space.states().map(|s| s.destination_age() as f64).collect();
    let synchronized: Vec<bool> = space.states().map(|s| s.d() == 0).collect();
    // A received packet whose gain exceeds the cap lands on the boundary column; the
    // clamped excess is charged once per slot until the next delivery, 1/q slots on average.
    let overflow: Vec<f64> = space
        .states()
        .map(|s| (s.k() + s.d()).saturating_sub(space.d_max()) as f64 / q)
        .collect();
    // At the relay-age cap the next column is extrapolated linearly from the last two.
    let k_max = space.k_max();
    let clamped: Vec<Option<(usize, usize)>> = space
        .states()
        .map(|s| {
            (s.k() == k_max && k_max >= 3).then(|| {
                (
                    space.index_unchecked(k_max - 1, s.d()),
                    space.index_unchecked(k_max - 1, 0),
                )
            })
        })
        .collect();

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut forward = vec![false; n];
    let mut span = f64::INFINITY;
    for it in 1..=cfg.max_iterations {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let sc = succ[i];
            let (v_stay, v_delivered) = match clamped[i] {
                Some((ps, pd)) => (2.0 * v[sc.stay] - v[ps], 2.0 * v[sc.delivered] - v[pd]),
                None => (v[sc.stay], v[sc.delivered]),
            };
            let q_recv = cost[i] + (1.0 - p) * v_stay + p * (v[sc.received] + overflow[i]);
            let q_fwd = if synchronized[i] {
                cost[i] + lambda + v_stay
            } else {
                cost[i] + lambda + (1.0 - q) * v_stay + q * v_delivered
            };
            let fwd = q_fwd < q_recv - 1e-10 * q_recv.abs().max(1.0);
            forward[i] = fwd;
            let tv = if fwd { q_fwd } else { q_recv };
            let nv = tau * v[i] + (1.0 - tau) * tv;
            let diff = nv - v[i];
            lo = lo.min(diff);
            hi = hi.max(diff);
            next[i] = nv;
        }
        span = hi - lo;
        let shift = next[reference];
        for (vi, ni) in v.iter_mut().zip(&next) {
            *vi = ni - shift;
        }
        if span < cfg.span_tolerance {
            let actions = forward
                .iter()
                .map(|&f| if f { Action::Forward } else { Action::Receive })
                .collect();
            return Ok(RviSolution {
                policy: DeterministicPolicy { space, actions },
                average_cost: 0.5 * (hi + lo) / (1.0 - tau),
                iterations: it,
                span,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        span,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongRunMetrics {
    pub avg_aoi: f64,
    pub forwarding_rate: f64,
    /// Residual of the certified stationary solve.
    pub residual: f64,
}

fn metrics_from(space: &TruncatedStateSpace, forward: &[f64], st: &Stationary) -> LongRunMetrics {
    let mut aoi = 0.0;
    let mut rate = 0.0;
    for ((s, &f), &m) in space.states().zip(forward).zip(&st.pi) {
        aoi += s.destination_age() as f64 * m;
        rate += f * m;
    }
    LongRunMetrics {
        avg_aoi: aoi,
        forwarding_rate: rate,
        residual: st.residual,
    }
}

fn solve_policy(
    policy: &DeterministicPolicy,
    lp: LinkParams,
) -> Result<(LongRunMetrics, Stationary)> {
    let field = policy.forward_field();
    let st = chain::solve_stationary(policy.space, lp, &field)?;
    Ok((metrics_from(&policy.space, &field, &st), st))
}

/// Long-run average destination AoI and forwarding rate of the induced chain.
pub fn policy_long_run_metrics(
    policy: &DeterministicPolicy,
    lp: LinkParams,
) -> Result<LongRunMetrics> {
    solve_policy(policy, lp).map(|(m, _)| m)
}

/// Randomization between two deterministic policies that differ in at most one state.
///
/// `theta1` comes from the smaller multiplier and forwards at least as often
/// as the budget allows; `theta2` stays within it. The mixture's long-run
/// averages are `alpha` times those of `theta1` plus `1 - alpha` times those of
/// `theta2`. It is realized as a stationary policy that, on each visit to the
/// differing state, follows `theta1` with probability `theta1_visit_probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPolicy {
    pub theta1: DeterministicPolicy,
    pub theta2: DeterministicPolicy,
    pub alpha: f64,
    pub differing_states: Vec<SystemState>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub metrics1: LongRunMetrics,
    pub metrics2: LongRunMetrics,
    pub theta1_visit_probability: f64,
}

impl MixedPolicy {
    /// Mixture that always follows `policy`.
    pub fn pure(policy: DeterministicPolicy, lambda: f64, metrics: LongRunMetrics) -> Self {
        Self {
            theta2: policy.clone(),
            theta1: policy,
            alpha: 1.0,
            differing_states: Vec::new(),
            lambda1: lambda,
            lambda2: lambda,
            metrics1: metrics,
            metrics2: metrics,
            theta1_visit_probability: 1.0,
        }
    }

    pub fn avg_aoi(&self) -> f64 {
        self.alpha * self.metrics1.avg_aoi + (1.0 - self.alpha) * self.metrics2.avg_aoi
    }

    pub fn forwarding_rate(&self) -> f64 {
        self.alpha * self.metrics1.forwarding_rate
            + (1.0 - self.alpha) * self.metrics2.forwarding_rate
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        self.theta1.space()
    }

    /// Probability of forwarding at `s`, with the same saturation as
    /// [`DeterministicPolicy::action`].
    pub fn forward_probability(&self, s: SystemState) -> f64 {
        let a1 = self.theta1.action(s);
        let a2 = self.theta2.action(s);
        if a1 == a2 {
            return if a1 == Action::Forward { 1.0 } else { 0.0 };
        }
        let r = self.theta1_visit_probability;
        if a1 == Action::Forward {
            r
        } else {
            1.0 - r
        }
    }

    pub fn forward_field(&self) -> Vec<f64> {
        self.space()
            .states()
            .map(|s| self.forward_probability(s))
            .collect()
    }

    /// Metrics of the randomized policy from a direct stationary solve.
    pub fn solve_metrics(&self, lp: LinkParams) -> Result<LongRunMetrics> {
        let field = self.forward_field();
        let st = chain::solve_stationary(*self.space(), lp, &field)?;
        Ok(metrics_from(self.space(), &field, &st))
    }
}

/// [`cmdp_solve_with`] at [`MULTIPLIER_TOLERANCE`].
pub fn cmdp_solve(
    lp: LinkParams,
    budget: ResourceBudget,
    space: TruncatedStateSpace,
    cfg: RviConfig,
) -> Result<MixedPolicy> {
    cmdp_solve_with(lp, budget, space, cfg, MULTIPLIER_TOLERANCE)
}

struct Probe {
    lambda: f64,
    policy: DeterministicPolicy,
    metrics: LongRunMetrics,
    stationary: Stationary,
}

/// Bisects the multiplier until the bracketing policies are within
/// `multiplier_tolerance` and, if they still differ in several states,
/// continues down to a gap of `1e-12`.
pub fn cmdp_solve_with(
    lp: LinkParams,
    budget: ResourceBudget,
    space: TruncatedStateSpace,
    cfg: RviConfig,
    multiplier_tolerance: f64,
) -> Result<MixedPolicy> {
    let eta = budget.eta_c();
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut probe = |lambda: f64| -> Result<Probe> {
        let policy = rvi_solve(lp, lambda, space, cfg)?.policy;
        let (metrics, stationary) = solve_policy(&policy, lp)?;
        history.push((lambda, metrics.forwarding_rate));
        Ok(Probe {
            lambda,
            policy,
            metrics,
            stationary,
        })
    };

    let free = probe(0.0)?;
    if free.metrics.forwarding_rate <= eta {
        return Ok(MixedPolicy::pure(free.policy, 0.0, free.metrics));
    }

    let mut hi = probe(1.0)?;
    while hi.metrics.forwarding_rate > eta {
        if hi.lambda > 1e12 {
            return Err(Error::Bracketing(format!(
                "forwarding rate {} still above budget {eta} at lambda {}",
                hi.metrics.forwarding_rate, hi.lambda
            )));
        }
        hi = probe(2.0 * hi.lambda)?;
    }
    let mut lo = free;
    loop {
        let gap = hi.lambda - lo.lambda;
        let differ = lo.policy.differing_states(&hi.policy)?.len();
        if (gap <= multiplier_tolerance && differ <= 1) || gap <= 1e-12 {
            break;
        }
        let mid = probe(0.5 * (lo.lambda + hi.lambda))?;
        if mid.metrics.forwarding_rate > eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    history.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = history.windows(2).find(|w| w[1].1 > w[0].1 + 1e-9) {
        return Err(Error::Bracketing(format!(
            "forwarding rate rises from {} at lambda {} to {} at lambda {}",
            w[0].1, w[0].0, w[1].1, w[1].0
        )));
    }

    let differing = lo.policy.differing_states(&hi.policy)?;
    if differing.len() > 1 {
        return Err(Error::Bracketing(format!(
            "bracketing policies differ in {} states at multiplier gap {:e}",
            differing.len(),
            hi.lambda - lo.lambda
        )));
    }
    let (c1, c2) = (lo.metrics.forwarding_rate, hi.metrics.forwarding_rate);
    let alpha = ((eta - c2) / (c1 - c2)).clamp(0.0, 1.0);
    let visit = match differing.first() {
        Some(&s) => {
            let i = space.index_of(s).expect("differing state lies in space");
            let (m1, m2) = (
                alpha * lo.stationary.pi[i],
                (1.0 - alpha) * hi.stationary.pi[i],
            );
            if m1 + m2 > 0.0 {
                m1 / (m1 + m2)
            } else {
                alpha
            }
        }
        None => alpha,
    };
    Ok(MixedPolicy {
        theta1: lo.policy,
        theta2: hi.policy,
        alpha,
        differing_states: differing,
        lambda1: lo.lambda,
        lambda2: hi.lambda,
        metrics1: lo.metrics,
        metrics2: hi.metrics,
        theta1_visit_probability: visit,
    })
}

/// Which monotonicity rule a [`StructureViolation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureRule {
    /// Forwarding at `(k, d)` must persist at every larger gain.
    ForwardPersistsInGain,
    /// Receiving at `(k, d)` must persist at every larger relay age.
    ReceivePersistsInAge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureViolation {
    pub rule: StructureRule,
    pub from: SystemState,
    pub to: SystemState,
}

/// Adjacent pairs breaking the switching structure.
///
/// A pair is reported when the rule fails between a state and its next valid
/// neighbour (next gain, or next relay age). Both rules hold for all offsets
/// iff the returned list is empty.
pub fn verify_switching_structure(
    policy: &DeterministicPolicy,
    space: &TruncatedStateSpace,
) -> Result<Vec<StructureViolation>> {
    if policy.space() != space {
        return Err(Error::PolicySizeMismatch {
            expected: space.len(),
            got: policy.actions().len(),
        });
    }
    let mut out = Vec::new();
    for s in space.states() {
        let a = policy.actions[space.index_unchecked(s.k(), s.d())];
        let next_gain = if s.d() == 0 { 2 } else { s.d() + 1 };
        if a == Action::Forward && next_gain <= space.d_max() {
            let to = SystemState::new_unchecked(s.k(), next_gain);
            if policy.get(to) == Some(Action::Receive) {
                out.push(StructureViolation {
                    rule: StructureRule::ForwardPersistsInGain,
                    from: s,
                    to,
                });
            }
        }
        if a == Action::Receive && s.k() < space.k_max() {
            let to = SystemState::new_unchecked(s.k() + 1, s.d());
            if policy.get(to) == Some(Action::Forward) {
                out.push(StructureViolation {
                    rule: StructureRule::ReceivePersistsInAge,
                    from: s,
                    to,
                });
            }
        }
    }
    Ok(out)
}
