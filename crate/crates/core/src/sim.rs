//! Seeded Monte Carlo slot simulation on the untruncated state space.
//!
//! Run `r` of a simulation seeded with `seed` draws the source-relay
//! indicators from ChaCha8 stream `3r`, the relay-destination indicators from
//! stream `3r + 1` and policy randomization from stream `3r + 2`. Both link
//! indicators are drawn every slot whatever the action, so two policies
//! simulated with the same seed see the same channel realizations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp::{DeterministicPolicy, MixedPolicy};
use crate::dtr::{dtr_action, DtrThresholds};
use crate::error::{Error, Result};
use crate::model::{is_valid_state, step, Action, LinkParams, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    horizon: u64,
    runs: u64,
    seed: u64,
    initial_state: SystemState,
}

impl SimConfig {
    pub fn new(horizon: u64, runs: u64, seed: u64, initial_state: SystemState) -> Result<Self> {
        if horizon < 1 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                value: horizon as f64,
                reason: "must be at least 1",
            });
        }
        if runs < 1 {
            return Err(Error::InvalidParameter {
                name: "runs",
                value: runs as f64,
                reason: "must be at least 1",
            });
        }
        Ok(Self {
            horizon,
            runs,
            seed,
            initial_state,
        })
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn runs(&self) -> u64 {
        self.runs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initial_state(&self) -> SystemState {
        self.initial_state
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1_000_000,
            runs: 20,
            seed: 0,
            initial_state: SystemState::synchronized(),
        }
    }
}

/// A stationary, possibly randomized, policy defined on every valid state.
pub trait SlotPolicy {
    fn forward_probability(&self, s: SystemState) -> f64;
}

impl SlotPolicy for DtrThresholds {
    fn forward_probability(&self, s: SystemState) -> f64 {
        match dtr_action(*self, s) {
            Action::Forward => 1.0,
            Action::Receive => 0.0,
        }
    }
}

impl SlotPolicy for DeterministicPolicy {
    fn forward_probability(&self, s: SystemState) -> f64 {
        match self.action(s) {
            Action::Forward => 1.0,
            Action::Receive => 0.0,
        }
    }
}

impl SlotPolicy for MixedPolicy {
    fn forward_probability(&self, s: SystemState) -> f64 {
        MixedPolicy::forward_probability(self, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mean_aoi: f64,
    pub forwarding_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_aoi: f64,
    pub mean_forwarding_rate: f64,
    pub runs: Vec<RunResult>,
    /// Standard error of `mean_aoi` across runs; NaN for a single run.
    pub aoi_std_error: f64,
    /// Standard error of `mean_forwarding_rate` across runs; NaN for a single run.
    pub rate_std_error: f64,
}

fn mean_and_std_error(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = if n > 1.0 { (var / n).sqrt() } else { f64::NAN };
    (mean, se)
}

fn run_once(
    policy: &(impl SlotPolicy + ?Sized),
    lp: LinkParams,
    cfg: &SimConfig,
    run: u64,
) -> RunResult {
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(3 * run + stream);
        r
    };
    let (mut sr, mut rd, mut coin) = (rng(0), rng(1), rng(2));
    let mut s = cfg.initial_state;
    let mut age_sum: u128 = 0;
    let mut forwards: u64 = 0;
    for _ in 0..cfg.horizon {
        debug_assert!(is_valid_state(s.k() as i64, s.d() as i64));
        age_sum += s.destination_age() as u128;
        let f = policy.forward_probability(s);
        let forward = if f >= 1.0 {
            true
        } else if f <= 0.0 {
            false
        } else {
            coin.gen_bool(f)
        };
        let sr_ok = sr.gen_bool(lp.p());
        let rd_ok = rd.gen_bool(lp.q());
        let a = if forward {
            forwards += 1;
            Action::Forward
        } else {
            Action::Receive
        };
        s = step(s, a, sr_ok, rd_ok);
    }
    let t = cfg.horizon as f64;
    RunResult {
        mean_aoi: age_sum as f64 / t,
        forwarding_rate: forwards as f64 / t,
    }
}

/// Simulates `cfg.runs` independent runs of `cfg.horizon` slots each, counting
/// the destination age and action of every slot starting from the initial state.
pub fn simulate(policy: &(impl SlotPolicy + ?Sized), lp: LinkParams, cfg: &SimConfig) -> SimResult {
    let runs: Vec<RunResult> = (0..cfg.runs)
        .map(|r| run_once(policy, lp, cfg, r))
        .collect();
    let (mean_aoi, aoi_std_error) = mean_and_std_error(runs.iter().map(|r| r.mean_aoi));
    let (mean_forwarding_rate, rate_std_error) =
        mean_and_std_error(runs.iter().map(|r| r.forwarding_rate));
    SimResult {
        mean_aoi,
        mean_forwarding_rate,
        runs,
        aoi_std_error,
        rate_std_error,
    }
}

/// Simulates a mixture: the differing state randomizes on every visit.
pub fn simulate_mixed(mp: &MixedPolicy, lp: LinkParams, cfg: &SimConfig) -> SimResult {
    simulate(mp, lp, cfg)
}
