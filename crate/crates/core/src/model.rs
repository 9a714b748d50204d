//! System state, link model and one-slot age dynamics.
//!
//! The state is `(k, d)`: `k` is the relay's instantaneous age of information and
//! `d` is the age gain, i.e. destination age minus relay age. Only states with
//! `(k >= 2, d = 0)` or `(k >= 1, d >= 2)` are reachable; everything else is
//! rejected at construction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returns true iff `(k, d)` is a reachable state.
pub fn is_valid_state(k: i64, d: i64) -> bool {
    (k >= 2 && d == 0) || (k >= 1 && d >= 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct SystemState {
    k: u64,
    d: u64,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    k: u64,
    d: u64,
}

impl TryFrom<RawState> for SystemState {
    type Error = Error;

    fn try_from(raw: RawState) -> Result<Self> {
        SystemState::new(raw.k, raw.d)
    }
}

impl From<SystemState> for RawState {
    fn from(s: SystemState) -> Self {
        RawState { k: s.k, d: s.d }
    }
}

impl SystemState {
    pub fn new(k: u64, d: u64) -> Result<Self> {
        if (k >= 2 && d == 0) || (k >= 1 && d >= 2) {
            Ok(Self { k, d })
        } else {
            Err(Error::InvalidState {
                k: k as i64,
                d: d as i64,
            })
        }
    }

    /// Caller guarantees validity.
    pub(crate) const fn new_unchecked(k: u64, d: u64) -> Self {
        Self { k, d }
    }

    /// The synchronized state `(2, 0)` used as the default initial state.
    pub const fn synchronized() -> Self {
        Self { k: 2, d: 0 }
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn d(&self) -> u64 {
        self.d
    }

    /// Destination age `k + d`.
    pub fn destination_age(&self) -> u64 {
        self.k + self.d
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k, self.d)
    }
}

pub fn destination_age(s: SystemState) -> u64 {
    s.destination_age()
}

/// Relay action in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Poll the source (w = 0).
    Receive,
    /// Transmit the stored update to the destination (w = 1).
    Forward,
}

impl Action {
    pub fn as_bit(self) -> u8 {
        match self {
            Action::Receive => 0,
            Action::Forward => 1,
        }
    }

    pub fn from_bit(w: u8) -> Option<Self> {
        match w {
            0 => Some(Action::Receive),
            1 => Some(Action::Forward),
            _ => None,
        }
    }
}

/// Per-slot success probabilities of the source-relay (`p`) and relay-destination (`q`) links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    p: f64,
    q: f64,
}

fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must lie in (0, 1]",
        })
    }
}

impl LinkParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Cap on the long-run forwarding rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceBudget {
    eta_c: f64,
}

impl ResourceBudget {
    pub fn new(eta_c: f64) -> Result<Self> {
        check_probability("eta_c", eta_c)?;
        Ok(Self { eta_c })
    }

    pub fn eta_c(&self) -> f64 {
        self.eta_c
    }
}

/// Deterministic next state given the action and the realized link indicators.
pub fn step(s: SystemState, a: Action, sr_ok: bool, rd_ok: bool) -> SystemState {
    let (k, d) = (s.k, s.d);
    match a {
        Action::Receive if sr_ok => SystemState::new_unchecked(1, k + d),
        Action::Forward if rd_ok => SystemState::new_unchecked(k + 1, 0),
        _ => SystemState::new_unchecked(k + 1, d),
    }
}

/// Successor states with nonzero probability. Masses sum to one.
pub fn transition_distribution(
    s: SystemState,
    a: Action,
    lp: LinkParams,
) -> Vec<(SystemState, f64)> {
    let (k, d) = (s.k, s.d);
    let (success, prob) = match a {
        Action::Receive => (SystemState::new_unchecked(1, k + d), lp.p),
        Action::Forward => (SystemState::new_unchecked(k + 1, 0), lp.q),
    };
    let failure = SystemState::new_unchecked(k + 1, d);
    if success == failure {
        // Forwarding from a synchronized state lands in (k+1, 0) either way.
        return vec![(failure, 1.0)];
    }
    let mut out = Vec::with_capacity(2);
    if prob < 1.0 {
        out.push((failure, 1.0 - prob));
    }
    out.push((success, prob));
    out
}
