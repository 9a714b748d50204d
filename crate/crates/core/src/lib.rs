//! Scheduling policies for a two-hop status-update relay under a forwarding budget.
//!
//! A source generates a fresh update every slot, a half-duplex relay either
//! receives from the source or forwards its stored update to the destination,
//! and the long-run fraction of forwarding slots is capped. The crate provides:
//!
//! - [`model`]: the `(k, d)` state (relay age, destination age gain) and its one-slot dynamics.
//! - [`cmdp`]: the optimal constrained policy via Lagrangian relaxation and relative value iteration.
//! - [`dtr`]: the double-threshold relaying policy and its closed-form performance.
//! - [`oracle`]: truncated Markov-chain ground truth for the closed forms.
//! - [`sim`]: a seeded Monte Carlo slot simulator.

pub mod chain;
pub mod cmdp;
pub mod dtr;
mod error;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod space;

pub use error::{Error, Result};
pub use model::{Action, LinkParams, ResourceBudget, SystemState};
pub use space::TruncatedStateSpace;
