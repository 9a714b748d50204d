//! Stationary analysis of the chain induced by a (possibly randomized) stationary policy
//! on a [`TruncatedStateSpace`].
//!
//! A policy is described by its forwarding probability in every state. From
//! `(k, d)` the chain moves to `(k+1, d)`, `(k+1, 0)` or `(1, k+d)` (saturated at
//! the caps), so every layer `k >= 2` is a linear image of the layer below it and
//! only the first layer `k = 1` receives mass from elsewhere. [`solve_stationary`]
//! eliminates the upper layers exactly, solves the resulting dense
//! `(d_max - 1)`-dimensional balance system with an LU factorization, and
//! certifies the result against the explicit sparse rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LinkParams, SystemState};
use crate::space::TruncatedStateSpace;

/// Default bound on `max_s |(pi P)(s) - pi(s)|` for an accepted solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Outgoing probabilities of one state: `(k+1, d)`, `(k+1, 0)`, `(1, k+d)`.
#[derive(Debug, Clone, Copy)]
struct Split {
    stay: f64,
    delivered: f64,
    received: f64,
}

fn split(s: SystemState, forward: f64, lp: LinkParams) -> Split {
    let (p, q) = (lp.p(), lp.q());
    let receive = 1.0 - forward;
    if s.d() == 0 {
        Split {
            stay: forward + receive * (1.0 - p),
            delivered: 0.0,
            received: receive * p,
        }
    } else {
        Split {
            stay: forward * (1.0 - q) + receive * (1.0 - p),
            delivered: forward * q,
            received: receive * p,
        }
    }
}

fn check_field(space: &TruncatedStateSpace, forward: &[f64]) -> Result<()> {
    if forward.len() != space.len() {
        return Err(Error::PolicySizeMismatch {
            expected: space.len(),
            got: forward.len(),
        });
    }
    if let Some(&bad) = forward.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidParameter {
            name: "forward probability",
            value: bad,
            reason: "must lie in [0, 1]",
        });
    }
    Ok(())
}

/// Explicit sparse row-stochastic matrix, at most three nonzeros per row.
#[derive(Debug, Clone)]
pub struct TransitionRows {
    space: TruncatedStateSpace,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Row {
    len: u8,
    entries: [(usize, f64); 3],
}

impl Row {
    fn push(&mut self, to: usize, prob: f64) {
        if prob == 0.0 {
            return;
        }
        if let Some(e) = self.entries[..self.len as usize]
            .iter_mut()
            .find(|e| e.0 == to)
        {
            e.1 += prob;
            return;
        }
        self.entries[self.len as usize] = (to, prob);
        self.len += 1;
    }

    fn entries(&self) -> &[(usize, f64)] {
        &self.entries[..self.len as usize]
    }
}

impl TransitionRows {
    pub fn from_forward_probabilities(
        space: TruncatedStateSpace,
        lp: LinkParams,
        forward: &[f64],
    ) -> Result<Self> {
        check_field(&space, forward)?;
        let rows = space
            .states()
            .zip(forward)
            .map(|(s, &f)| {
                let succ = space.successors(s);
                let sp = split(s, f, lp);
                let mut row = Row::default();
                row.push(succ.stay, sp.stay);
                row.push(succ.delivered, sp.delivered);
                row.push(succ.received, sp.received);
                row
            })
            .collect();
        Ok(Self { space, rows })
    }

    pub fn space(&self) -> &TruncatedStateSpace {
        &self.space
    }

    /// Nonzero `(target index, probability)` pairs of the row for `index`.
    pub fn row(&self, index: usize) -> &[(usize, f64)] {
        self.rows[index].entries()
    }

    pub fn max_nonzeros_per_row(&self) -> usize {
        self.rows.iter().map(|r| r.len as usize).max().unwrap_or(0)
    }

    /// `pi P` as a dense vector.
    pub fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; pi.len()];
        for (row, &mass) in self.rows.iter().zip(pi) {
            for &(to, prob) in row.entries() {
                out[to] += mass * prob;
            }
        }
        out
    }

    /// `max_s |(pi P)(s) - pi(s)|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.apply(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Lazy power iteration `pi <- (pi + pi P) / 2` from the uniform vector.
    ///
    /// Returns the iterate, its residual and the number of sweeps. Slow on
    /// slowly mixing chains; used as a consistency check on the direct solve.
    pub fn power_iteration(&self, tolerance: f64, max_iterations: usize) -> (Vec<f64>, f64, usize) {
        let n = self.rows.len();
        let mut pi = vec![1.0 / n as f64; n];
        let mut residual = f64::INFINITY;
        for it in 0..max_iterations {
            let next = self.apply(&pi);
            residual = next
                .iter()
                .zip(&pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if residual < tolerance {
                return (pi, residual, it);
            }
            for (x, y) in pi.iter_mut().zip(next) {
                *x = 0.5 * (*x + y);
            }
        }
        (pi, residual, max_iterations)
    }
}

/// Stationary distribution in space-index order with its certified residual.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub residual: f64,
}

/// Solves `pi P = pi`, `sum(pi) = 1` for the chain induced by per-state
/// forwarding probabilities. Fails if the chain has no unique stationary
/// distribution or the residual exceeds [`RESIDUAL_TOLERANCE`].
pub fn solve_stationary(
    space: TruncatedStateSpace,
    lp: LinkParams,
    forward: &[f64],
) -> Result<Stationary> {
    let rows = TransitionRows::from_forward_probabilities(space, lp, forward)?;
    solve_with_rows(&rows, lp, forward)
}

pub(crate) fn solve_with_rows(
    rows: &TransitionRows,
    lp: LinkParams,
    forward: &[f64],
) -> Result<Stationary> {
    let space = *rows.space();
    let layers = Layers::new(space, lp, forward);
    let first_row = layers.solve_first_row()?;
    let mut pi = layers.expand(&first_row)?;

    if let Some(&neg) = pi.iter().find(|&&v| v < -1e-12) {
        return Err(Error::DegenerateChain(format!(
            "negative stationary mass {neg:e}"
        )));
    }
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= total;
    }

    let residual = rows.residual(&pi);
    if residual.is_nan() || residual > RESIDUAL_TOLERANCE {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    Ok(Stationary { pi, residual })
}

/// Per-state splits laid out by layer for the elimination.
struct Layers {
    space: TruncatedStateSpace,
    splits: Vec<Split>,
}

impl Layers {
    fn new(space: TruncatedStateSpace, lp: LinkParams, forward: &[f64]) -> Self {
        let splits = space
            .states()
            .zip(forward)
            .map(|(s, &f)| split(s, f, lp))
            .collect();
        Self { space, splits }
    }

    fn at(&self, k: u64, d: u64) -> Split {
        self.splits[self.space.index_unchecked(k, d)]
    }

    /// Row in the first-layer system for `(1, d)`.
    fn first_row_slot(&self, d: u64) -> usize {
        (d.min(self.space.d_max()) - 2) as usize
    }

    /// Stationary mass of the saturated top layer given its inflow.
    fn top_layer(&self, inflow_d: f64, inflow_0: f64, d: u64) -> Result<(f64, f64)> {
        let k = self.space.k_max();
        let sd = self.at(k, d);
        let s0 = self.at(k, 0);
        let leave_d = 1.0 - sd.stay;
        let leave_0 = 1.0 - s0.stay;
        if leave_d <= 0.0 || leave_0 <= 0.0 {
            return Err(Error::DegenerateChain(format!(
                "state ({k}, {}) is absorbing at the truncation boundary",
                if leave_d <= 0.0 { d } else { 0 }
            )));
        }
        let top_d = inflow_d / leave_d;
        let top_0 = (inflow_0 + top_d * sd.delivered) / leave_0;
        Ok((top_d, top_0))
    }

    /// Solves for the first-layer masses `pi(1, d)`, `d = 2..=d_max`.
    fn solve_first_row(&self) -> Result<Vec<f64>> {
        let k_max = self.space.k_max();
        let d_max = self.space.d_max();
        let n = (d_max - 1) as usize;
        // returns[i, j]: flow into (1, i+2) per unit mass at (1, j+2).
        let mut returns = DMatrix::<f64>::zeros(n, n);
        let mut mass = vec![0.0; n];

        for j in 0..n {
            let d = j as u64 + 2;
            // Mass on (k, d) and on (k, 0) of the current layer.
            let (mut on_d, mut on_0) = (1.0, 0.0);
            for k in 1..k_max {
                let sd = self.at(k, d);
                mass[j] += on_d + on_0;
                returns[(self.first_row_slot(k + d), j)] += on_d * sd.received;
                let mut next_0 = on_d * sd.delivered;
                if k >= 2 {
                    let s0 = self.at(k, 0);
                    returns[(self.first_row_slot(k), j)] += on_0 * s0.received;
                    next_0 += on_0 * s0.stay;
                }
                on_d *= sd.stay;
                on_0 = next_0;
                if on_d == 0.0 && on_0 == 0.0 {
                    break;
                }
            }
            if on_d != 0.0 || on_0 != 0.0 {
                let (top_d, top_0) = self.top_layer(on_d, on_0, d)?;
                let sd = self.at(k_max, d);
                let s0 = self.at(k_max, 0);
                mass[j] += top_d + top_0;
                returns[(self.first_row_slot(k_max + d), j)] += top_d * sd.received;
                returns[(self.first_row_slot(k_max), j)] += top_0 * s0.received;
            }
        }

        // (R - I) u = 0 has one redundant equation because every unit of
        // first-layer mass returns exactly once; swap the last one for sum = 1.
        let mut system = returns;
        for i in 0..n {
            system[(i, i)] -= 1.0;
        }
        for j in 0..n {
            system[(n - 1, j)] = mass[j];
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let solution = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateChain("singular balance system".into()))?;
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateChain("non-finite balance solution".into()));
        }
        Ok(solution.iter().copied().collect())
    }

    /// Propagates first-layer masses through every layer.
    fn expand(&self, first_row: &[f64]) -> Result<Vec<f64>> {
        let space = self.space;
        let k_max = space.k_max();
        let d_max = space.d_max();
        let mut pi = vec![0.0; space.len()];
        // layer[d] for d in 0..=d_max; slot 1 unused.
        let mut layer = vec![0.0; d_max as usize + 1];
        for (j, &u) in first_row.iter().enumerate() {
            layer[j + 2] = u;
        }
        for k in 1..k_max {
            for d in 0..=d_max {
                if d == 1 || (k == 1 && d == 0) {
                    continue;
                }
                pi[space.index_unchecked(k, d)] = layer[d as usize];
            }
            let mut next = vec![0.0; layer.len()];
            for d in 2..=d_max {
                let sd = self.at(k, d);
                next[d as usize] = layer[d as usize] * sd.stay;
                next[0] += layer[d as usize] * sd.delivered;
            }
            if k >= 2 {
                next[0] += layer[0] * self.at(k, 0).stay;
            }
            layer = next;
        }
        // Top layer: column-wise self loops, then the synchronized state.
        let mut inflow_0 = layer[0];
        for d in 2..=d_max {
            let sd = self.at(k_max, d);
            let leave = 1.0 - sd.stay;
            let mass = if layer[d as usize] == 0.0 {
                0.0
            } else if leave <= 0.0 {
                return Err(Error::DegenerateChain(format!(
                    "state ({k_max}, {d}) is absorbing at the truncation boundary"
                )));
            } else {
                layer[d as usize] / leave
            };
            pi[space.index_unchecked(k_max, d)] = mass;
            inflow_0 += mass * sd.delivered;
        }
        let leave_0 = 1.0 - self.at(k_max, 0).stay;
        pi[space.index_unchecked(k_max, 0)] = if inflow_0 == 0.0 {
            0.0
        } else if leave_0 <= 0.0 {
            return Err(Error::DegenerateChain(format!(
                "state ({k_max}, 0) is absorbing at the truncation boundary"
            )));
        } else {
            inflow_0 / leave_0
        };
        Ok(pi)
    }
}
