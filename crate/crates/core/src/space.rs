//! Finite truncation of the countable state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemState;

/// All valid states with `k <= k_max` and `d <= d_max`.
///
/// States are indexed column-major by age gain: the synchronized column
/// `d = 0` (`k = 2..=k_max`) comes first, then each column `d = 2..=d_max`
/// with `k = 1..=k_max`. Transitions that would leave the space saturate at
/// the caps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedStateSpace {
    k_max: u64,
    d_max: u64,
}

impl TruncatedStateSpace {
    pub fn new(k_max: u64, d_max: u64) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::InvalidParameter {
                name: "k_max",
                value: k_max as f64,
                reason: "must be at least 2",
            });
        }
        if d_max < 2 {
            return Err(Error::InvalidParameter {
                name: "d_max",
                value: d_max as f64,
                reason: "must be at least 2",
            });
        }
        Ok(Self { k_max, d_max })
    }

    pub fn k_max(&self) -> u64 {
        self.k_max
    }

    pub fn d_max(&self) -> u64 {
        self.d_max
    }

    pub fn len(&self) -> usize {
        let (k, d) = (self.k_max as usize, self.d_max as usize);
        (k - 1) + (d - 1) * k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: SystemState) -> bool {
        s.k() <= self.k_max && s.d() <= self.d_max
    }

    /// Index of `s` in the enumeration order, if it lies inside the space.
    pub fn index_of(&self, s: SystemState) -> Option<usize> {
        self.contains(s).then(|| self.index_unchecked(s.k(), s.d()))
    }

    pub(crate) fn index_unchecked(&self, k: u64, d: u64) -> usize {
        let km = self.k_max as usize;
        if d == 0 {
            k as usize - 2
        } else {
            (km - 1) + (d as usize - 2) * km + (k as usize - 1)
        }
    }

    pub fn state_at(&self, index: usize) -> SystemState {
        assert!(index < self.len(), "index {index} out of range");
        let km = self.k_max as usize;
        if index < km - 1 {
            SystemState::new_unchecked(index as u64 + 2, 0)
        } else {
            let rest = index - (km - 1);
            SystemState::new_unchecked((rest % km) as u64 + 1, (rest / km) as u64 + 2)
        }
    }

    /// States in index order.
    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        (0..self.len()).map(move |i| self.state_at(i))
    }

    /// Clamps an arbitrary valid state onto the space.
    pub fn saturate(&self, s: SystemState) -> SystemState {
        let k = s.k().min(self.k_max);
        let d = s.d().min(self.d_max);
        SystemState::new_unchecked(k, d)
    }

    /// Successor indices `(k+1, d)`, `(k+1, 0)` and `(1, k+d)` after saturation.
    pub(crate) fn successors(&self, s: SystemState) -> Successors {
        let k_next = (s.k() + 1).min(self.k_max);
        Successors {
            stay: self.index_unchecked(k_next, s.d()),
            delivered: self.index_unchecked(k_next, 0),
            received: self.index_unchecked(1, (s.k() + s.d()).min(self.d_max)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Successors {
    pub stay: usize,
    pub delivered: usize,
    pub received: usize,
}
