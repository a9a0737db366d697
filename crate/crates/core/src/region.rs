//! Threshold-compressed stopping regions.
//!
//! A region for step `n` stores, for each count `a` of the policy claimed
//! to be worse, a threshold `t(a)` on the count `b` of the policy claimed
//! to be better, plus one boundary probability `phi(a)`:
//!
//! * stop with probability 1 when `b > t(a)`
//! * stop with probability `phi(a)` when `b == t(a)`
//! * continue when `b < t(a)`
//!
//! `t(a) = n + 1` (with `phi = 0`) means "never stop in this column". For
//! the reject side `(a, b) = (s0, s1)`; the accept side is stored in the
//! flipped frame `(a, b) = (s1, s0)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{state_index, states_at};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Stop and declare the novel policy better.
    Reject,
    /// Stop and declare the novel policy no better (flipped test).
    Accept,
}

impl Side {
    /// Maps `(s0, s1)` into this side's `(worse, better)` frame.
    #[inline]
    pub fn frame(self, s0: u32, s1: u32) -> (u32, u32) {
        match self {
            Side::Reject => (s0, s1),
            Side::Accept => (s1, s0),
        }
    }

    pub fn stream(self) -> u64 {
        match self {
            Side::Reject => 0,
            Side::Accept => 1,
        }
    }
}

/// One column of a region as it appears in rule files and API payloads.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub s0: u32,
    pub t: u32,
    pub phi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRegion {
    n: u32,
    thresholds: Vec<u32>,
    phi: Vec<f64>,
}

impl StepRegion {
    /// The region that never stops.
    pub fn empty(n: u32) -> Self {
        StepRegion {
            n,
            thresholds: vec![n + 1; n as usize + 1],
            phi: vec![0.0; n as usize + 1],
        }
    }

    /// Builds a region from per-column boundaries, validating every entry.
    /// Columns must be listed in order `0..=n`.
    pub fn from_boundaries(n: u32, boundaries: &[Boundary]) -> Result<Self> {
        if boundaries.len() != n as usize + 1 {
            return Err(Error::parse(
                format!("step {n}"),
                format!("expected {} boundaries, found {}", n + 1, boundaries.len()),
            ));
        }
        let mut thresholds = Vec::with_capacity(boundaries.len());
        let mut phi = Vec::with_capacity(boundaries.len());
        for (a, b) in boundaries.iter().enumerate() {
            let at = |field: &str| format!("step {n}, s0 {a}, {field}");
            if b.s0 as usize != a {
                return Err(Error::parse(at("s0"), format!("out of order: found {}", b.s0)));
            }
            if b.t > n + 1 {
                return Err(Error::parse(at("t"), format!("{} exceeds n + 1 = {}", b.t, n + 1)));
            }
            if !(0.0..=1.0).contains(&b.phi) {
                return Err(Error::parse(at("phi"), format!("{} is not a probability", b.phi)));
            }
            if b.t == n + 1 && b.phi != 0.0 {
                return Err(Error::parse(at("phi"), "must be 0 when t = n + 1"));
            }
            if b.t <= b.s0 && !(b.t == b.s0 && b.phi == 0.0) {
                return Err(Error::parse(at("t"), "stopping requires the better count to lead"));
            }
            thresholds.push(b.t);
            phi.push(b.phi);
        }
        Ok(StepRegion { n, thresholds, phi })
    }

    pub fn step(&self) -> u32 {
        self.n
    }

    pub fn boundaries(&self) -> Vec<Boundary> {
        self.thresholds
            .iter()
            .zip(&self.phi)
            .enumerate()
            .map(|(a, (&t, &phi))| Boundary { s0: a as u32, t, phi })
            .collect()
    }

    pub fn threshold(&self, a: u32) -> (u32, f64) {
        (self.thresholds[a as usize], self.phi[a as usize])
    }

    /// Stopping probability at `(a, b)` in this region's frame.
    pub fn lookup(&self, a: u32, b: u32) -> f64 {
        assert!(a <= self.n && b <= self.n, "state ({a}, {b}) outside step {}", self.n);
        let t = self.thresholds[a as usize];
        match b.cmp(&t) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => self.phi[a as usize],
            std::cmp::Ordering::Less => 0.0,
        }
    }

    /// Dense per-state stopping probabilities in canonical state order of
    /// the given side.
    pub fn weights(&self, side: Side) -> Vec<f64> {
        let n = self.n;
        let mut w = vec![0.0; states_at(n)];
        for s0 in 0..=n {
            for s1 in 0..=n {
                let (a, b) = side.frame(s0, s1);
                w[state_index(n, s0, s1)] = self.lookup(a, b);
            }
        }
        w
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.iter().all(|&t| t == self.n + 1)
    }

    pub(crate) fn from_parts(n: u32, thresholds: Vec<u32>, phi: Vec<f64>) -> Self {
        debug_assert_eq!(thresholds.len(), n as usize + 1);
        StepRegion { n, thresholds, phi }
    }
}
