//! Paired-count state space and forward propagation of per-null occupancy.
//!
//! States at step `n` are the pairs `(s0, s1)` with `0 <= s0, s1 <= n`,
//! indexed row-major: `index = s0 * (n + 1) + s1`. That order is the column
//! order of every occupancy row and every per-state weight vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hypothesis::NullGrid;

/// Success counts of both policies after `n` paired trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalState {
    pub s0: u32,
    pub s1: u32,
    pub n: u32,
}

impl EvalState {
    pub fn advance(self, z0: bool, z1: bool) -> EvalState {
        EvalState {
            s0: self.s0 + u32::from(z0),
            s1: self.s1 + u32::from(z1),
            n: self.n + 1,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.s0 <= self.n && self.s1 <= self.n
    }
}

#[inline]
pub fn states_at(n: u32) -> usize {
    let side = n as usize + 1;
    side * side
}

#[inline]
pub fn state_index(n: u32, s0: u32, s1: u32) -> usize {
    s0 as usize * (n as usize + 1) + s1 as usize
}

pub fn enumerate_states(n: u32) -> Vec<(u32, u32)> {
    (0..=n).flat_map(|a| (0..=n).map(move |b| (a, b))).collect()
}

/// Outcome probabilities of one paired trial under the diagonal null
/// `(p, p)`, in the order `(0,0), (0,1), (1,0), (1,1)`.
pub fn step_distribution(p: f64) -> [f64; 4] {
    let q = 1.0 - p;
    [q * q, p * q, p * q, p * p]
}

/// Per-null reach probabilities at step `n`, conditioned on not having
/// stopped through rejection at any earlier step. One dense row per null.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMatrix {
    n: u32,
    nulls: usize,
    values: Vec<f64>,
}

impl OccupancyMatrix {
    /// All mass at `(0, 0)` for every null.
    pub fn initial(nulls: usize) -> Self {
        OccupancyMatrix {
            n: 0,
            nulls,
            values: vec![1.0; nulls],
        }
    }

    pub fn from_rows(n: u32, rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = states_at(n);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Contract(format!("occupancy rows must have {width} entries")));
        }
        let nulls = rows.len();
        Ok(OccupancyMatrix {
            n,
            nulls,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn step(&self) -> u32 {
        self.n
    }

    pub fn nulls(&self) -> usize {
        self.nulls
    }

    pub fn width(&self) -> usize {
        states_at(self.n)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, i: usize, s0: u32, s1: u32) -> f64 {
        self.row(i)[state_index(self.n, s0, s1)]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    /// Per-null probability of rejecting at this step under weights `w`.
    pub fn risk(&self, w: &[f64]) -> Vec<f64> {
        (0..self.nulls)
            .map(|i| self.row(i).iter().zip(w).map(|(p, w)| p * w).sum())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PropagateOptions {
    /// Entries below this mass are dropped. `None` keeps the dense result.
    pub prune_below: Option<f64>,
    pub exec: Exec,
}

/// Advances `prev` by one trial. Mass surviving the step-`n-1` stopping
/// weights `w_prev` is pushed to the four successor states.
pub fn propagate(prev: &OccupancyMatrix, w_prev: &[f64], grid: &NullGrid) -> Result<OccupancyMatrix> {
    propagate_with(prev, w_prev, grid, PropagateOptions::default())
}

pub fn propagate_with(
    prev: &OccupancyMatrix,
    w_prev: &[f64],
    grid: &NullGrid,
    opts: PropagateOptions,
) -> Result<OccupancyMatrix> {
    if w_prev.len() != prev.width() {
        return Err(Error::Contract(format!(
            "stop weights have {} entries, occupancy at step {} has {}",
            w_prev.len(),
            prev.n,
            prev.width()
        )));
    }
    if grid.len() != prev.nulls {
        return Err(Error::Contract(format!(
            "grid has {} nulls, occupancy has {}",
            grid.len(),
            prev.nulls
        )));
    }
    let n = prev.n;
    let old_side = n as usize + 1;
    let new_side = old_side + 1;
    let width = new_side * new_side;
    let mut values = vec![0.0; prev.nulls * width];
    let floor = opts.prune_below;
    opts.exec.for_each_chunk_mut(&mut values, width, |i, out| {
        let [q00, q01, q10, q11] = step_distribution(grid.points()[i]);
        let row = prev.row(i);
        for a in 0..old_side {
            for b in 0..old_side {
                let k = a * old_side + b;
                let mass = row[k] * (1.0 - w_prev[k]);
                if mass == 0.0 {
                    continue;
                }
                let base = a * new_side + b;
                out[base] += mass * q00;
                out[base + 1] += mass * q01;
                out[base + new_side] += mass * q10;
                out[base + new_side + 1] += mass * q11;
            }
        }
        if let Some(floor) = floor {
            out.iter_mut().filter(|v| **v < floor).for_each(|v| *v = 0.0);
        }
    });
    Ok(OccupancyMatrix {
        n: n + 1,
        nulls: prev.nulls,
        values,
    })
}
