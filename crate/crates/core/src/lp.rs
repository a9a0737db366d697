//! Bounded-variable revised simplex for packing programs
//!
//! ```text
//!     maximize   c'x
//!     subject to A x <= b,   0 <= x <= 1,
//! ```
//!
//! with `A >= 0`, `b > 0` and `c >= 0`. The row count is small (one row per
//! null, about a hundred) while the column count grows quadratically with
//! the step index, so the basis inverse is kept dense and explicit and the
//! expensive part is pricing, which is split into chunks that may run in
//! parallel. Every pricing pass keeps a short list of the most attractive
//! columns; bound flips leave the duals unchanged, so many columns can be
//! moved to their upper bound per pass.

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    /// Reduced-cost threshold for optimality.
    pub dual_tol: f64,
    /// Primal feasibility tolerance used by the ratio test.
    pub primal_tol: f64,
    /// Smallest pivot magnitude accepted in the ratio test.
    pub pivot_tol: f64,
    /// Candidate list length of each pricing pass.
    pub candidates: usize,
    /// Basis changes between refactorizations of the inverse.
    pub refactor_every: usize,
    pub max_pivots: usize,
    pub exec: Exec,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            dual_tol: 1e-11,
            primal_tol: 1e-12,
            pivot_tol: 1e-10,
            candidates: 48,
            refactor_every: 64,
            max_pivots: 200_000,
            exec: Exec::Parallel,
        }
    }
}

/// A packing program with `A` stored column-major (`a[j * rows + i]`).
#[derive(Clone, Debug)]
pub struct PackingLp {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
    pub bound_flips: usize,
    pub pricing_passes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
}

impl PackingLp {
    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.rows * self.cols || self.b.len() != self.rows || self.c.len() != self.cols {
            return Err(Error::Contract("packing LP dimensions disagree".into()));
        }
        if self.b.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Infeasible("right-hand side must be positive".into()));
        }
        if self.a.iter().chain(&self.c).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(
                "packing LP entries must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn column(&self, j: usize) -> &[f64] {
        &self.a[j * self.rows..(j + 1) * self.rows]
    }

    /// Row activities `A x`.
    pub fn activity(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (acc, aij) in act.iter_mut().zip(self.column(j)) {
                    *acc += aij * xj;
                }
            }
        }
        act
    }
}

struct Simplex<'a> {
    lp: &'a PackingLp,
    opts: SimplexOptions,
    m: usize,
    /// variable index of each basis position; `n + i` is the slack of row i
    basis: Vec<usize>,
    status: Vec<Status>,
    /// row-major dense inverse of the basis matrix
    binv: Vec<f64>,
    xb: Vec<f64>,
    y: Vec<f64>,
    since_refactor: usize,
    pivots: usize,
    flips: usize,
    passes: usize,
    degenerate_run: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a PackingLp, opts: SimplexOptions) -> Self {
        let m = lp.rows;
        let n = lp.cols;
        let mut status = vec![Status::Lower; n + m];
        // crash: cheapest columns first, greedily at their upper bound
        let mut order: Vec<usize> = (0..n).filter(|&j| lp.c[j] > 0.0).collect();
        let cost: Vec<f64> = (0..n)
            .map(|j| lp.column(j).iter().copied().fold(0.0, f64::max) / lp.c[j].max(f64::MIN_POSITIVE))
            .collect();
        order.sort_by(|&p, &q| cost[p].total_cmp(&cost[q]).then(p.cmp(&q)));
        let mut used = vec![0.0; m];
        for j in order {
            let col = lp.column(j);
            if col
                .iter()
                .zip(&used)
                .zip(&lp.b)
                .all(|((a, u), b)| u + a <= b * (1.0 - 1e-12))
            {
                used.iter_mut().zip(col).for_each(|(u, a)| *u += a);
                status[j] = Status::Upper;
            }
        }
        for s in status.iter_mut().skip(n) {
            *s = Status::Basic;
        }
        let mut sx = Simplex {
            lp,
            opts,
            m,
            basis: (n..n + m).collect(),
            status,
            binv: vec![0.0; m * m],
            xb: vec![0.0; m],
            y: vec![0.0; m],
            since_refactor: 0,
            pivots: 0,
            flips: 0,
            passes: 0,
            degenerate_run: 0,
        };
        for i in 0..m {
            sx.binv[i * m + i] = 1.0;
        }
        sx.recompute_xb();
        sx.recompute_y();
        sx
    }

    fn n(&self) -> usize {
        self.lp.cols
    }

    fn cost(&self, v: usize) -> f64 {
        if v < self.n() {
            self.lp.c[v]
        } else {
            0.0
        }
    }

    fn upper(&self, v: usize) -> f64 {
        if v < self.n() {
            1.0
        } else {
            f64::INFINITY
        }
    }

    /// Dense column of variable `v`, written into `out`.
    fn load_column(&self, v: usize, out: &mut [f64]) {
        if v < self.n() {
            out.copy_from_slice(self.lp.column(v));
        } else {
            out.iter_mut().for_each(|x| *x = 0.0);
            out[v - self.n()] = 1.0;
        }
    }

    fn ftran(&self, v: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        if v < self.n() {
            let col = self.lp.column(v);
            for (r, o) in out.iter_mut().enumerate() {
                let row = &self.binv[r * m..(r + 1) * m];
                *o = row.iter().zip(col).map(|(x, y)| x * y).sum();
            }
        } else {
            let k = v - self.n();
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.binv[r * m + k];
            }
        }
        out
    }

    fn recompute_y(&mut self) {
        let m = self.m;
        let mut y = vec![0.0; m];
        for r in 0..m {
            let cb = self.cost(self.basis[r]);
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                y.iter_mut().zip(row).for_each(|(yk, b)| *yk += cb * b);
            }
        }
        self.y = y;
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut rhs = self.lp.b.clone();
        for j in 0..self.n() {
            if self.status[j] == Status::Upper {
                rhs.iter_mut().zip(self.lp.column(j)).for_each(|(r, a)| *r -= a);
            }
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            self.xb[r] = row.iter().zip(&rhs).map(|(x, y)| x * y).sum();
        }
    }

    /// Rebuilds the inverse from the basis columns by Gauss-Jordan
    /// elimination with partial pivoting.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (r, &v) in self.basis.iter().enumerate() {
            self.load_column(v, &mut col);
            for i in 0..m {
                mat[i * m + r] = col[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let (p, best) =
                (k..m)
                    .map(|i| (i, mat[i * m + k].abs()))
                    .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best < 1e-14 {
                return Err(Error::Invariant("singular simplex basis".into()));
            }
            if p != k {
                for c in 0..m {
                    mat.swap(p * m + c, k * m + c);
                    inv.swap(p * m + c, k * m + c);
                }
            }
            let d = mat[k * m + k];
            for c in 0..m {
                mat[k * m + c] /= d;
                inv[k * m + c] /= d;
            }
            for i in 0..m {
                if i != k {
                    let f = mat[i * m + k];
                    if f != 0.0 {
                        for c in 0..m {
                            mat[i * m + c] -= f * mat[k * m + c];
                            inv[i * m + c] -= f * inv[k * m + c];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.since_refactor = 0;
        self.recompute_xb();
        self.recompute_y();
        Ok(())
    }

    fn reduced_cost(&self, v: usize) -> f64 {
        if v < self.n() {
            self.lp.c[v] - self.lp.column(v).iter().zip(&self.y).map(|(a, y)| a * y).sum::<f64>()
        } else {
            -self.y[v - self.n()]
        }
    }

    /// Positive attractiveness if `v` can improve the objective.
    fn violation(&self, v: usize, d: f64) -> f64 {
        match self.status[v] {
            Status::Lower if d > self.opts.dual_tol => d,
            Status::Upper if d < -self.opts.dual_tol => -d,
            _ => 0.0,
        }
    }

    /// Full pricing pass; returns candidates, most attractive first.
    fn price(&mut self, limit: usize) -> Vec<usize> {
        self.passes += 1;
        let total = self.n() + self.m;
        let chunk = 4096;
        let chunks = total.div_ceil(chunk);
        let per_chunk: Vec<Vec<(f64, usize)>> = self.opts.exec.map_range(chunks, |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(total);
            let mut found: Vec<(f64, usize)> = (lo..hi)
                .filter(|&v| self.status[v] != Status::Basic)
                .filter_map(|v| {
                    let score = self.violation(v, self.reduced_cost(v));
                    (score > 0.0).then_some((score, v))
                })
                .collect();
            keep_best(&mut found, limit);
            found
        });
        let mut all: Vec<(f64, usize)> = per_chunk.into_iter().flatten().collect();
        keep_best(&mut all, limit);
        all.into_iter().map(|(_, v)| v).collect()
    }

    /// Smallest-index improving variable (Bland).
    fn price_bland(&mut self) -> Option<usize> {
        self.passes += 1;
        (0..self.n() + self.m)
            .find(|&v| self.status[v] != Status::Basic && self.violation(v, self.reduced_cost(v)) > 0.0)
    }

    /// One simplex iteration with entering variable `q`. Returns true on a
    /// basis change.
    fn iterate(&mut self, q: usize, bland: bool) -> Result<bool> {
        let d = self.reduced_cost(q);
        if self.violation(q, d) == 0.0 {
            return Ok(false);
        }
        let dir = if self.status[q] == Status::Lower { 1.0 } else { -1.0 };
        let alpha = self.ftran(q);
        let tol = self.opts.primal_tol;
        let piv = self.opts.pivot_tol;

        // Harris pass 1: the largest step allowed with relaxed bounds
        let mut relaxed = f64::INFINITY;
        for r in 0..self.m {
            let delta = dir * alpha[r];
            let v = self.basis[r];
            if delta > piv {
                relaxed = relaxed.min((self.xb[r] + tol) / delta);
            } else if delta < -piv {
                let ub = self.upper(v);
                if ub.is_finite() {
                    relaxed = relaxed.min((ub - self.xb[r] + tol) / -delta);
                }
            }
        }
        // pass 2: among blocking rows within the relaxed step, the largest pivot
        let mut leave: Option<(usize, f64, bool)> = None;
        let mut best_pivot = 0.0;
        for r in 0..self.m {
            let delta = dir * alpha[r];
            let v = self.basis[r];
            let (ratio, to_upper) = if delta > piv {
                (self.xb[r] / delta, false)
            } else if delta < -piv && self.upper(v).is_finite() {
                ((self.upper(v) - self.xb[r]) / -delta, true)
            } else {
                continue;
            };
            if ratio <= relaxed {
                let better = if bland {
                    match leave {
                        None => true,
                        Some((lr, lratio, _)) => {
                            ratio < lratio - tol || (ratio <= lratio + tol && self.basis[r] < self.basis[lr])
                        }
                    }
                } else {
                    delta.abs() > best_pivot
                };
                if better {
                    best_pivot = delta.abs();
                    leave = Some((r, ratio.max(0.0), to_upper));
                }
            }
        }
        let own = self.upper(q);
        let theta_basis = leave.map_or(f64::INFINITY, |l| l.1);
        if own <= theta_basis {
            if !own.is_finite() {
                return Err(Error::Invariant("packing LP reported unbounded".into()));
            }
            // bound flip
            for r in 0..self.m {
                self.xb[r] -= dir * own * alpha[r];
            }
            self.status[q] = if dir > 0.0 { Status::Upper } else { Status::Lower };
            self.flips += 1;
            self.degenerate_run = 0;
            return Ok(false);
        }
        let (r, theta, to_upper) = leave.expect("finite step has a blocking row");
        for k in 0..self.m {
            self.xb[k] -= dir * theta * alpha[k];
        }
        self.xb[r] = if dir > 0.0 { theta } else { own - theta };
        let leaving = self.basis[r];
        self.status[leaving] = if to_upper { Status::Upper } else { Status::Lower };
        self.status[q] = Status::Basic;
        self.basis[r] = q;

        let m = self.m;
        let pr = alpha[r];
        for c in 0..m {
            self.binv[r * m + c] /= pr;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (k, row) in before.chunks_mut(m).chain(after.chunks_mut(m)).enumerate() {
            let k = if k < r { k } else { k + 1 };
            let f = alpha[k];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(x, p)| *x -= f * p);
            }
        }
        self.pivots += 1;
        self.since_refactor += 1;
        if theta <= tol {
            self.degenerate_run += 1;
        } else {
            self.degenerate_run = 0;
        }
        if self.since_refactor >= self.opts.refactor_every {
            self.refactor()?;
        } else {
            self.recompute_y();
        }
        Ok(true)
    }

    fn run(&mut self) -> Result<()> {
        for _ in 0..8 {
            self.iterate_to_optimum()?;
            // confirm on a clean inverse and fresh duals
            self.refactor()?;
            if self.price(1).is_empty() {
                return Ok(());
            }
            self.degenerate_run = 0;
        }
        Err(Error::Invariant("simplex did not settle on an optimum".into()))
    }

    fn iterate_to_optimum(&mut self) -> Result<()> {
        loop {
            if self.pivots > self.opts.max_pivots {
                return Err(Error::Invariant("simplex pivot limit reached".into()));
            }
            if self.degenerate_run > 50 {
                match self.price_bland() {
                    None => return Ok(()),
                    Some(q) => {
                        self.iterate(q, true)?;
                    }
                }
                continue;
            }
            let cands = self.price(self.opts.candidates);
            if cands.is_empty() {
                return Ok(());
            }
            for q in cands {
                self.iterate(q, false)?;
                if self.degenerate_run > 50 {
                    break;
                }
            }
        }
    }

    fn solution(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.n())
            .map(|j| if self.status[j] == Status::Upper { 1.0 } else { 0.0 })
            .collect();
        for (r, &v) in self.basis.iter().enumerate() {
            if v < self.n() {
                x[v] = self.xb[r].clamp(0.0, 1.0);
            }
        }
        x
    }
}

fn keep_best(v: &mut Vec<(f64, usize)>, limit: usize) {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if v.len() > limit && limit > 0 {
        v.select_nth_unstable_by(limit - 1, cmp);
        v.truncate(limit);
    }
    v.sort_by(cmp);
}

/// Solves the packing program to optimality.
pub fn solve_packing(lp: &PackingLp, opts: SimplexOptions) -> Result<LpSolution> {
    lp.validate()?;
    if lp.cols == 0 {
        return Ok(LpSolution {
            x: vec![],
            objective: 0.0,
            pivots: 0,
            bound_flips: 0,
            pricing_passes: 0,
        });
    }
    let mut sx = Simplex::new(lp, opts);
    sx.run()?;
    let x = sx.solution();
    let objective = x.iter().zip(&lp.c).map(|(x, c)| x * c).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots: sx.pivots,
        bound_flips: sx.flips,
        pricing_passes: sx.passes,
    })
}
