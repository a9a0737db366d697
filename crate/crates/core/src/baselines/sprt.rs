//! Truncated Wald SPRT against the worst-case diagonal null. It needs the
//! true alternative, so it serves as an oracle benchmark only.

use crate::dynamics::{propagate, state_index, OccupancyMatrix};
use crate::error::{Error, Result};
use crate::hypothesis::{worst_case_null, HypothesisPoint, NullGrid};
use crate::runtime::Decision;

/// Wald thresholds `(ln((1 - beta) / alpha), ln(beta / (1 - alpha)))`.
/// With `beta = 0` the lower threshold is `-inf` and the test never
/// accepts the null.
pub fn sprt_thresholds(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!("beta = {beta} must lie in [0, 1)")));
    }
    if alpha + beta >= 1.0 {
        return Err(Error::domain("alpha + beta must be below 1"));
    }
    let upper = ((1.0 - beta) / alpha).ln();
    let lower = if beta == 0.0 {
        f64::NEG_INFINITY
    } else {
        (beta / (1.0 - alpha)).ln()
    };
    Ok((upper, lower))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SprtSpec {
    pub h1: HypothesisPoint,
    /// Diagonal null probability.
    pub h0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub upper: f64,
    pub lower: f64,
    /// LLR increments indexed by `2 * z0 + z1`.
    increments: [f64; 4],
}

impl SprtSpec {
    /// Oracle spec: the true alternative against its worst-case null.
    pub fn oracle(p0: f64, p1: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !HypothesisPoint::new(p0, p1)?.is_alternative() {
            return Err(Error::domain(format!(
                "oracle needs an alternative p1 > p0, got ({p0}, {p1})"
            )));
        }
        let h0 = worst_case_null(p0, p1)?;
        SprtSpec::new(p0, p1, h0, alpha, beta)
    }

    pub fn new(p0: f64, p1: f64, h0: f64, alpha: f64, beta: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1), ("null", h0)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::domain(format!("{name} = {p} must lie strictly inside (0, 1)")));
            }
        }
        let (upper, lower) = sprt_thresholds(alpha, beta)?;
        let ok = |p: f64| (p / h0).ln();
        let fail = |p: f64| ((1.0 - p) / (1.0 - h0)).ln();
        let increments = [
            fail(p0) + fail(p1),
            fail(p0) + ok(p1),
            ok(p0) + fail(p1),
            ok(p0) + ok(p1),
        ];
        Ok(SprtSpec {
            h1: HypothesisPoint::new(p0, p1)?,
            h0,
            alpha,
            beta,
            upper,
            lower,
            increments,
        })
    }

    /// One-sided truncated oracle: no acceptance threshold, and the upper
    /// threshold is the smallest value whose exact rejection probability
    /// by `n_max` under the diagonal null is at most `alpha`.
    pub fn calibrated(p0: f64, p1: f64, alpha: f64, n_max: u32) -> Result<Self> {
        let mut spec = SprtSpec::oracle(p0, p1, alpha, 0.0)?;
        spec.upper = calibrated_upper(&spec, n_max)?;
        Ok(spec)
    }

    #[inline]
    pub fn increment(&self, z0: bool, z1: bool) -> f64 {
        self.increments[2 * usize::from(z0) + usize::from(z1)]
    }

    /// Log-likelihood ratio after `n` pairs with success counts `(s0, s1)`.
    pub fn llr_at(&self, s0: u32, s1: u32, n: u32) -> f64 {
        let [both_fail, only1, only0, _] = self.increments;
        f64::from(n) * both_fail + f64::from(s0) * (only0 - both_fail) + f64::from(s1) * (only1 - both_fail)
    }
}

/// Exact probability that the truncated test rejects within `n_max`
/// pairs when both policies succeed with probability `p`.
pub fn truncated_rejection_probability(spec: &SprtSpec, upper: f64, p: f64, n_max: u32) -> Result<f64> {
    let grid = NullGrid::new(vec![p], 0.0)?;
    let mut occ = OccupancyMatrix::initial(1);
    let mut w = vec![0.0];
    let mut total = 0.0;
    for n in 1..=n_max {
        occ = propagate(&occ, &w, &grid)?;
        w = vec![0.0; occ.width()];
        let row = occ.row(0);
        for s0 in 0..=n {
            for s1 in 0..=n {
                let k = state_index(n, s0, s1);
                let l = spec.llr_at(s0, s1, n);
                if l >= upper {
                    total += row[k];
                    w[k] = 1.0;
                } else if l <= spec.lower {
                    w[k] = 1.0;
                }
            }
        }
    }
    Ok(total)
}

/// Bisection for the smallest upper threshold with exact size at most
/// `spec.alpha` at horizon `n_max`. Wald's `ln(1 / alpha)` always has
/// size at most `alpha`, so it brackets the search from above.
pub fn calibrated_upper(spec: &SprtSpec, n_max: u32) -> Result<f64> {
    let size = |u: f64| truncated_rejection_probability(spec, u, spec.h0, n_max);
    let (mut lo, mut hi) = (0.0, (1.0 / spec.alpha).ln());
    if size(lo)? <= spec.alpha {
        return Ok(lo);
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if size(mid)? <= spec.alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// One SPRT update. Truncation at `n_max` is left to the caller.
pub fn sprt_step(llr: f64, z0: bool, z1: bool, spec: &SprtSpec) -> (f64, Decision) {
    let llr = llr + spec.increment(z0, z1);
    let decision = if llr >= spec.upper {
        Decision::RejectNull
    } else if llr <= spec.lower {
        Decision::AcceptNull
    } else {
        Decision::Continue
    };
    (llr, decision)
}
