//! Hypothesis space for the one-sided comparison `p1 <= p0` (null) versus
//! `p1 > p0` (alternative), worst-case point nulls, and the discretized set
//! of diagonal nulls used during synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Success probabilities of the baseline (`p0`) and novel (`p1`) policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisPoint {
    pub p0: f64,
    pub p1: f64,
}

impl HypothesisPoint {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        check_probability("p0", p0)?;
        check_probability("p1", p1)?;
        Ok(HypothesisPoint { p0, p1 })
    }

    pub fn is_null(&self) -> bool {
        self.p1 <= self.p0
    }

    pub fn is_alternative(&self) -> bool {
        !self.is_null()
    }

    /// Worst-case diagonal null after the half-count continuity correction
    /// at resolution `n_max`.
    pub fn worst_case_null(&self, n_max: u32) -> Result<f64> {
        let p0 = continuity_correct(self.p0, n_max)?;
        let p1 = continuity_correct(self.p1, n_max)?;
        worst_case_null(p0, p1)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn check_open_probability(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("{name} = {p} must lie strictly inside (0, 1)")));
    }
    Ok(())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Clamps `p` to `[1/(2 n_max), 1 - 1/(2 n_max)]`.
pub fn continuity_correct(p: f64, n_max: u32) -> Result<f64> {
    check_probability("p", p)?;
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let h = 0.5 / f64::from(n_max);
    Ok(p.clamp(h, 1.0 - h))
}

/// Diagonal null `p*` with `logit(p*)` halfway between `logit(p0)` and
/// `logit(p1)`: the point maximizing the expected log-likelihood ratio of
/// `(p0, p1)` against `(p, p)` under `(p, p)`.
pub fn worst_case_null(p0: f64, p1: f64) -> Result<f64> {
    check_open_probability("p0", p0)?;
    check_open_probability("p1", p1)?;
    if p0 == p1 {
        return Ok(p0);
    }
    let p = sigmoid(0.5 * (logit(p0) + logit(p1)));
    // keep the result inside the bracket despite rounding
    let (lo, hi) = if p0 < p1 { (p0, p1) } else { (p1, p0) };
    Ok(p.clamp(lo, hi))
}

/// Midpoint in the nominal parameter. Diagnostic only.
pub fn nominal_midpoint_null(p0: f64, p1: f64) -> Result<f64> {
    check_open_probability("p0", p0)?;
    check_open_probability("p1", p1)?;
    Ok(0.5 * (p0 + p1))
}

/// The `p'` between `p0` and `p1` with `KL(p0 || p') = KL(p1 || p')`.
/// Diagnostic only; found by bisection.
pub fn kl_equidistant_null(p0: f64, p1: f64) -> Result<f64> {
    check_open_probability("p0", p0)?;
    check_open_probability("p1", p1)?;
    if p0 == p1 {
        return Ok(p0);
    }
    let (mut lo, mut hi) = if p0 < p1 { (p0, p1) } else { (p1, p0) };
    let (a, b) = (lo, hi);
    // g is increasing in q on [a, b]: KL(a||q) grows, KL(b||q) shrinks
    let g = |q: f64| bernoulli_kl(a, q) - bernoulli_kl(b, q);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `KL(Ber(p) || Ber(q))` in nats.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Largest `eps` such that a `Ber(1 - eps)` source produces `n_max`
/// straight successes with probability at least `1 - alpha`.
pub fn truncation_epsilon(alpha: f64, n_max: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    // 1 - (1 - alpha)^(1/n) without cancellation
    Ok(-((1.0 - alpha).ln() / f64::from(n_max)).exp_m1())
}

/// Grid size used when the caller does not choose one.
pub fn default_grid_size(n_max: u32) -> usize {
    if n_max <= 500 {
        100
    } else {
        (100.0 * (f64::from(n_max) / 500.0).sqrt()).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    /// Uniform in `p`.
    #[default]
    Probability,
    /// Uniform in `logit(p)`.
    Logit,
}

/// Increasing diagonal nulls `p(1) < ... < p(m)` inside `[eps, 1 - eps]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullGrid {
    points: Vec<f64>,
    epsilon: f64,
}

impl NullGrid {
    pub fn new(points: Vec<f64>, epsilon: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("null grid needs at least one point"));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::domain(format!("epsilon = {epsilon} must lie in [0, 0.5)")));
        }
        for (i, &p) in points.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) || p < epsilon || p > 1.0 - epsilon {
                return Err(Error::domain(format!(
                    "null grid point {i} = {p} outside [{epsilon}, {}]",
                    1.0 - epsilon
                )));
            }
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("null grid points must be strictly increasing"));
        }
        Ok(NullGrid { points, epsilon })
    }

    /// Grid without the interior check; only for degenerate test fixtures.
    #[cfg(test)]
    pub(crate) fn raw(points: Vec<f64>) -> Self {
        NullGrid { points, epsilon: 0.0 }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn build_null_grid(alpha: f64, n_max: u32, m: usize) -> Result<NullGrid> {
    build_null_grid_with(alpha, n_max, m, GridSpacing::Probability)
}

pub fn build_null_grid_with(alpha: f64, n_max: u32, m: usize, spacing: GridSpacing) -> Result<NullGrid> {
    let eps = truncation_epsilon(alpha, n_max)?;
    uniform_grid(eps, m, spacing)
}

/// `m` points evenly spaced on `[eps, 1 - eps]` (endpoints included for
/// `m >= 2`; the midpoint for `m = 1`).
pub fn uniform_grid(eps: f64, m: usize, spacing: GridSpacing) -> Result<NullGrid> {
    if m == 0 {
        return Err(Error::domain("grid size m must be at least 1"));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::domain(format!("epsilon = {eps} must lie in (0, 0.5)")));
    }
    if m == 1 {
        return NullGrid::new(vec![0.5], eps);
    }
    let (lo, hi) = match spacing {
        GridSpacing::Probability => (eps, 1.0 - eps),
        GridSpacing::Logit => (logit(eps), logit(1.0 - eps)),
    };
    let last = (m - 1) as f64;
    let points = (0..m)
        .map(|i| {
            let x = if i == 0 {
                lo
            } else if i == m - 1 {
                hi
            } else {
                lo + (hi - lo) * (i as f64 / last)
            };
            match spacing {
                GridSpacing::Probability => x,
                GridSpacing::Logit if i == 0 => eps,
                GridSpacing::Logit if i == m - 1 => 1.0 - eps,
                GridSpacing::Logit => sigmoid(x),
            }
        })
        .collect();
    NullGrid::new(points, eps)
}

/// Largest Pinsker bound `sqrt(KL(p_i || p_{i+1}) / 2)` over adjacent grid
/// points; zero for a single point.
pub fn discretization_gap_bound(grid: &NullGrid) -> f64 {
    grid.points
        .windows(2)
        .map(|w| (bernoulli_kl(w[0], w[1]) / 2.0).sqrt())
        .fold(0.0, f64::max)
}
