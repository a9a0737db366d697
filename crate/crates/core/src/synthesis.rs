//! Rule synthesis: propagate the surviving null mass one step, solve a
//! packing LP for the largest admissible stopping weights, compress the
//! solution to one threshold per column, repeat.
//!
//! Each null carries its own remaining capacity: the cumulative budget
//! `F(n) = f(1) + ... + f(n)` minus the rejection probability that null has
//! already spent. Unused budget therefore rolls forward, and the certified
//! cumulative risk of every null never exceeds `F(n)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_with, state_index, states_at, OccupancyMatrix, PropagateOptions};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hypothesis::{build_null_grid_with, default_grid_size, GridSpacing, NullGrid};
use crate::lp::{solve_packing, PackingLp, SimplexOptions};
use crate::region::{Side, StepRegion};

/// Capacities at or below this are treated as exhausted.
const CAPACITY_FLOOR: f64 = 1e-15;
/// Relative tightening of every LP row so rounding never overspends.
const SAFETY: f64 = 1e-9;
/// LP values this close to 1 are taken as exactly 1.
const SNAP_ONE: f64 = 1e-12;
/// Tolerance of the certified-risk self-check.
pub const CERTIFY_TOL: f64 = 1e-9;
/// A constraint with at most this much slack counts as active.
pub const ACTIVE_SLACK: f64 = 1e-6;

/// Per-step risk allocation `f(1), ..., f(n_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    alpha_star: f64,
    per_step: Vec<f64>,
}

impl RiskBudget {
    pub fn new(alpha_star: f64, per_step: Vec<f64>) -> Result<Self> {
        if !(alpha_star > 0.0 && alpha_star < 1.0) {
            return Err(Error::domain(format!("alpha = {alpha_star} must lie in (0, 1)")));
        }
        if per_step.is_empty() {
            return Err(Error::domain("budget needs at least one step"));
        }
        if let Some((i, v)) = per_step
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::domain(format!(
                "budget entry {} = {v} must be finite and nonnegative",
                i + 1
            )));
        }
        let total: f64 = per_step.iter().sum();
        if total > alpha_star * (1.0 + 1e-12) {
            return Err(Error::domain(format!(
                "budget sums to {total}, above alpha = {alpha_star}"
            )));
        }
        Ok(RiskBudget { alpha_star, per_step })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_star
    }

    pub fn n_max(&self) -> u32 {
        self.per_step.len() as u32
    }

    pub fn per_step(&self) -> &[f64] {
        &self.per_step
    }

    /// `f(n)` for `1 <= n <= n_max`.
    pub fn at(&self, n: u32) -> f64 {
        self.per_step[n as usize - 1]
    }

    /// `F(n) = f(1) + ... + f(n)`; `F(0) = 0`.
    pub fn cumulative(&self, n: u32) -> f64 {
        self.per_step[..n as usize].iter().sum()
    }

    /// Same allocation shape rescaled to a different total level.
    pub fn rescaled(&self, alpha: f64) -> Result<Self> {
        let k = alpha / self.alpha_star;
        RiskBudget::new(alpha, self.per_step.iter().map(|v| v * k).collect())
    }
}

/// `f(n) = alpha / n_max` for every step.
pub fn uniform_budget(alpha_star: f64, n_max: u32) -> Result<RiskBudget> {
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    RiskBudget::new(alpha_star, vec![alpha_star / f64::from(n_max); n_max as usize])
}

/// Default eligibility: stopping is only allowed where the better count
/// strictly leads.
pub fn leads(s0: u32, s1: u32) -> bool {
    s1 > s0
}

#[derive(Clone, Debug)]
pub struct StepLp {
    /// Dense stopping weights, one per state.
    pub weights: Vec<f64>,
    pub objective: f64,
    /// Smallest `capacity - activity` over nulls with positive capacity.
    pub min_slack: f64,
    /// Some eligible state received weight below 1.
    pub saturated: bool,
    pub lp_columns: usize,
    pub pivots: usize,
    pub bound_flips: usize,
}

/// Single-step LP with one shared cumulative capacity for every null.
pub fn solve_step_lp(occ: &OccupancyMatrix, cum_risk: f64, eligible: impl Fn(u32, u32) -> bool) -> Result<StepLp> {
    if !(cum_risk >= 0.0 && cum_risk.is_finite()) {
        return Err(Error::domain(format!(
            "cumulative risk {cum_risk} must be finite and nonnegative"
        )));
    }
    let caps = vec![cum_risk; occ.nulls()];
    solve_step_lp_rows(occ, &caps, eligible, SimplexOptions::default())
}

/// Eligible states in tie-break order: larger lead first, then larger
/// better-count.
fn tie_break_order(n: u32, eligible: &impl Fn(u32, u32) -> bool) -> Vec<(u32, u32)> {
    let mut states: Vec<(u32, u32)> = (0..=n)
        .flat_map(|a| (0..=n).map(move |b| (a, b)))
        .filter(|&(a, b)| eligible(a, b))
        .collect();
    states.sort_by(|x, y| {
        let lead = |&(a, b): &(u32, u32)| i64::from(b) - i64::from(a);
        lead(y).cmp(&lead(x)).then(y.1.cmp(&x.1)).then(x.0.cmp(&y.0))
    });
    states
}

/// Maximizes the total stopping weight over eligible states subject to
/// `P_i . w <= caps[i]` for every null row `i`.
pub fn solve_step_lp_rows(
    occ: &OccupancyMatrix,
    caps: &[f64],
    eligible: impl Fn(u32, u32) -> bool,
    opts: SimplexOptions,
) -> Result<StepLp> {
    if caps.len() != occ.nulls() {
        return Err(Error::Contract(format!(
            "{} capacities for {} nulls",
            caps.len(),
            occ.nulls()
        )));
    }
    let n = occ.step();
    let order = tie_break_order(n, &eligible);
    let active: Vec<usize> = (0..occ.nulls()).filter(|&i| caps[i] > CAPACITY_FLOOR).collect();
    let exhausted: Vec<usize> = (0..occ.nulls()).filter(|&i| caps[i] <= CAPACITY_FLOOR).collect();

    let mut weights = vec![0.0; states_at(n)];
    let rows = active.len();
    let mut lp_states = Vec::new();
    let mut a = Vec::new();
    for &(s0, s1) in &order {
        let k = state_index(n, s0, s1);
        if exhausted.iter().any(|&i| occ.row(i)[k] > 0.0) {
            continue;
        }
        let start = a.len();
        let mut any = false;
        for &i in &active {
            let v = occ.row(i)[k] / caps[i];
            any |= v > 0.0;
            a.push(v);
        }
        if any {
            lp_states.push(k);
        } else {
            a.truncate(start);
            weights[k] = 1.0;
        }
    }

    let mut pivots = 0;
    let mut bound_flips = 0;
    if !lp_states.is_empty() {
        let lp = PackingLp {
            rows,
            cols: lp_states.len(),
            a,
            b: vec![1.0 - SAFETY; rows],
            c: vec![1.0; lp_states.len()],
        };
        let sol = solve_packing(&lp, opts)?;
        pivots = sol.pivots;
        bound_flips = sol.bound_flips;
        for (&k, &x) in lp_states.iter().zip(&sol.x) {
            weights[k] = if x >= 1.0 - SNAP_ONE { 1.0 } else { x.max(0.0) };
        }
    }

    let risk = occ.risk(&weights);
    let mut min_slack = f64::INFINITY;
    for &i in &active {
        min_slack = min_slack.min(caps[i] - risk[i]);
    }
    for &i in &exhausted {
        if risk[i] > 0.0 {
            return Err(Error::Invariant(format!(
                "exhausted null {i} received risk {}",
                risk[i]
            )));
        }
    }
    let saturated = order.iter().any(|&(a, b)| weights[state_index(n, a, b)] < 1.0);
    let objective = order.iter().map(|&(a, b)| weights[state_index(n, a, b)]).sum();
    Ok(StepLp {
        weights,
        objective,
        min_slack,
        saturated,
        lp_columns: lp_states.len(),
        pivots,
        bound_flips,
    })
}

/// Largest threshold region dominated pointwise by `w`, with the weight
/// lost by the compression.
pub fn compress(w: &[f64], n: u32) -> Result<(StepRegion, f64)> {
    if w.len() != states_at(n) {
        return Err(Error::Contract(format!(
            "weights have {} entries, step {n} has {}",
            w.len(),
            states_at(n)
        )));
    }
    let side = n as usize + 1;
    let mut thresholds = Vec::with_capacity(side);
    let mut phis = Vec::with_capacity(side);
    let mut loss = 0.0;
    for a in 0..side {
        let col = &w[a * side..(a + 1) * side];
        let mut k = side;
        while k > 0 && col[k - 1] >= 1.0 {
            k -= 1;
        }
        let (t, phi) = if k > 0 && col[k - 1] > 0.0 {
            (k - 1, col[k - 1].min(1.0))
        } else if k < side {
            (k, 1.0)
        } else {
            (side, 0.0)
        };
        let kept = phi + (side - (t + 1).min(side)) as f64;
        let total: f64 = col.iter().map(|v| v.clamp(0.0, 1.0)).sum();
        loss += total - kept;
        thresholds.push(t as u32);
        phis.push(phi);
    }
    Ok((StepRegion::from_parts(n, thresholds, phis), loss))
}

#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    /// Null grid size; `None` uses [`default_grid_size`].
    pub grid_size: Option<usize>,
    pub spacing: GridSpacing,
    /// Budget for the accept side. `None` mirrors the reject budget.
    pub accept_budget: Option<RiskBudget>,
    pub propagate: PropagateOptions,
    pub simplex: SimplexOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            grid_size: None,
            spacing: GridSpacing::Probability,
            accept_budget: None,
            propagate: PropagateOptions::default(),
            simplex: SimplexOptions::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.propagate.exec = exec;
        self.simplex.exec = exec;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n: u32,
    pub lp_objective: f64,
    pub compression_loss: f64,
    pub min_slack: f64,
    pub saturated: bool,
    pub lp_columns: usize,
    pub pivots: usize,
}

/// Everything recorded while synthesizing one side.
#[derive(Clone, Debug)]
pub struct SideSynthesis {
    pub regions: Vec<StepRegion>,
    pub steps: Vec<StepDiagnostics>,
    /// `trace[n - 1][i]`: cumulative rejection probability of null `i`
    /// through step `n`.
    pub trace: Vec<Vec<f64>>,
}

impl SideSynthesis {
    /// Largest cumulative risk over nulls after each step.
    pub fn worst_trace(&self) -> Vec<f64> {
        self.trace
            .iter()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .collect()
    }
}

/// Synthesizes one side in its own `(worse, better)` frame.
pub fn synthesize_side(budget: &RiskBudget, grid: &NullGrid, opts: &SynthesisOptions) -> Result<SideSynthesis> {
    let n_max = budget.n_max();
    let m = grid.len();
    let mut occ = OccupancyMatrix::initial(m);
    let mut w_prev = vec![0.0];
    let mut spent = vec![0.0; m];
    let mut cum = 0.0;
    let mut regions = Vec::with_capacity(n_max as usize);
    let mut steps = Vec::with_capacity(n_max as usize);
    let mut trace = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        occ = propagate_with(&occ, &w_prev, grid, opts.propagate)?;
        cum += budget.at(n);
        let caps: Vec<f64> = spent.iter().map(|s| (cum - s).max(0.0)).collect();
        let step = solve_step_lp_rows(&occ, &caps, leads, opts.simplex)?;
        let (region, loss) = compress(&step.weights, n)?;
        let rep = region.weights(Side::Reject);
        for (i, r) in occ.risk(&rep).into_iter().enumerate() {
            spent[i] += r;
            if spent[i] > cum + CERTIFY_TOL {
                return Err(Error::Invariant(format!(
                    "null {i} certified risk {} exceeds cumulative budget {cum} at step {n}",
                    spent[i]
                )));
            }
        }
        if step.saturated && step.min_slack > ACTIVE_SLACK {
            return Err(Error::Invariant(format!(
                "step {n}: eligible weight below 1 while every constraint has slack {}",
                step.min_slack
            )));
        }
        steps.push(StepDiagnostics {
            n,
            lp_objective: step.objective,
            compression_loss: loss,
            min_slack: step.min_slack,
            saturated: step.saturated,
            lp_columns: step.lp_columns,
            pivots: step.pivots,
        });
        trace.push(spent.clone());
        regions.push(region);
        w_prev = rep;
    }
    Ok(SideSynthesis { regions, steps, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub grid_spacing: GridSpacing,
    /// Accept-side budget when it differs from the reject budget.
    pub accept_budget: Option<RiskBudget>,
    /// Worst-null cumulative rejection probability after each step.
    pub certified_reject_risk: Vec<f64>,
    pub certified_accept_risk: Vec<f64>,
}

/// A synthesized two-sided stopping rule.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionRule {
    pub alpha_star: f64,
    pub n_max: u32,
    pub budget: RiskBudget,
    pub grid: NullGrid,
    /// `reject[n - 1]` is the step-`n` region in the `(s0, s1)` frame.
    pub reject: Vec<StepRegion>,
    /// `accept[n - 1]` is the step-`n` region in the `(s1, s0)` frame.
    pub accept: Vec<StepRegion>,
    pub provenance: Provenance,
}

impl DecisionRule {
    pub fn region(&self, side: Side, n: u32) -> Option<&StepRegion> {
        let regions = match side {
            Side::Reject => &self.reject,
            Side::Accept => &self.accept,
        };
        n.checked_sub(1).and_then(|k| regions.get(k as usize))
    }

    /// Probability of stopping on `side` at `(s0, s1)` after `n` trials.
    pub fn stop_probability(&self, side: Side, s0: u32, s1: u32, n: u32) -> f64 {
        match self.region(side, n) {
            Some(r) => {
                let (a, b) = side.frame(s0, s1);
                r.lookup(a, b)
            }
            None => 0.0,
        }
    }

    pub fn accept_budget(&self) -> &RiskBudget {
        self.provenance.accept_budget.as_ref().unwrap_or(&self.budget)
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub rule: DecisionRule,
    pub reject: SideSynthesis,
    /// `None` when the accept side reuses the reject synthesis.
    pub accept: Option<SideSynthesis>,
}

/// Synthesizes a rule with the default grid and options.
pub fn synthesize_rule(alpha_star: f64, n_max: u32, budget: &RiskBudget, m: Option<usize>) -> Result<DecisionRule> {
    let opts = SynthesisOptions {
        grid_size: m,
        ..SynthesisOptions::default()
    };
    Ok(synthesize_rule_with(alpha_star, n_max, budget, &opts)?.rule)
}

pub fn synthesize_rule_with(
    alpha_star: f64,
    n_max: u32,
    budget: &RiskBudget,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    if budget.n_max() != n_max {
        return Err(Error::Contract(format!(
            "budget covers {} steps, n_max = {n_max}",
            budget.n_max()
        )));
    }
    if (budget.alpha() - alpha_star).abs() > 1e-15 * alpha_star.max(1.0) {
        return Err(Error::Contract(format!(
            "budget level {} differs from alpha = {alpha_star}",
            budget.alpha()
        )));
    }
    let m = opts.grid_size.unwrap_or_else(|| default_grid_size(n_max));
    let grid = build_null_grid_with(alpha_star, n_max, m, opts.spacing)?;
    let reject = synthesize_side(budget, &grid, opts)?;
    let accept = match &opts.accept_budget {
        Some(b) if b.per_step() != budget.per_step() => {
            if b.n_max() != n_max {
                return Err(Error::Contract("accept budget length differs from n_max".into()));
            }
            Some(synthesize_side(b, &grid, opts)?)
        }
        // the diagonal nulls are exchangeable, so the flipped synthesis
        // with the same budget is the reject synthesis itself
        _ => None,
    };
    let accept_side = accept.as_ref().unwrap_or(&reject);
    let rule = DecisionRule {
        alpha_star,
        n_max,
        budget: budget.clone(),
        grid,
        reject: reject.regions.clone(),
        accept: accept_side.regions.clone(),
        provenance: Provenance {
            tool: "seqcompare".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            grid_spacing: opts.spacing,
            accept_budget: accept.as_ref().and(opts.accept_budget.clone()),
            certified_reject_risk: reject.worst_trace(),
            certified_accept_risk: accept_side.worst_trace(),
        },
    };
    Ok(Synthesis { rule, reject, accept })
}
