//! Monte Carlo harness: shared trajectory sets, a per-pair method
//! contract, and power / Type-I summaries.

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::barnard::NaiveBatch;
use crate::baselines::sprt::{sprt_step, SprtSpec};
use crate::dynamics::EvalState;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hypothesis::HypothesisPoint;
use crate::rng::{derive_seed, Stream};
use crate::runtime::{decide, Decision, Mode};
use crate::synthesis::DecisionRule;

const TRAJECTORY_DOMAIN: u64 = 0x7472_616a;
const METHOD_DOMAIN: u64 = 0x6d65_7468;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Null,
    Alternative,
}

impl Truth {
    pub fn as_str(self) -> &'static str {
        match self {
            Truth::Null => "null",
            Truth::Alternative => "alternative",
        }
    }

    /// The terminal decision that counts as correct under this truth.
    pub fn correct(self) -> Decision {
        match self {
            Truth::Null => Decision::AcceptNull,
            Truth::Alternative => Decision::RejectNull,
        }
    }
}

/// Independent outcome sequences of equal length. Trajectory `i` depends
/// only on `(seed, i)`, so sets of different sizes share their prefixes.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub p0: f64,
    pub p1: f64,
    pub truth: Truth,
    n_max: u32,
    /// two bits per pair: bit 0 is z0, bit 1 is z1
    pairs: Vec<u8>,
}

impl Trajectories {
    pub fn len(&self) -> usize {
        self.pairs.len() / self.n_max as usize
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn get(&self, i: usize) -> Vec<(bool, bool)> {
        self.raw(i).iter().map(|&b| (b & 1 != 0, b & 2 != 0)).collect()
    }

    fn raw(&self, i: usize) -> &[u8] {
        let w = self.n_max as usize;
        &self.pairs[i * w..(i + 1) * w]
    }
}

pub fn generate_trajectories(p0: f64, p1: f64, n_max: u32, count: usize, seed: u64) -> Result<Trajectories> {
    generate_trajectories_with(p0, p1, n_max, count, seed, Truth::Alternative, Exec::default())
}

pub fn generate_trajectories_with(
    p0: f64,
    p1: f64,
    n_max: u32,
    count: usize,
    seed: u64,
    truth: Truth,
    exec: Exec,
) -> Result<Trajectories> {
    for p in [p0, p1] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
    }
    if count == 0 || n_max == 0 {
        return Err(Error::domain("need at least one trajectory of at least one step"));
    }
    let base = derive_seed(seed, TRAJECTORY_DOMAIN);
    let w = n_max as usize;
    let mut pairs = vec![0u8; count * w];
    exec.for_each_chunk_mut(&mut pairs, w, |i, out| {
        let mut s = Stream::new(base, i as u64);
        for v in out.iter_mut() {
            let z0 = s.next_uniform() < p0;
            let z1 = s.next_uniform() < p1;
            *v = u8::from(z0) | (u8::from(z1) << 1);
        }
    });
    Ok(Trajectories {
        p0,
        p1,
        truth,
        n_max,
        pairs,
    })
}

/// A sequential procedure consuming one outcome pair per call.
pub trait Method: Sync {
    type State: Send;

    fn name(&self) -> &str;

    /// Fresh state for trajectory `index`; methods with internal
    /// randomness key it on the index.
    fn start(&self, index: usize) -> Self::State;

    fn step(&self, state: &mut Self::State, z0: bool, z1: bool) -> Decision;
}

/// The synthesized rule, as a [`Method`].
pub struct StepMethod {
    pub rule: Arc<DecisionRule>,
    pub mode: Mode,
    pub seed: u64,
}

impl Method for StepMethod {
    type State = (EvalState, u64);

    fn name(&self) -> &str {
        "STEP"
    }

    fn start(&self, index: usize) -> Self::State {
        (
            EvalState::default(),
            derive_seed(derive_seed(self.seed, METHOD_DOMAIN), index as u64),
        )
    }

    fn step(&self, state: &mut Self::State, z0: bool, z1: bool) -> Decision {
        state.0 = state.0.advance(z0, z1);
        decide(&self.rule, self.mode, state.1, state.0)
    }
}

/// Truncated SPRT oracle.
pub struct SprtMethod {
    pub spec: SprtSpec,
    pub n_max: u32,
}

impl Method for SprtMethod {
    type State = (f64, u32);

    fn name(&self) -> &str {
        "SPRT"
    }

    fn start(&self, _: usize) -> Self::State {
        (0.0, 0)
    }

    fn step(&self, state: &mut Self::State, z0: bool, z1: bool) -> Decision {
        let (llr, d) = sprt_step(state.0, z0, z1, &self.spec);
        *state = (llr, state.1 + 1);
        if d == Decision::Continue && state.1 >= self.n_max {
            Decision::BudgetExhausted
        } else {
            d
        }
    }
}

/// Barnard's test after every trial (invalid as a sequential test).
pub struct NaiveBatchMethod {
    pub tables: NaiveBatch,
    pub alpha: f64,
}

impl Method for NaiveBatchMethod {
    type State = EvalState;

    fn name(&self) -> &str {
        "NAIVE_BARNARD"
    }

    fn start(&self, _: usize) -> Self::State {
        EvalState::default()
    }

    fn step(&self, state: &mut Self::State, z0: bool, z1: bool) -> Decision {
        *state = state.advance(z0, z1);
        if self.tables.p_value(state.n, state.s0, state.s1) < self.alpha {
            Decision::RejectNull
        } else if state.n >= self.tables.n_max() {
            Decision::BudgetExhausted
        } else {
            Decision::Continue
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRecord {
    pub trajectory: usize,
    /// Step of a RejectNull / AcceptNull decision; `None` otherwise.
    pub stop: Option<u32>,
    pub decision: Decision,
    pub truth: Truth,
}

/// Runs `method` over every trajectory; records are in trajectory order.
pub fn evaluate_method<M: Method>(method: &M, trajectories: &Trajectories, exec: Exec) -> Vec<StopRecord> {
    exec.map_range(trajectories.len(), |i| {
        let mut state = method.start(i);
        let mut decision = Decision::BudgetExhausted;
        let mut stop = None;
        for (k, &b) in trajectories.raw(i).iter().enumerate() {
            let d = method.step(&mut state, b & 1 != 0, b & 2 != 0);
            if d.is_terminal() {
                decision = d;
                if matches!(d, Decision::RejectNull | Decision::AcceptNull) {
                    stop = Some(k as u32 + 1);
                }
                break;
            }
        }
        StopRecord {
            trajectory: i,
            stop,
            decision,
            truth: trajectories.truth,
        }
    })
}

fn binomial_se(rate: f64, count: usize) -> f64 {
    (rate * (1.0 - rate) / count as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub truth: Truth,
    pub trajectories: usize,
    pub n_max: u32,
    pub rejections: usize,
    pub acceptances: usize,
    pub exhausted: usize,
    /// Fraction of trajectories ending in RejectNull: terminal power under
    /// an alternative, Type-I error under a null.
    pub rejection_rate: f64,
    pub se_rejection: f64,
    /// Terminal decisions other than the correct one.
    pub incorrect_stops: usize,
    /// `cumulative_power[t - 1]`: fraction with the correct decision by
    /// step `t`.
    pub cumulative_power: Vec<f64>,
    /// Mean time to the correct decision, counting every other outcome
    /// at `n_max`.
    pub expected_stop: f64,
    /// Mean stopping step over all stops, terminal abstention at `n_max`.
    pub mean_stop: f64,
}

impl PowerReport {
    pub fn terminal_power(&self) -> f64 {
        *self.cumulative_power.last().unwrap_or(&0.0)
    }

    pub fn type1_rate(&self) -> Option<f64> {
        (self.truth == Truth::Null).then_some(self.rejection_rate)
    }
}

pub fn power_report(records: &[StopRecord], n_max: u32) -> Result<PowerReport> {
    let Some(first) = records.first() else {
        return Err(Error::domain("power report needs at least one record"));
    };
    let truth = first.truth;
    if records.iter().any(|r| r.truth != truth) {
        return Err(Error::domain("records mix null and alternative trajectories"));
    }
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let count = records.len();
    let mut correct_at = vec![0usize; n_max as usize + 1];
    let (mut rejections, mut acceptances, mut exhausted, mut incorrect) = (0, 0, 0, 0);
    let (mut stop_sum, mut correct_sum) = (0u64, 0u64);
    for r in records {
        if let Some(s) = r.stop {
            if s == 0 || s > n_max {
                return Err(Error::domain(format!("stop step {s} outside [1, {n_max}]")));
            }
        }
        match r.decision {
            Decision::RejectNull => rejections += 1,
            Decision::AcceptNull => acceptances += 1,
            Decision::BudgetExhausted | Decision::Continue => exhausted += 1,
        }
        let step = r.stop.unwrap_or(n_max);
        stop_sum += u64::from(step);
        if r.decision == truth.correct() {
            correct_at[step as usize] += 1;
            correct_sum += u64::from(step);
        } else {
            if r.decision.is_terminal() && r.decision != Decision::BudgetExhausted {
                incorrect += 1;
            }
            correct_sum += u64::from(n_max);
        }
    }
    let mut acc = 0;
    let cumulative_power = correct_at[1..]
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / count as f64
        })
        .collect();
    let rejection_rate = rejections as f64 / count as f64;
    Ok(PowerReport {
        truth,
        trajectories: count,
        n_max,
        rejections,
        acceptances,
        exhausted,
        rejection_rate,
        se_rejection: binomial_se(rejection_rate, count),
        incorrect_stops: incorrect,
        cumulative_power,
        expected_stop: correct_sum as f64 / count as f64,
        mean_stop: stop_sum as f64 / count as f64,
    })
}

/// The 45 alternatives `p0 < p1` on the grid `0.05, 0.15, ..., 0.95`.
pub fn alternative_grid() -> Vec<HypothesisPoint> {
    let p = |k: u32| f64::from(2 * k + 1) / 20.0;
    (0..9)
        .flat_map(|i| (i + 1..10).map(move |j| (i, j)))
        .map(|(i, j)| HypothesisPoint::new(p(i), p(j)).expect("grid points are valid"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub method: String,
    pub p0: f64,
    pub p1: f64,
    pub alpha: f64,
    pub alternative: PowerReport,
    pub null: PowerReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub alpha: f64,
    pub n_max: u32,
    pub rows: Vec<GridRow>,
}

/// Evaluates `method` on alternative data and on its worst-case null.
pub fn compare_on<M: Method>(
    method: &M,
    alt: &Trajectories,
    null: &Trajectories,
    alpha: f64,
    exec: Exec,
) -> Result<GridRow> {
    Ok(GridRow {
        method: method.name().to_string(),
        p0: alt.p0,
        p1: alt.p1,
        alpha,
        alternative: power_report(&evaluate_method(method, alt, exec), alt.n_max())?,
        null: power_report(&evaluate_method(method, null, exec), null.n_max())?,
    })
}

/// Data sets for alternative `h` and its worst-case null, both keyed by
/// `(seed, index)` so every method sees the same outcomes.
pub fn paired_data(
    h: HypothesisPoint,
    n_max: u32,
    per_alt: usize,
    per_null: usize,
    seed: u64,
    index: u64,
    exec: Exec,
) -> Result<(Trajectories, Trajectories)> {
    let alt = generate_trajectories_with(
        h.p0,
        h.p1,
        n_max,
        per_alt,
        derive_seed(seed, 2 * index),
        Truth::Alternative,
        exec,
    )?;
    let q = h.worst_case_null(n_max)?;
    let null = generate_trajectories_with(
        q,
        q,
        n_max,
        per_null,
        derive_seed(seed, 2 * index + 1),
        Truth::Null,
        exec,
    )?;
    Ok((alt, null))
}

/// STEP and the horizon-calibrated SPRT oracle over all 45 alternatives. `rule` must have
/// been synthesized at `(alpha, n_max)`.
pub fn grid_experiment(
    rule: Arc<DecisionRule>,
    per_alt: usize,
    per_null: usize,
    seed: u64,
    exec: Exec,
) -> Result<GridReport> {
    if per_alt == 0 || per_null == 0 {
        return Err(Error::domain("trajectory counts must be at least 1"));
    }
    let (alpha, n_max) = (rule.alpha_star, rule.n_max);
    let step = StepMethod {
        rule: rule.clone(),
        mode: Mode::Randomized,
        seed,
    };
    let mut rows = Vec::new();
    for (k, h) in alternative_grid().into_iter().enumerate() {
        let (alt, null) = paired_data(h, n_max, per_alt, per_null, seed, k as u64, exec)?;
        rows.push(compare_on(&step, &alt, &null, alpha, exec)?);
        let sprt = SprtMethod {
            spec: SprtSpec::calibrated(h.p0, h.p1, alpha, n_max)?,
            n_max,
        };
        rows.push(compare_on(&sprt, &alt, &null, alpha, exec)?);
    }
    Ok(GridReport { alpha, n_max, rows })
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    method: &'a str,
    p0: f64,
    p1: f64,
    truth: &'a str,
    n_max: u32,
    alpha: f64,
    terminal_power: f64,
    type1_rate: f64,
    expected_stop: f64,
    se_power: f64,
    se_type1: f64,
    trajectories: usize,
}

/// One CSV line per (method, alternative) with power from the alternative
/// data and Type-I error from the null data.
pub fn write_summary_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        let alt = &r.alternative;
        w.serialize(SummaryLine {
            method: &r.method,
            p0: r.p0,
            p1: r.p1,
            truth: Truth::Alternative.as_str(),
            n_max: alt.n_max,
            alpha: r.alpha,
            terminal_power: alt.terminal_power(),
            type1_rate: r.null.rejection_rate,
            expected_stop: alt.expected_stop,
            se_power: binomial_se(alt.terminal_power(), alt.trajectories),
            se_type1: r.null.se_rejection,
            trajectories: alt.trajectories,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cumulative_csv(path: &Path, report: &PowerReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["step", "fraction_stopped"])?;
    for (k, f) in report.cumulative_power.iter().enumerate() {
        w.write_record([(k + 1).to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportLine<'a> {
    method: &'a str,
    p0: f64,
    p1: f64,
    truth: &'a str,
    n_max: u32,
    alpha: f64,
    trajectories: usize,
    rejections: usize,
    acceptances: usize,
    exhausted: usize,
    rejection_rate: f64,
    se_rejection: f64,
    terminal_power: f64,
    expected_stop: f64,
    mean_stop: f64,
}

/// A single report as a one-row CSV; `p0`, `p1` are the rates the data
/// were drawn from.
pub fn write_report_csv(path: &Path, method: &str, p0: f64, p1: f64, alpha: f64, report: &PowerReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.serialize(ReportLine {
        method,
        p0,
        p1,
        truth: report.truth.as_str(),
        n_max: report.n_max,
        alpha,
        trajectories: report.trajectories,
        rejections: report.rejections,
        acceptances: report.acceptances,
        exhausted: report.exhausted,
        rejection_rate: report.rejection_rate,
        se_rejection: report.se_rejection,
        terminal_power: report.terminal_power(),
        expected_stop: report.expected_stop,
        mean_stop: report.mean_stop,
    })?;
    w.flush()?;
    Ok(())
}

/// File name of the cumulative-power CSV for one grid row.
pub fn cumulative_file_name(row: &GridRow) -> String {
    format!(
        "cumulative_{}_{:.2}_{:.2}.csv",
        row.method.to_lowercase(),
        row.p0,
        row.p1
    )
}

pub fn write_grid(dir: &Path, report: &GridReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary_csv(&dir.join("summary.csv"), &report.rows)?;
    for row in &report.rows {
        write_cumulative_csv(&dir.join(cumulative_file_name(row)), &row.alternative)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Never;
    impl Method for Never {
        type State = ();
        fn name(&self) -> &str {
            "never"
        }
        fn start(&self, _: usize) {}
        fn step(&self, _: &mut (), _: bool, _: bool) -> Decision {
            Decision::Continue
        }
    }

    struct AtOne;
    impl Method for AtOne {
        type State = ();
        fn name(&self) -> &str {
            "at_one"
        }
        fn start(&self, _: usize) {}
        fn step(&self, _: &mut (), _: bool, _: bool) -> Decision {
            Decision::RejectNull
        }
    }

    #[test]
    fn trajectory_contracts() {
        let t = generate_trajectories(1.0, 1.0, 7, 5, 3).unwrap();
        assert!((0..5).all(|i| t.get(i).iter().all(|&p| p == (true, true))));
        let a = generate_trajectories(0.3, 0.5, 50, 40, 9).unwrap();
        let b = generate_trajectories_with(0.3, 0.5, 50, 40, 9, Truth::Alternative, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let small = generate_trajectories(0.3, 0.5, 50, 10, 9).unwrap();
        assert_eq!(small.get(7), a.get(7));
        let c = generate_trajectories(0.3, 0.5, 50, 40, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn z1_frequency() {
        let t = generate_trajectories(0.2, 0.5, 1, 10_000, 1).unwrap();
        let ones = (0..t.len()).filter(|&i| t.get(i)[0].1).count();
        let f = ones as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.015, "{f}");
    }

    #[test]
    fn dummy_methods() {
        let t = generate_trajectories(0.5, 0.5, 12, 30, 0).unwrap();
        let never = evaluate_method(&Never, &t, Exec::Parallel);
        assert!(never
            .iter()
            .all(|r| r.stop.is_none() && r.decision == Decision::BudgetExhausted));
        let rep = power_report(&never, 12).unwrap();
        assert_eq!(rep.expected_stop, 12.0);
        assert_eq!(rep.terminal_power(), 0.0);
        let one = evaluate_method(&AtOne, &t, Exec::Sequential);
        assert!(one.iter().all(|r| r.stop == Some(1)));
    }

    #[test]
    fn two_record_report() {
        let rec = |i, s| StopRecord {
            trajectory: i,
            stop: Some(s),
            decision: Decision::RejectNull,
            truth: Truth::Alternative,
        };
        let rep = power_report(&[rec(0, 1), rec(1, 2)], 2).unwrap();
        assert_eq!(rep.cumulative_power, vec![0.5, 1.0]);
        assert_abs_diff_eq!(rep.expected_stop, 1.5);
        assert!(power_report(&[], 2).is_err());
    }

    #[test]
    fn grid_has_45_alternatives() {
        let g = alternative_grid();
        assert_eq!(g.len(), 45);
        assert_eq!((g[0].p0, g[0].p1), (0.05, 0.15));
        let last = g.last().unwrap();
        assert_abs_diff_eq!(last.p0, 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(last.p1, 0.95, epsilon = 1e-15);
        assert!(g.iter().all(|h| h.p1 > h.p0));
    }

    #[test]
    fn sprt_method_truncates() {
        let spec = SprtSpec::oracle(0.4, 0.45, 0.05, 0.05).unwrap();
        let t = generate_trajectories(0.4, 0.45, 5, 50, 1).unwrap();
        let rec = evaluate_method(&SprtMethod { spec, n_max: 5 }, &t, Exec::Parallel);
        assert!(rec.iter().all(|r| r.decision == Decision::BudgetExhausted));
    }
}
