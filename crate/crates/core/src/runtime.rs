//! Online evaluation of a synthesized rule, one paired trial at a time.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::EvalState;
use crate::error::{Error, Result};
use crate::region::{Side, StepRegion};
use crate::rng::keyed_uniform;
use crate::synthesis::DecisionRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Continue,
    RejectNull,
    AcceptNull,
    /// `n_max` trials observed without either side stopping.
    BudgetExhausted,
}

impl Decision {
    pub fn is_terminal(self) -> bool {
        self != Decision::Continue
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Continue => "CONTINUE",
            Decision::RejectNull => "REJECT_NULL",
            Decision::AcceptNull => "ACCEPT_NULL",
            Decision::BudgetExhausted => "BUDGET_EXHAUSTED",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Decision {
    type Err = Error;

    /// Accepts the display form in either case.
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            Decision::Continue,
            Decision::RejectNull,
            Decision::AcceptNull,
            Decision::BudgetExhausted,
        ];
        all.into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::domain(format!("unknown decision {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stop with the region probability, drawing from the keyed stream.
    #[default]
    Randomized,
    /// Stop only where the region probability is exactly 1.
    Conservative,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "randomized" => Ok(Mode::Randomized),
            "conservative" => Ok(Mode::Conservative),
            other => Err(Error::domain(format!("unknown mode {other:?}"))),
        }
    }
}

/// Stopping probability of `region` at `(s0, s1)` for `side`.
pub fn lookup(region: &StepRegion, side: Side, s0: u32, s1: u32) -> f64 {
    let (a, b) = side.frame(s0, s1);
    region.lookup(a, b)
}

fn stops(prob: f64, mode: Mode, seed: u64, n: u32, side: Side) -> bool {
    if prob >= 1.0 {
        return true;
    }
    match mode {
        Mode::Conservative => false,
        Mode::Randomized if prob > 0.0 => keyed_uniform(seed, side.stream(), u64::from(n)) < prob,
        Mode::Randomized => false,
    }
}

/// Decision after the trial that produced `state`. Reject is checked first.
pub fn decide(rule: &DecisionRule, mode: Mode, seed: u64, state: EvalState) -> Decision {
    let n = state.n;
    if n == 0 {
        return Decision::Continue;
    }
    for (side, decision) in [
        (Side::Reject, Decision::RejectNull),
        (Side::Accept, Decision::AcceptNull),
    ] {
        let p = rule.stop_probability(side, state.s0, state.s1, n);
        if stops(p, mode, seed, n, side) {
            return decision;
        }
    }
    if n >= rule.n_max {
        Decision::BudgetExhausted
    } else {
        Decision::Continue
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub step: u32,
    pub z0: u8,
    pub z1: u8,
    pub s0: u32,
    pub s1: u32,
    pub decision: Decision,
}

#[derive(Clone, Debug)]
pub struct Session {
    rule: Arc<DecisionRule>,
    mode: Mode,
    seed: u64,
    state: EvalState,
    history: Vec<TrialRecord>,
    status: Decision,
}

pub fn open_session(rule: Arc<DecisionRule>, mode: Mode, seed: u64) -> Session {
    Session {
        rule,
        mode,
        seed,
        state: EvalState::default(),
        history: Vec::new(),
        status: Decision::Continue,
    }
}

fn outcome(z: i64) -> Result<bool> {
    match z {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::InvalidOutcome(other)),
    }
}

impl Session {
    /// Records one paired outcome. Outcomes must be 0 or 1; a terminated
    /// session refuses further input.
    pub fn record_pair(&mut self, z0: i64, z1: i64) -> Result<Decision> {
        let (z0, z1) = (outcome(z0)?, outcome(z1)?);
        self.record(z0, z1)
    }

    pub fn record(&mut self, z0: bool, z1: bool) -> Result<Decision> {
        if self.status.is_terminal() {
            return Err(Error::Terminated(self.status));
        }
        self.state = self.state.advance(z0, z1);
        let decision = decide(&self.rule, self.mode, self.seed, self.state);
        self.status = decision;
        self.history.push(TrialRecord {
            step: self.state.n,
            z0: u8::from(z0),
            z1: u8::from(z1),
            s0: self.state.s0,
            s1: self.state.s1,
            decision,
        });
        Ok(decision)
    }

    pub fn status(&self) -> Decision {
        self.status
    }

    pub fn state(&self) -> EvalState {
        self.state
    }

    pub fn history(&self) -> &[TrialRecord] {
        &self.history
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rule(&self) -> &Arc<DecisionRule> {
        &self.rule
    }
}
