use crate::error::{Error, Result};
use crate::runtime::Decision;

/// Union-bound combination of per-task tests. The combined null is
/// rejected only when every sub-test rejects; the combined level is the
/// sum of the sub-test levels.
///
/// When not every sub-test rejects, the combined decision is `Continue`
/// if any sub-test is still running, `AcceptNull` if any accepted, and
/// `BudgetExhausted` otherwise.
pub fn bonferroni_combine(decisions: &[Decision], levels: &[f64]) -> Result<(Decision, f64)> {
    if decisions.is_empty() {
        return Err(Error::domain("at least one sub-test is required"));
    }
    if decisions.len() != levels.len() {
        return Err(Error::domain(format!(
            "{} decisions but {} levels",
            decisions.len(),
            levels.len()
        )));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::domain(format!("level {l} must lie in (0, 1)")));
    }
    let level = levels.iter().sum();
    let combined = if decisions.iter().all(|&d| d == Decision::RejectNull) {
        Decision::RejectNull
    } else if decisions.contains(&Decision::Continue) {
        Decision::Continue
    } else if decisions.contains(&Decision::AcceptNull) {
        Decision::AcceptNull
    } else {
        Decision::BudgetExhausted
    };
    Ok((combined, level))
}
