use std::sync::Arc;

use seqcompare::hypothesis::{GridSpacing, NullGrid};
use seqcompare::io::{journal_replay, read_journal, Journal, OpenEvent, TrialEvent};
use seqcompare::region::{Boundary, StepRegion};
use seqcompare::runtime::{open_session, Decision, Mode};
use seqcompare::synthesis::{synthesize_rule, uniform_budget, DecisionRule, Provenance};
use seqcompare::Error;

/// Rejects with probability `phi` after a first pair (0, 1); nothing
/// else stops before step 3.
fn fractional_rule(phi: f64) -> DecisionRule {
    let mut step1: Vec<Boundary> = (0..=1).map(|s0| Boundary { s0, t: 2, phi: 0.0 }).collect();
    step1[0] = Boundary { s0: 0, t: 1, phi };
    let reject = vec![
        StepRegion::from_boundaries(1, &step1).unwrap(),
        StepRegion::empty(2),
        StepRegion::empty(3),
    ];
    DecisionRule {
        alpha_star: 0.05,
        n_max: 3,
        budget: uniform_budget(0.05, 3).unwrap(),
        grid: NullGrid::new(vec![0.5], 0.0).unwrap(),
        accept: vec![StepRegion::empty(1), StepRegion::empty(2), StepRegion::empty(3)],
        reject,
        provenance: Provenance {
            tool: "fixture".into(),
            tool_version: "0".into(),
            grid_spacing: GridSpacing::Probability,
            accept_budget: None,
            certified_reject_risk: vec![],
            certified_accept_risk: vec![],
        },
    }
}

#[test]
fn randomized_boundary_frequency() {
    let rule = Arc::new(fractional_rule(0.2));
    let sessions = 10_000;
    let rejected = (0..sessions)
        .filter(|&seed| {
            let mut s = open_session(rule.clone(), Mode::Randomized, seed);
            s.record_pair(0, 1).unwrap() == Decision::RejectNull
        })
        .count();
    let f = rejected as f64 / sessions as f64;
    // three standard errors of a 10,000-draw binomial at 0.2 is 0.012
    assert!((f - 0.2).abs() <= 0.012, "rejection frequency {f}");

    let mut conservative = open_session(rule, Mode::Conservative, 7);
    assert_eq!(conservative.record_pair(0, 1).unwrap(), Decision::Continue);
}

#[test]
fn replay_of_every_prefix() {
    let rule = Arc::new(synthesize_rule(0.05, 30, &uniform_budget(0.05, 30).unwrap(), Some(15)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let seed = 99;
    let open = OpenEvent {
        session: "s".into(),
        mode: Mode::Randomized,
        seed,
        rule_digest: "d".into(),
        created: 0,
    };
    let mut journal = Journal::create(&path, &open).unwrap();
    let mut live = open_session(rule.clone(), Mode::Randomized, seed);
    // a stream that leans toward the second policy
    let pairs: Vec<(i64, i64)> = (0..30)
        .map(|k| (i64::from(k % 3 == 0), i64::from(k % 4 != 0)))
        .collect();
    for (z0, z1) in pairs {
        let d = live.record_pair(z0, z1).unwrap();
        journal
            .append(&TrialEvent {
                step: live.state().n,
                z0: z0 as u8,
                z1: z1 as u8,
                decision: d,
                timestamp: 0,
            })
            .unwrap();
        if d.is_terminal() {
            break;
        }
    }
    let contents = read_journal(&path).unwrap();
    assert_eq!(contents.open.as_ref(), Some(&open));
    assert_eq!(contents.trials.len(), live.history().len());
    for k in 0..=contents.trials.len() {
        let replayed = journal_replay(rule.clone(), Mode::Randomized, seed, &contents.trials[..k]).unwrap();
        assert_eq!(replayed.history(), &live.history()[..k]);
    }
    // replay under another mode may diverge, but never silently
    match journal_replay(rule, Mode::Conservative, seed, &contents.trials) {
        Ok(s) => assert_eq!(s.history().len(), contents.trials.len()),
        Err(e) => assert!(matches!(e, Error::JournalDivergence { .. } | Error::Terminated(_))),
    }
}
