//! Library results checked against small independent computations:
//! brute-force enumeration, hand-solved programs and closed forms.

use approx::assert_abs_diff_eq;
use seqcompare::baselines::{barnard_p_value, BarnardTable, ContingencyTable};
use seqcompare::hypothesis::NullGrid;
use seqcompare::region::Side;
use seqcompare::synthesis::{compress, synthesize_rule, synthesize_side, uniform_budget, RiskBudget, SynthesisOptions};

fn choose(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn pmf(n: u32, k: u32, p: f64) -> f64 {
    choose(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Pooled statistic written out from its definition.
fn statistic(n: u32, a: u32, b: u32) -> f64 {
    let (n, a, b) = (f64::from(n), f64::from(a), f64::from(b));
    let pool = (a + b) / (2.0 * n);
    if pool == 0.0 || pool == 1.0 {
        0.0
    } else {
        (b / n - a / n) / (2.0 * pool * (1.0 - pool) / n).sqrt()
    }
}

fn brute_barnard(n: u32, s0: u32, s1: u32, grid: usize) -> f64 {
    let t = statistic(n, s0, s1);
    (0..grid)
        .map(|g| {
            let p = g as f64 / (grid - 1) as f64;
            let mut tail = 0.0;
            for a in 0..=n {
                for b in 0..=n {
                    if statistic(n, a, b) >= t - 1e-10 {
                        tail += pmf(n, a, p) * pmf(n, b, p);
                    }
                }
            }
            tail
        })
        .fold(0.0, f64::max)
        .min(1.0)
}

#[test]
fn barnard_matches_brute_force_at_n8() {
    let table = BarnardTable::new(8, 99).unwrap();
    for a in 0..=8 {
        for b in 0..=8 {
            let want = brute_barnard(8, a, b, 99);
            let direct = barnard_p_value(ContingencyTable::new(8, a, b).unwrap(), 99).unwrap();
            assert_abs_diff_eq!(direct, want, epsilon = 1e-12);
            assert_abs_diff_eq!(table.p_value(a, b), want, epsilon = 1e-12);
        }
    }
}

#[test]
fn barnard_regression_value() {
    // frozen from the brute-force oracle above
    let p = barnard_p_value(ContingencyTable::new(8, 1, 7).unwrap(), 99).unwrap();
    assert_abs_diff_eq!(p, brute_barnard(8, 1, 7, 99), epsilon = 1e-12);
    assert_abs_diff_eq!(p, BARNARD_8_1_7, epsilon = 1e-9);
}

/// attained at p = 1/2: 137 of the 4^8 equally likely outcome sequences
const BARNARD_8_1_7: f64 = 137.0 / 65536.0;

/// Best dominated threshold representation of one column, by trying
/// every threshold and the largest admissible phi for each.
fn best_column(col: &[f64]) -> (usize, f64, f64) {
    let side = col.len();
    let mut best: Option<(usize, f64, f64)> = None;
    for t in 0..=side {
        let tail_ok = col[(t + 1).min(side)..].iter().all(|&v| v >= 1.0);
        if !tail_ok {
            continue;
        }
        let phi = if t < side { col[t].min(1.0) } else { 0.0 };
        let kept = phi + col[(t + 1).min(side)..].len() as f64;
        let loss = col.iter().sum::<f64>() - kept;
        if best.is_none_or(|b| loss < b.2 - 1e-15) {
            best = Some((t, phi, loss));
        }
    }
    best.unwrap()
}

#[test]
fn compression_matches_enumeration() {
    let col = [0.0, 0.0, 0.6, 0.2, 1.0];
    let (t, phi, loss) = best_column(&col);
    assert_eq!((t, phi), (3, 0.2));
    assert_abs_diff_eq!(loss, 0.6, epsilon = 1e-15);

    // place the column at s0 = 0 of a step-4 weight table; other columns empty
    let n = 4;
    let mut w = vec![0.0; 25];
    w[..5].copy_from_slice(&col);
    let (region, got_loss) = compress(&w, n).unwrap();
    assert_eq!(region.threshold(0), (3, 0.2));
    assert_abs_diff_eq!(got_loss, 0.6, epsilon = 1e-12);
    for a in 1..=n {
        assert_eq!(region.threshold(a).1, 0.0);
    }
    // the region never exceeds the weights it compresses
    for (k, r) in region.weights(Side::Reject).iter().enumerate() {
        assert!(*r <= w[k] + 1e-15);
    }

    // a few more columns, each against the enumeration
    let cases: [[f64; 5]; 4] = [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.7],
        [0.0, 0.3, 1.0, 1.0, 1.0],
        [0.5, 0.0, 0.9, 1.0, 1.0],
    ];
    for col in cases {
        let mut w = vec![0.0; 25];
        w[..5].copy_from_slice(&col);
        let (region, loss) = compress(&w, n).unwrap();
        let (_, _, want_loss) = best_column(&col);
        assert_abs_diff_eq!(loss, want_loss, epsilon = 1e-12);
        let kept: f64 = (0..=n).map(|b| region.lookup(0, b)).sum();
        assert_abs_diff_eq!(kept, col.iter().sum::<f64>() - want_loss, epsilon = 1e-12);
    }
}

#[test]
fn two_step_program_solved_by_hand() {
    // one null at 1/2, budget 0.025 per step
    let grid = NullGrid::new(vec![0.5], 0.0).unwrap();
    let budget = uniform_budget(0.05, 2).unwrap();
    let side = synthesize_side(&budget, &grid, &SynthesisOptions::default()).unwrap();

    // step 1: only (0, 1) leads, mass 1/4, so w = 0.025 / 0.25
    let r1 = &side.regions[0];
    assert_abs_diff_eq!(r1.lookup(0, 1), 0.1, epsilon = 1e-8);
    assert_eq!(r1.lookup(0, 0), 0.0);
    assert_eq!(r1.lookup(1, 1), 0.0);

    // step 2 masses after removing 0.025 from (0, 1):
    // (0,1) 0.11875, (0,2) 0.05625, (1,2) 0.11875. Maximizing the stopped
    // state count under a 0.025 knapsack fills the lightest state first.
    let r2 = &side.regions[1];
    assert_abs_diff_eq!(r2.lookup(0, 2), 0.025 / 0.05625, epsilon = 1e-8);
    assert_eq!(r2.lookup(0, 1), 0.0);
    assert_eq!(r2.lookup(1, 2), 0.0);
    assert_abs_diff_eq!(side.trace[1][0], 0.05, epsilon = 1e-8);
}

#[test]
fn first_step_budget_dominates() {
    // with a single null at 1/2 the only leading state at step 1 has mass
    // 1/4, so the step-1 stop probability is min(1, 4 * budget)
    let grid = NullGrid::new(vec![0.5], 0.0).unwrap();
    for first in [0.01, 0.05, 0.2, 0.3] {
        let budget = RiskBudget::new(0.3f64.max(first), vec![first, 0.3f64.max(first) - first]).unwrap();
        let side = synthesize_side(&budget, &grid, &SynthesisOptions::default()).unwrap();
        let want = (4.0 * first).min(1.0);
        assert_abs_diff_eq!(side.regions[0].lookup(0, 1), want, epsilon = 1e-8);
    }
}

/// Exact cumulative reject-side stopping probability through each step,
/// summing over every full-length outcome sequence.
fn enumerate_risk(rule: &seqcompare::synthesis::DecisionRule, p: f64) -> Vec<f64> {
    let n_max = rule.n_max;
    let mut out = vec![0.0; n_max as usize];
    for code in 0..4u64.pow(n_max) {
        let (mut s0, mut s1) = (0, 0);
        let mut prob = 1.0;
        let mut stopped_by = vec![0.0; n_max as usize];
        let (mut alive, mut stopped) = (1.0, 0.0);
        for n in 1..=n_max {
            let pair = (code >> (2 * (n - 1))) & 3;
            let (z0, z1) = (pair & 1 == 1, pair & 2 == 2);
            s0 += u32::from(z0);
            s1 += u32::from(z1);
            prob *= if z0 { p } else { 1.0 - p } * if z1 { p } else { 1.0 - p };
            let r = rule.stop_probability(Side::Reject, s0, s1, n);
            stopped += alive * r;
            alive *= 1.0 - r;
            stopped_by[n as usize - 1] = stopped;
        }
        for (o, v) in out.iter_mut().zip(&stopped_by) {
            *o += prob * v;
        }
    }
    out
}

#[test]
fn certified_risk_matches_enumeration() {
    let n_max = 5;
    let alpha = 0.05;
    let rule = synthesize_rule(alpha, n_max, &uniform_budget(alpha, n_max).unwrap(), Some(9)).unwrap();
    for &p in rule.grid.points() {
        let risk = enumerate_risk(&rule, p);
        for n in 1..=n_max {
            assert!(risk[n as usize - 1] <= rule.budget.cumulative(n) + 1e-9, "p {p} n {n}");
        }
    }
}
