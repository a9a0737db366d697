use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use seqcompare::dynamics::{propagate_with, OccupancyMatrix, PropagateOptions};
use seqcompare::exec::Exec;
use seqcompare::hypothesis::build_null_grid;
use seqcompare::runtime::Mode;
use seqcompare::sim::{evaluate_method, generate_trajectories_with, StepMethod, Truth};
use seqcompare::synthesis::{synthesize_rule_with, uniform_budget, SynthesisOptions};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn propagation(c: &mut Criterion) {
    let grid = build_null_grid(0.05, 200, 100).unwrap();
    // advance an unstopped occupancy to step 150, then time one more step
    let mut occ = OccupancyMatrix::initial(grid.len());
    for _ in 0..150 {
        let w = vec![0.0; occ.width()];
        occ = propagate_with(&occ, &w, &grid, PropagateOptions::default()).unwrap();
    }
    let w = vec![0.0; occ.width()];
    let mut g = c.benchmark_group("propagate_step150_m100");
    for (name, exec) in POLICIES {
        let opts = PropagateOptions {
            exec,
            ..Default::default()
        };
        g.bench_function(name, |b| b.iter(|| propagate_with(&occ, &w, &grid, opts).unwrap()));
    }
    g.finish();
}

fn synthesis(c: &mut Criterion) {
    let budget = uniform_budget(0.05, 40).unwrap();
    let mut g = c.benchmark_group("synthesize_n40_m50");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        let opts = SynthesisOptions {
            grid_size: Some(50),
            ..Default::default()
        }
        .with_exec(exec);
        g.bench_function(name, |b| {
            b.iter(|| synthesize_rule_with(0.05, 40, &budget, &opts).unwrap())
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let opts = SynthesisOptions {
        grid_size: Some(50),
        ..Default::default()
    };
    let rule = Arc::new(
        synthesize_rule_with(0.05, 50, &uniform_budget(0.05, 50).unwrap(), &opts)
            .unwrap()
            .rule,
    );
    let method = StepMethod {
        rule,
        mode: Mode::Randomized,
        seed: 1,
    };
    let mut g = c.benchmark_group("monte_carlo_n50");
    for trials in [1_000usize, 10_000] {
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, trials), &trials, |b, &t| {
                b.iter(|| {
                    let data = generate_trajectories_with(0.4, 0.6, 50, t, 7, Truth::Alternative, exec).unwrap();
                    evaluate_method(&method, &data, exec)
                })
            });
        }
    }
    g.finish();
}

criterion_group!(benches, propagation, synthesis, monte_carlo);
criterion_main!(benches);
