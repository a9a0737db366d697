use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use seqcompare::io::{journal_replay, read_journal, read_rule, rule_digest};
use seqcompare::runtime::Mode;
use serde_json::{json, Value};
use tower::ServiceExt;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqcompare"))
}

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn synth(dir: &Path, n_max: u32) -> PathBuf {
    let out = dir.join(format!("rule{n_max}.json"));
    let o = run(
        &[
            "synth",
            "--alpha",
            "0.05",
            "--n-max",
            &n_max.to_string(),
            "--budget",
            "uniform",
            "--nulls",
            "15",
            "--out",
            out.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = read_rule(&out, true).unwrap();
    assert_eq!(stdout(&o).trim(), parsed.digest);
    out
}

#[test]
fn synth_with_budget_file() {
    let dir = tempfile::tempdir().unwrap();
    let budget = dir.path().join("b.txt");
    std::fs::write(&budget, "0.02, 0.01, 0.01, 0.01").unwrap();
    let out = dir.path().join("r.json");
    let spec = format!("file:{}", budget.display());
    let o = run(
        &[
            "synth",
            "--alpha",
            "0.05",
            "--n-max",
            "4",
            "--budget",
            &spec,
            "--nulls",
            "9",
            "--out",
            out.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rule = read_rule(&out, true).unwrap().rule;
    assert_eq!(rule.budget.per_step(), &[0.02, 0.01, 0.01, 0.01]);
    assert_eq!(rule.grid.len(), 9);

    // spending more than alpha is a validation error
    std::fs::write(&budget, "0.04 0.03").unwrap();
    let o = run(
        &[
            "synth",
            "--alpha",
            "0.05",
            "--n-max",
            "2",
            "--budget",
            &spec,
            "--out",
            out.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let rule = synth(dir.path(), 10);
    let r = rule.to_str().unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["synth", "--alpha", "1.5", "--n-max", "5", "--out", "x.json"], ""),
        (vec!["synth", "--alpha", "0.05"], ""),
        (vec!["eval", "--rule", r, "--seed", "1"], "0 2\n"),
        (vec!["eval", "--rule", r, "--seed", "1"], "0 1 1\n"),
        (vec!["eval", "--rule", r, "--mode", "sometimes"], ""),
        (vec!["eval", "--rule", "/nonexistent/rule.json"], ""),
        (vec!["combine", "--levels", "0.05", "--decisions", "MAYBE"], ""),
        (
            vec![
                "sprt", "--p0", "0.6", "--p1", "0.4", "--alpha", "0.05", "--beta", "0.05", "--n-max", "5",
            ],
            "",
        ),
    ];
    for (args, input) in cases {
        let o = run(&args, input);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn eval_prints_a_decision_per_pair_and_journals() {
    let dir = tempfile::tempdir().unwrap();
    let rule = synth(dir.path(), 10);
    let journal = dir.path().join("eval.jsonl");
    let args = [
        "eval",
        "--rule",
        rule.to_str().unwrap(),
        "--seed",
        "11",
        "--journal",
        journal.to_str().unwrap(),
    ];
    let o = run(&args, "1 1\n# comment\n\n0 0\n1 0\n");
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines
        .iter()
        .all(|l| ["CONTINUE", "REJECT_NULL", "ACCEPT_NULL", "BUDGET_EXHAUSTED"].contains(&l.as_str())));

    // resuming appends to the same session
    let o = run(&args, "1 1\n");
    assert!(o.status.success());
    let contents = read_journal(&journal).unwrap();
    let open = contents.open.unwrap();
    assert_eq!(open.seed, 11);
    let digest = rule_digest(&read_rule(&rule, true).unwrap().rule);
    assert_eq!(open.rule_digest, digest);
    let n = contents.trials.len();
    assert_eq!(n, if lines.last().unwrap() == "CONTINUE" { 4 } else { 3 });
    let loaded = std::sync::Arc::new(read_rule(&rule, true).unwrap().rule);
    let s = journal_replay(loaded, Mode::Randomized, 11, &contents.trials).unwrap();
    assert_eq!(s.state().n as usize, n);

    // ten ties run out the budget
    let o = run(
        &["eval", "--rule", rule.to_str().unwrap(), "--mode", "conservative"],
        &"1 1\n".repeat(12),
    );
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 10);
    assert_eq!(out.lines().last(), Some("BUDGET_EXHAUSTED"));
}

async fn service_decisions(rule_path: &Path, journal_dir: &Path, mode: &str, seed: u64, pairs: &[(u8, u8)]) -> String {
    let rule = read_rule(rule_path, true).unwrap().rule;
    let (state, _) = seqcompare_service::AppState::new(rule, journal_dir).unwrap();
    let app = seqcompare_service::router(state);
    let send = |uri: String, body: Value| {
        let app = app.clone();
        async move {
            let req = Request::post(uri)
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap();
            let resp = app.oneshot(req).await.unwrap();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            serde_json::from_slice::<Value>(&bytes).unwrap()
        }
    };
    let created = send("/sessions".into(), json!({ "mode": mode, "seed": seed })).await;
    let id = created["id"].as_str().unwrap().to_string();
    let mut out = String::new();
    for &(z0, z1) in pairs {
        let r = send(format!("/sessions/{id}/trials"), json!({ "z0": z0, "z1": z1 })).await;
        let d = r["decision"].as_str().unwrap().to_string();
        out.push_str(&d);
        out.push('\n');
        if d != "CONTINUE" {
            break;
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn service_and_eval_agree_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let rule = synth(dir.path(), 25);
    let mut stopped = 0;
    for seed in 0..12u64 {
        for mode in ["randomized", "conservative"] {
            // sequences favouring the second policy, so stops do happen
            let pairs: Vec<(u8, u8)> = (0..25u64)
                .map(|k| {
                    let h = seqcompare::rng::mix64(seed * 1000 + k);
                    (u8::from(h % 10 < 3), u8::from((h >> 8) % 10 < 8))
                })
                .collect();
            let input: String = pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
            let o = run(
                &[
                    "eval",
                    "--rule",
                    rule.to_str().unwrap(),
                    "--mode",
                    mode,
                    "--seed",
                    &seed.to_string(),
                ],
                &input,
            );
            assert!(o.status.success());
            let cli = stdout(&o);
            let svc = service_decisions(&rule, &dir.path().join(format!("j{seed}{mode}")), mode, seed, &pairs).await;
            assert_eq!(cli, svc, "seed {seed} mode {mode}");
            stopped += usize::from(cli.lines().last() == Some("REJECT_NULL"));
        }
    }
    assert!(stopped > 0);
}

#[test]
fn sprt_reads_pairs() {
    let args = [
        "sprt", "--p0", "0.3", "--p1", "0.8", "--alpha", "0.05", "--beta", "0.05", "--n-max", "6",
    ];
    let o = run(&args, &"0 1\n".repeat(10));
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().last(), Some("REJECT_NULL"));
    // (0, 1) has the largest increment, so the run stops before n_max
    assert!(out.lines().count() < 6);

    let o = run(&args, &"1 1\n".repeat(10));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 6);
    assert_eq!(out.lines().last(), Some("BUDGET_EXHAUSTED"));

    let o = run(&args, &"1 0\n".repeat(10));
    assert_eq!(stdout(&o).lines().last(), Some("ACCEPT_NULL"));

    let mut cal = args.to_vec();
    cal.push("--calibrated");
    let o = run(&cal, &"1 0\n".repeat(10));
    // the calibrated variant never accepts
    assert_eq!(stdout(&o).lines().last(), Some("BUDGET_EXHAUSTED"));
}

#[test]
fn combine_prints_decision_and_level() {
    let o = run(
        &[
            "combine",
            "--levels",
            "0.02,0.03",
            "--decisions",
            "REJECT_NULL,REJECT_NULL",
        ],
        "",
    );
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "REJECT_NULL");
    assert!((lines[1].parse::<f64>().unwrap() - 0.05).abs() < 1e-12);

    let o = run(
        &[
            "combine",
            "--levels",
            "0.02,0.03",
            "--decisions",
            "REJECT_NULL,CONTINUE",
        ],
        "",
    );
    assert_eq!(stdout(&o).lines().next(), Some("CONTINUE"));
}

#[test]
fn simulate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let rule = synth(dir.path(), 20);
    let out = dir.path().join("sim.csv");
    let base = [
        "simulate",
        "--rule",
        rule.to_str().unwrap(),
        "--p0",
        "0.3",
        "--p1",
        "0.8",
        "--trials",
        "400",
        "--seed",
        "2",
    ];
    let mut args = base.to_vec();
    args.extend(["--out", out.to_str().unwrap()]);
    let o = run(&args, "");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv_rows(&out);
    let header = rdr.remove(0);
    assert_eq!(header[0], "method");
    let row = &rdr[0];
    let col = |name: &str| row[header.iter().position(|h| h == name).unwrap()].clone();
    assert_eq!(col("truth"), "alternative");
    assert_eq!(col("trajectories"), "400");
    let rejections: f64 = col("rejections").parse().unwrap();
    assert!((col("rejection_rate").parse::<f64>().unwrap() - rejections / 400.0).abs() < 1e-12);
    let cumulative = csv_rows(&dir.path().join("sim_cumulative.csv"));
    assert_eq!(cumulative.len(), 21);

    // same seed, same numbers
    let again = dir.path().join("again.csv");
    let mut args = base.to_vec();
    args.extend(["--out", again.to_str().unwrap()]);
    run(&args, "");
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let null = dir.path().join("null.csv");
    let mut args = base.to_vec();
    args.extend(["--null-worst-case", "--out", null.to_str().unwrap()]);
    let o = run(&args, "");
    assert!(o.status.success());
    let rows = csv_rows(&null);
    let t = rows[0].iter().position(|h| h == "truth").unwrap();
    assert_eq!(rows[1][t], "null");
    let p0: f64 = rows[1][1].parse().unwrap();
    assert_eq!(rows[1][1], rows[1][2]);
    assert!(p0 > 0.3 && p0 < 0.8);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn grid_writes_summary_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let o = run(
        &[
            "grid",
            "--alpha",
            "0.05",
            "--n-max",
            "12",
            "--trials",
            "50",
            "--null-trials",
            "50",
            "--seed",
            "1",
            "--out-dir",
            out.to_str().unwrap(),
        ],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 91);
    let curves = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("cumulative_")
        })
        .count();
    assert_eq!(curves, 90);
    assert!(read_rule(&out.join("rule.json"), true).is_ok());
}
