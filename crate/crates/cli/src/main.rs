use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use seqcompare::baselines::{bonferroni_combine, sprt_step, SprtSpec};
use seqcompare::exec::Exec;
use seqcompare::hypothesis::worst_case_null;
use seqcompare::io::{
    journal_replay, parse_budget, read_journal, read_rule, rule_digest, unix_millis, write_rule, Journal, OpenEvent,
    TrialEvent,
};
use seqcompare::rng::mix64;
use seqcompare::runtime::{open_session, Decision, Mode};
use seqcompare::sim::{
    evaluate_method, generate_trajectories_with, grid_experiment, power_report, write_cumulative_csv, write_grid,
    write_report_csv, StepMethod, Truth,
};
use seqcompare::synthesis::{synthesize_rule_with, uniform_budget, DecisionRule, SynthesisOptions};
use seqcompare::Error;

#[derive(Parser)]
#[command(
    name = "seqcompare",
    version,
    about = "Sequential comparison of two Bernoulli policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a stopping rule and write it as canonical JSON.
    Synth {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n_max: u32,
        /// `uniform`, or `file:<path>` with one per-step budget per entry
        #[arg(long, default_value = "uniform")]
        budget: String,
        /// Size of the null grid; defaults to a value scaled with n_max.
        #[arg(long)]
        nulls: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo power (or size) of a rule at one hypothesis point.
    Simulate {
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        p1: f64,
        /// Draw the data from the worst-case null for (p0, p1) instead.
        #[arg(long)]
        null_worst_case: bool,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full 45-alternative comparison against the SPRT oracle.
    Grid {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n_max: u32,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        null_trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a rule live: reads "z0 z1" lines, prints a decision after each.
    Eval {
        #[arg(long)]
        rule: PathBuf,
        #[arg(long, default_value = "randomized")]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
        /// Journal to append to; an existing journal is resumed.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Truncated SPRT on stdin pairs.
    Sprt {
        #[arg(long)]
        p0: f64,
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        n_max: u32,
        /// Set the rejection threshold to exact size alpha at n_max
        /// (one-sided; --beta is ignored).
        #[arg(long)]
        calibrated: bool,
    },
    /// Bonferroni combination of per-task decisions.
    Combine {
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        decisions: Vec<String>,
    },
    /// HTTP session service.
    Serve {
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long)]
        journal_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 when a self-check inside the library failed.
fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}

fn run(cmd: Command) -> seqcompare::Result<()> {
    match cmd {
        Command::Synth {
            alpha,
            n_max,
            budget,
            nulls,
            out,
        } => synth(alpha, n_max, &budget, nulls, &out),
        Command::Simulate {
            rule,
            p0,
            p1,
            null_worst_case,
            trials,
            seed,
            out,
        } => simulate(&rule, p0, p1, null_worst_case, trials, seed, &out),
        Command::Grid {
            alpha,
            n_max,
            trials,
            null_trials,
            seed,
            out_dir,
        } => grid(alpha, n_max, trials, null_trials, seed, &out_dir),
        Command::Eval {
            rule,
            mode,
            seed,
            journal,
        } => eval(&rule, mode, seed, journal.as_deref()),
        Command::Sprt {
            p0,
            p1,
            alpha,
            beta,
            n_max,
            calibrated,
        } => sprt(p0, p1, alpha, beta, n_max, calibrated),
        Command::Combine { levels, decisions } => combine(&levels, &decisions),
        Command::Serve {
            rule,
            port,
            journal_dir,
            host,
        } => serve(&rule, &host, port, &journal_dir),
    }
}

fn load_rule(path: &Path) -> seqcompare::Result<DecisionRule> {
    let parsed = read_rule(path, false)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed.rule)
}

fn synthesize(alpha: f64, n_max: u32, budget: &str, nulls: Option<usize>) -> seqcompare::Result<DecisionRule> {
    let budget = match budget {
        "uniform" => uniform_budget(alpha, n_max)?,
        other => match other.strip_prefix("file:") {
            Some(path) => parse_budget(&std::fs::read_to_string(path)?, alpha)?,
            None => {
                return Err(Error::domain(format!(
                    "budget must be `uniform` or `file:<path>`, got {other:?}"
                )))
            }
        },
    };
    let opts = SynthesisOptions {
        grid_size: nulls,
        ..SynthesisOptions::default()
    };
    let synthesis = synthesize_rule_with(alpha, n_max, &budget, &opts)?;
    let loss: f64 = synthesis.reject.steps.iter().map(|s| s.compression_loss).sum();
    let rule = synthesis.rule;
    let p = &rule.provenance;
    eprintln!(
        "synthesized n_max = {n_max} over {} nulls; certified risk reject {:.6e} accept {:.6e}; compression loss {loss:.3e}",
        rule.grid.len(),
        p.certified_reject_risk.last().copied().unwrap_or(0.0),
        p.certified_accept_risk.last().copied().unwrap_or(0.0),
    );
    Ok(rule)
}

fn synth(alpha: f64, n_max: u32, budget: &str, nulls: Option<usize>, out: &Path) -> seqcompare::Result<()> {
    let rule = synthesize(alpha, n_max, budget, nulls)?;
    write_rule(out, &rule)?;
    println!("{}", rule_digest(&rule));
    Ok(())
}

fn cumulative_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_cumulative.csv"))
}

fn simulate(
    rule: &Path,
    p0: f64,
    p1: f64,
    null_worst_case: bool,
    trials: usize,
    seed: u64,
    out: &Path,
) -> seqcompare::Result<()> {
    let rule = Arc::new(load_rule(rule)?);
    let (q0, q1, truth) = if null_worst_case {
        let q = worst_case_null(p0, p1)?;
        (q, q, Truth::Null)
    } else if p1 > p0 {
        (p0, p1, Truth::Alternative)
    } else {
        (p0, p1, Truth::Null)
    };
    let data = generate_trajectories_with(q0, q1, rule.n_max, trials, seed, truth, Exec::default())?;
    let (alpha, n_max) = (rule.alpha_star, rule.n_max);
    let method = StepMethod {
        rule,
        mode: Mode::Randomized,
        seed,
    };
    let report = power_report(&evaluate_method(&method, &data, Exec::default()), n_max)?;
    write_report_csv(out, "STEP", q0, q1, alpha, &report)?;
    write_cumulative_csv(&cumulative_path(out), &report)?;
    println!(
        "{} p0={q0} p1={q1} rejection_rate={:.4} (se {:.4}) expected_stop={:.2}",
        truth.as_str(),
        report.rejection_rate,
        report.se_rejection,
        report.expected_stop
    );
    Ok(())
}

fn grid(
    alpha: f64,
    n_max: u32,
    trials: usize,
    null_trials: usize,
    seed: u64,
    out_dir: &Path,
) -> seqcompare::Result<()> {
    let rule = synthesize(alpha, n_max, "uniform", None)?;
    std::fs::create_dir_all(out_dir)?;
    write_rule(&out_dir.join("rule.json"), &rule)?;
    let report = grid_experiment(Arc::new(rule), trials, null_trials, seed, Exec::default())?;
    write_grid(out_dir, &report)?;
    let worst = report
        .rows
        .iter()
        .filter(|r| r.method == "STEP")
        .map(|r| r.null.rejection_rate)
        .fold(0.0, f64::max);
    println!(
        "{} rows written to {}; worst STEP type-I rate {worst:.4}",
        report.rows.len(),
        out_dir.display()
    );
    Ok(())
}

/// Parses one "z0 z1" line; `None` for blank lines and `#` comments.
fn parse_pair(line: &str, lineno: usize) -> seqcompare::Result<Option<(i64, i64)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let bad = || {
        Error::parse(
            format!("stdin:{lineno}"),
            format!("expected two outcomes \"z0 z1\", got {line:?}"),
        )
    };
    let fields: Vec<&str> = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|f| !f.is_empty())
        .collect();
    let [a, b] = fields[..] else {
        return Err(bad());
    };
    let a = a.parse().map_err(|_| bad())?;
    let b = b.parse().map_err(|_| bad())?;
    Ok(Some((a, b)))
}

fn fresh_seed() -> u64 {
    mix64(unix_millis() ^ (u64::from(std::process::id()) << 32)) & ((1 << 53) - 1)
}

fn eval(rule_path: &Path, mode: Mode, seed: Option<u64>, journal: Option<&Path>) -> seqcompare::Result<()> {
    let rule = Arc::new(load_rule(rule_path)?);
    let digest = rule_digest(&rule);
    let (mut session, mut journal) = match journal {
        Some(path) if path.exists() && std::fs::metadata(path)?.len() > 0 => {
            let contents = read_journal(path)?;
            let open = contents
                .open
                .ok_or_else(|| Error::parse(path.display().to_string(), "journal has no open event"))?;
            if open.rule_digest != digest {
                return Err(Error::Contract(format!(
                    "journal was written for rule {}, loaded rule is {digest}",
                    open.rule_digest
                )));
            }
            if seed.is_some_and(|s| s != open.seed) || open.mode != mode {
                return Err(Error::Contract(
                    "mode or seed differs from the journal being resumed".into(),
                ));
            }
            let session = journal_replay(rule.clone(), open.mode, open.seed, &contents.trials)?;
            eprintln!("resumed {} at step {}", open.session, session.state().n);
            (session, Some(Journal::resume(path)?))
        }
        other => {
            let seed = seed.unwrap_or_else(|| {
                let s = fresh_seed();
                eprintln!("seed {s}");
                s
            });
            let journal = match other {
                Some(path) => {
                    let open = OpenEvent {
                        session: path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default(),
                        mode,
                        seed,
                        rule_digest: digest.clone(),
                        created: unix_millis(),
                    };
                    Some(Journal::create(path, &open)?)
                }
                None => None,
            };
            (open_session(rule.clone(), mode, seed), journal)
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if session.status().is_terminal() {
        writeln!(out, "{}", session.status())?;
        return Ok(());
    }
    for (k, line) in std::io::stdin().lock().lines().enumerate() {
        let Some((z0, z1)) = parse_pair(&line?, k + 1)? else {
            continue;
        };
        let decision = session.record_pair(z0, z1)?;
        if let Some(j) = journal.as_mut() {
            let r = session.history().last().expect("a trial was just recorded");
            j.append(&TrialEvent {
                step: r.step,
                z0: r.z0,
                z1: r.z1,
                decision,
                timestamp: unix_millis(),
            })?;
        }
        writeln!(out, "{decision}")?;
        out.flush()?;
        if decision.is_terminal() {
            break;
        }
    }
    Ok(())
}

fn sprt(p0: f64, p1: f64, alpha: f64, beta: f64, n_max: u32, calibrated: bool) -> seqcompare::Result<()> {
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let spec = if calibrated {
        SprtSpec::calibrated(p0, p1, alpha, n_max)?
    } else {
        SprtSpec::oracle(p0, p1, alpha, beta)?
    };
    eprintln!("thresholds: lower {} upper {}", spec.lower, spec.upper);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let (mut llr, mut n) = (0.0, 0u32);
    for (k, line) in std::io::stdin().lock().lines().enumerate() {
        let Some((z0, z1)) = parse_pair(&line?, k + 1)? else {
            continue;
        };
        let to_bool = |z: i64| match z {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::InvalidOutcome(other)),
        };
        let (next, mut decision) = sprt_step(llr, to_bool(z0)?, to_bool(z1)?, &spec);
        llr = next;
        n += 1;
        if decision == Decision::Continue && n >= n_max {
            decision = Decision::BudgetExhausted;
        }
        writeln!(out, "{decision}")?;
        out.flush()?;
        if decision.is_terminal() {
            break;
        }
    }
    Ok(())
}

fn combine(levels: &[f64], decisions: &[String]) -> seqcompare::Result<()> {
    let decisions = decisions
        .iter()
        .map(|d| d.parse())
        .collect::<seqcompare::Result<Vec<Decision>>>()?;
    let (decision, level) = bonferroni_combine(&decisions, levels)?;
    println!("{decision}");
    println!("{level}");
    Ok(())
}

fn serve(rule: &Path, host: &str, port: u16, journal_dir: &Path) -> seqcompare::Result<()> {
    let rule = load_rule(rule)?;
    let (state, report) = seqcompare_service::AppState::new(rule, journal_dir)?;
    for (path, why) in &report.skipped {
        eprintln!("warning: skipped journal {}: {why}", path.display());
    }
    eprintln!("restored {} session(s)", report.restored.len());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        seqcompare_service::serve(listener, state).await
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Invariant("risk above budget".into())), 3);
        assert_eq!(exit_code(&Error::InvalidOutcome(2)), 2);
        assert_eq!(exit_code(&Error::domain("alpha")), 2);
    }

    #[test]
    fn pair_lines() {
        assert_eq!(parse_pair("0 1", 1).unwrap(), Some((0, 1)));
        assert_eq!(parse_pair(" 1,0 ", 1).unwrap(), Some((1, 0)));
        assert_eq!(parse_pair("# note", 1).unwrap(), None);
        assert_eq!(parse_pair("", 1).unwrap(), None);
        assert!(parse_pair("1", 1).is_err());
        assert!(parse_pair("a b", 1).is_err());
    }
}
