//! Rule files and session journals.
//!
//! Rules are stored as canonical JSON: keys sorted, no whitespace, floats
//! in shortest round-trip form. The SHA-256 digest of the canonical
//! document (with the digest field removed) is stored in the provenance
//! block. Journals are JSON lines, one event per line.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hypothesis::{GridSpacing, NullGrid};
use crate::region::{Boundary, StepRegion};
use crate::runtime::{open_session, Decision, Mode, Session};
use crate::synthesis::{DecisionRule, Provenance, RiskBudget};

pub const RULE_VERSION: &str = "step-rule/1";

fn regions_value(regions: &[StepRegion]) -> Value {
    Value::Array(
        regions
            .iter()
            .map(|r| serde_json::to_value(r.boundaries()).expect("boundaries serialize"))
            .collect(),
    )
}

fn rule_body(rule: &DecisionRule) -> Value {
    let p = &rule.provenance;
    json!({
        "version": RULE_VERSION,
        "alpha_star": rule.alpha_star,
        "n_max": rule.n_max,
        "budget": rule.budget.per_step(),
        "null_grid": { "points": rule.grid.points(), "epsilon": rule.grid.epsilon() },
        "reject": regions_value(&rule.reject),
        "accept": regions_value(&rule.accept),
        "provenance": {
            "tool": p.tool,
            "tool_version": p.tool_version,
            "grid_spacing": p.grid_spacing,
            "accept_budget": p.accept_budget.as_ref().map(|b| json!({
                "alpha_star": b.alpha(),
                "per_step": b.per_step(),
            })),
            "certified_reject_risk": p.certified_reject_risk,
            "certified_accept_risk": p.certified_accept_risk,
        },
    })
}

fn canonical(v: &Value) -> String {
    // serde_json's default map is ordered by key
    serde_json::to_string(v).expect("JSON values always serialize")
}

fn digest_of(body: &Value) -> String {
    let d = Sha256::digest(canonical(body).as_bytes());
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 over every field of the canonical document except the
/// digest itself.
pub fn rule_digest(rule: &DecisionRule) -> String {
    digest_of(&rule_body(rule))
}

pub fn serialize_rule(rule: &DecisionRule) -> String {
    let mut body = rule_body(rule);
    let digest = digest_of(&body);
    body["provenance"]["digest"] = Value::String(digest);
    canonical(&body)
}

pub fn write_rule(path: &Path, rule: &DecisionRule) -> Result<()> {
    std::fs::write(path, serialize_rule(rule))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ParsedRule {
    pub rule: DecisionRule,
    pub digest: String,
    /// Non-fatal issues, such as a digest mismatch outside strict mode.
    pub warnings: Vec<String>,
}

struct Cursor<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Cursor<'a> {
    fn root(value: &'a Value) -> Self {
        Cursor {
            value,
            path: String::from("$"),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path.clone(), msg)
    }

    fn object(&self) -> Result<&'a Map<String, Value>> {
        self.value.as_object().ok_or_else(|| self.err("expected an object"))
    }

    fn field(&self, key: &str) -> Result<Cursor<'a>> {
        let obj = self.object()?;
        let path = format!("{}.{key}", self.path);
        obj.get(key)
            .map(|value| Cursor {
                value,
                path: path.clone(),
            })
            .ok_or_else(|| Error::parse(path, "missing field"))
    }

    fn array(&self) -> Result<Vec<Cursor<'a>>> {
        let items = self.value.as_array().ok_or_else(|| self.err("expected an array"))?;
        Ok(items
            .iter()
            .enumerate()
            .map(|(i, value)| Cursor {
                value,
                path: format!("{}[{i}]", self.path),
            })
            .collect())
    }

    fn f64(&self) -> Result<f64> {
        self.value.as_f64().ok_or_else(|| self.err("expected a number"))
    }

    fn u32(&self) -> Result<u32> {
        self.value
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| self.err("expected a nonnegative integer"))
    }

    fn str(&self) -> Result<&'a str> {
        self.value.as_str().ok_or_else(|| self.err("expected a string"))
    }

    fn f64s(&self) -> Result<Vec<f64>> {
        self.array()?.iter().map(Cursor::f64).collect()
    }

    fn rewrap(&self, e: Error) -> Error {
        match e {
            Error::Domain(m) | Error::Contract(m) => self.err(m),
            Error::Parse { path, message } => Error::parse(format!("{}: {path}", self.path), message),
            other => other,
        }
    }
}

fn parse_regions(c: &Cursor, n_max: u32) -> Result<Vec<StepRegion>> {
    let steps = c.array()?;
    if steps.len() != n_max as usize {
        return Err(c.err(format!("expected {n_max} steps, found {}", steps.len())));
    }
    steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            let boundaries = step
                .array()?
                .iter()
                .map(|b| {
                    Ok(Boundary {
                        s0: b.field("s0")?.u32()?,
                        t: b.field("t")?.u32()?,
                        phi: b.field("phi")?.f64()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            StepRegion::from_boundaries(k as u32 + 1, &boundaries).map_err(|e| step.rewrap(e))
        })
        .collect()
}

/// Parses and validates a rule document. A digest mismatch is a warning
/// unless `strict` is set.
pub fn parse_rule(text: &str, strict: bool) -> Result<ParsedRule> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    let root = Cursor::root(&doc);
    let version = root.field("version")?;
    if version.str()? != RULE_VERSION {
        return Err(version.err(format!(
            "unsupported version {:?}, expected {RULE_VERSION:?}",
            version.str()?
        )));
    }
    let alpha_star = root.field("alpha_star")?.f64()?;
    let n_max_c = root.field("n_max")?;
    let n_max = n_max_c.u32()?;
    if n_max == 0 {
        return Err(n_max_c.err("must be at least 1"));
    }
    let budget_c = root.field("budget")?;
    let budget = RiskBudget::new(alpha_star, budget_c.f64s()?).map_err(|e| budget_c.rewrap(e))?;
    if budget.n_max() != n_max {
        return Err(budget_c.err(format!("expected {n_max} entries, found {}", budget.n_max())));
    }
    let grid_c = root.field("null_grid")?;
    let grid = NullGrid::new(grid_c.field("points")?.f64s()?, grid_c.field("epsilon")?.f64()?)
        .map_err(|e| grid_c.rewrap(e))?;
    let reject = parse_regions(&root.field("reject")?, n_max)?;
    let accept = parse_regions(&root.field("accept")?, n_max)?;

    let prov = root.field("provenance")?;
    let spacing_c = prov.field("grid_spacing")?;
    let grid_spacing: GridSpacing =
        serde_json::from_value(spacing_c.value.clone()).map_err(|e| spacing_c.err(e.to_string()))?;
    let ab = prov.field("accept_budget")?;
    let accept_budget = if ab.value.is_null() {
        None
    } else {
        let b =
            RiskBudget::new(ab.field("alpha_star")?.f64()?, ab.field("per_step")?.f64s()?).map_err(|e| ab.rewrap(e))?;
        if b.n_max() != n_max {
            return Err(ab.err("accept budget length differs from n_max"));
        }
        Some(b)
    };
    let provenance = Provenance {
        tool: prov.field("tool")?.str()?.to_string(),
        tool_version: prov.field("tool_version")?.str()?.to_string(),
        grid_spacing,
        accept_budget,
        certified_reject_risk: prov.field("certified_reject_risk")?.f64s()?,
        certified_accept_risk: prov.field("certified_accept_risk")?.f64s()?,
    };
    let rule = DecisionRule {
        alpha_star,
        n_max,
        budget,
        grid,
        reject,
        accept,
        provenance,
    };

    let digest = rule_digest(&rule);
    let mut warnings = Vec::new();
    let stored = prov.field("digest")?;
    let stored_digest = stored.str()?;
    if stored_digest != digest {
        let msg = format!("digest mismatch: stored {stored_digest}, computed {digest}");
        if strict {
            return Err(stored.err(msg));
        }
        warnings.push(msg);
    }
    Ok(ParsedRule { rule, digest, warnings })
}

pub fn read_rule(path: &Path, strict: bool) -> Result<ParsedRule> {
    let text = std::fs::read_to_string(path)?;
    parse_rule(&text, strict).map_err(|e| match e {
        Error::Parse { path: p, message } => Error::parse(format!("{}: {p}", path.display()), message),
        other => other,
    })
}

/// Reads a budget as a JSON array of per-step values, or as numbers
/// separated by whitespace or commas.
pub fn parse_budget(text: &str, alpha_star: f64) -> Result<RiskBudget> {
    let trimmed = text.trim();
    let values: Vec<f64> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| Error::parse("budget", e.to_string()))?
    } else {
        trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .enumerate()
            .map(|(i, s)| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(format!("budget[{i}]"), format!("{s:?}: {e}")))
            })
            .collect::<Result<_>>()?
    };
    RiskBudget::new(alpha_star, values)
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// First journal line: what is needed to rebuild the session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenEvent {
    pub session: String,
    pub mode: Mode,
    pub seed: u64,
    pub rule_digest: String,
    pub created: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEvent {
    pub step: u32,
    pub z0: u8,
    pub z1: u8,
    pub decision: Decision,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum JournalLine {
    Open(OpenEvent),
    Trial(TrialEvent),
}

/// Append-only JSON-lines writer. Each event is flushed and synced before
/// `append` returns.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Journal {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Creates a new journal whose first line is `open`.
    pub fn create(path: &Path, open: &OpenEvent) -> Result<Self> {
        let mut j = Journal::open(path)?;
        j.write_line(&JournalLine::Open(open.clone()))?;
        Ok(j)
    }

    /// Reopens an existing journal for appending, first cutting off an
    /// unfinished final line so the next event starts on a fresh line.
    pub fn resume(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |k| k + 1);
        if keep < bytes.len() {
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(keep as u64)?;
            f.sync_data()?;
        }
        Journal::open(path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_line(&mut self, line: &JournalLine) -> Result<()> {
        let mut text = serde_json::to_string(line).expect("events serialize");
        text.push('\n');
        self.file.write_all(text.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn append(&mut self, event: &TrialEvent) -> Result<()> {
        self.write_line(&JournalLine::Trial(*event))
    }
}

/// Convenience for a single event; opens, appends and closes.
pub fn journal_append(path: &Path, event: &TrialEvent) -> Result<()> {
    Journal::open(path)?.append(event)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JournalContents {
    pub open: Option<OpenEvent>,
    pub trials: Vec<TrialEvent>,
}

/// Reads a journal. A final line without its newline is an interrupted
/// write and is ignored; any other malformed line is an error.
pub fn read_journal(path: &Path) -> Result<JournalContents> {
    let bytes = std::fs::read(path)?;
    let label = path.display().to_string();
    // everything after the last newline is an unfinished write
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(k) => &bytes[..k],
        None => &bytes[..0],
    };
    let mut out = JournalContents::default();
    for (i, line) in complete.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let at = || format!("{label}:{}", i + 1);
        let parsed = std::str::from_utf8(line)
            .ok()
            .and_then(|s| serde_json::from_str::<JournalLine>(s).ok())
            .ok_or_else(|| Error::parse(at(), "malformed journal event"))?;
        match parsed {
            JournalLine::Open(o) if i == 0 => out.open = Some(o),
            JournalLine::Open(_) => return Err(Error::parse(at(), "open event after the first line")),
            JournalLine::Trial(t) => out.trials.push(t),
        }
    }
    Ok(out)
}

/// Rebuilds a session by re-running every journaled trial. Aborts at the
/// first event whose step or decision disagrees with the recomputation.
pub fn journal_replay(rule: Arc<DecisionRule>, mode: Mode, seed: u64, events: &[TrialEvent]) -> Result<Session> {
    let mut session = open_session(rule, mode, seed);
    for (k, e) in events.iter().enumerate() {
        let expected = k as u32 + 1;
        if e.step != expected {
            return Err(Error::parse(
                format!("event {}", k + 1),
                format!("step {} out of sequence, expected {expected}", e.step),
            ));
        }
        let recomputed = session.record_pair(i64::from(e.z0), i64::from(e.z1))?;
        if recomputed != e.decision {
            return Err(Error::JournalDivergence {
                step: e.step,
                recorded: e.decision,
                recomputed,
            });
        }
    }
    Ok(session)
}
