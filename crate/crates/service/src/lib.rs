//! HTTP front end for live evaluation sessions against one loaded rule.
//!
//! Every accepted trial is appended to the session's journal before the
//! response is sent, and on startup every journal in the directory is
//! replayed, so a restart loses nothing that was acknowledged.

mod error;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use seqcompare::dynamics::EvalState;
use seqcompare::io::{
    journal_replay, read_journal, rule_digest, unix_millis, Journal, OpenEvent, TrialEvent, RULE_VERSION,
};
use seqcompare::region::{Boundary, Side};
use seqcompare::runtime::{open_session, Decision, Mode, Session, TrialRecord};
use seqcompare::synthesis::DecisionRule;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use error::ApiError;

type ApiResult<T> = Result<T, ApiError>;

/// Generated seeds stay below 2^53 so JSON clients can hold them exactly.
const SEED_MASK: u64 = (1 << 53) - 1;

#[derive(Debug)]
struct LoadedRule {
    rule: Arc<DecisionRule>,
    digest: String,
}

#[derive(Debug)]
struct Entry {
    id: String,
    created: u64,
    session: Session,
    journal: Journal,
}

#[derive(Debug)]
struct Inner {
    rule: Option<LoadedRule>,
    journal_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

/// Shared server state. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct AppState {
    inner: Arc<Inner>,
}

/// What happened to each journal found at startup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BootReport {
    pub restored: Vec<String>,
    /// Journals skipped because they belong to another rule or have no
    /// open event, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl AppState {
    /// Loads `rule` and replays every journal under `journal_dir` that was
    /// written against it. A journal that disagrees with its own replay is
    /// an error: the server refuses to start rather than guess.
    pub fn new(rule: DecisionRule, journal_dir: &Path) -> seqcompare::Result<(Self, BootReport)> {
        std::fs::create_dir_all(journal_dir)?;
        let digest = rule_digest(&rule);
        let state = AppState {
            inner: Arc::new(Inner {
                rule: Some(LoadedRule {
                    rule: Arc::new(rule),
                    digest,
                }),
                journal_dir: journal_dir.to_path_buf(),
                sessions: RwLock::new(HashMap::new()),
            }),
        };
        let report = state.restore()?;
        Ok((state, report))
    }

    /// A server with no rule: every session request answers 503.
    pub fn without_rule(journal_dir: &Path) -> Self {
        AppState {
            inner: Arc::new(Inner {
                rule: None,
                journal_dir: journal_dir.to_path_buf(),
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    fn restore(&self) -> seqcompare::Result<BootReport> {
        let loaded = self.inner.rule.as_ref().expect("restore needs a rule");
        let mut report = BootReport::default();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&self.inner.journal_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut sessions = self.inner.sessions.write().expect("session map poisoned");
        for path in paths {
            let contents = read_journal(&path)?;
            let Some(open) = contents.open else {
                report.skipped.push((path, "no open event".into()));
                continue;
            };
            if open.rule_digest != loaded.digest {
                report
                    .skipped
                    .push((path, format!("written for rule {}", open.rule_digest)));
                continue;
            }
            let session = journal_replay(loaded.rule.clone(), open.mode, open.seed, &contents.trials)?;
            let journal = Journal::resume(&path)?;
            report.restored.push(open.session.clone());
            let entry = Entry {
                id: open.session.clone(),
                created: open.created,
                session,
                journal,
            };
            sessions.insert(open.session, Arc::new(Mutex::new(entry)));
        }
        Ok(report)
    }

    fn rule(&self) -> ApiResult<&LoadedRule> {
        self.inner.rule.as_ref().ok_or(ApiError::NoRule)
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
        self.inner
            .sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().expect("session map poisoned").len()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/rule", get(get_rule))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/trials", post(post_trial))
        .route("/sessions/{id}/regions", get(get_regions))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub side: Side,
    pub s0: u32,
    pub t: u32,
    pub phi: f64,
}

fn region_cells(rule: &DecisionRule, n: u32) -> Vec<RegionCell> {
    [Side::Reject, Side::Accept]
        .into_iter()
        .flat_map(|side| {
            let boundaries: Vec<Boundary> = rule.region(side, n).map(|r| r.boundaries()).unwrap_or_default();
            boundaries.into_iter().map(move |b| RegionCell {
                side,
                s0: b.s0,
                t: b.t,
                phi: b.phi,
            })
        })
        .collect()
}

/// Session as returned by the API.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResource {
    pub id: String,
    pub rule_digest: String,
    pub mode: Mode,
    pub seed: u64,
    pub created: u64,
    pub n_max: u32,
    pub state: EvalState,
    pub status: Decision,
    pub remaining: u32,
    pub history: Vec<TrialRecord>,
    /// Step whose regions decide the next trial (the last step once the
    /// session has ended at `n_max`).
    pub active_step: u32,
    pub regions: Vec<RegionCell>,
}

fn resource(entry: &Entry, digest: &str) -> SessionResource {
    let s = &entry.session;
    let rule = s.rule();
    let state = s.state();
    let active_step = (state.n + 1).min(rule.n_max);
    SessionResource {
        id: entry.id.clone(),
        rule_digest: digest.to_string(),
        mode: s.mode(),
        seed: s.seed(),
        created: entry.created,
        n_max: rule.n_max,
        state,
        status: s.status(),
        remaining: rule.n_max - state.n,
        history: s.history().to_vec(),
        active_step,
        regions: region_cells(rule, active_step),
    }
}

async fn healthz(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "rule_loaded": state.inner.rule.is_some(),
        "sessions": state.session_count(),
    }))
}

async fn get_rule(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let loaded = state.rule()?;
    let r = &loaded.rule;
    let p = &r.provenance;
    Ok(Json(json!({
        "digest": loaded.digest,
        "version": RULE_VERSION,
        "alpha_star": r.alpha_star,
        "n_max": r.n_max,
        "budget": r.budget.per_step(),
        "accept_budget": r.accept_budget().per_step(),
        "null_grid": { "points": r.grid.len(), "epsilon": r.grid.epsilon() },
        "tool": p.tool,
        "tool_version": p.tool_version,
        "certified_reject_risk": p.certified_reject_risk.last(),
        "certified_accept_risk": p.certified_accept_risk.last(),
    })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub mode: Mode,
    pub seed: Option<u64>,
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateRequest>>,
) -> ApiResult<(StatusCode, Json<SessionResource>)> {
    let loaded = state.rule()?;
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let seed = req
        .seed
        .unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0 & SEED_MASK);
    let created = unix_millis();
    let path = state.inner.journal_dir.join(format!("{id}.jsonl"));
    if path.exists() {
        return Err(ApiError::Conflict(format!("journal for {id} already exists")));
    }
    let open = OpenEvent {
        session: id.clone(),
        mode: req.mode,
        seed,
        rule_digest: loaded.digest.clone(),
        created,
    };
    let journal = Journal::create(&path, &open)?;
    let entry = Entry {
        id: id.clone(),
        created,
        session: open_session(loaded.rule.clone(), req.mode, seed),
        journal,
    };
    let out = resource(&entry, &loaded.digest);
    state
        .inner
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionResource>> {
    let loaded = state.rule()?;
    let entry = state.entry(&id)?;
    let guard = entry.lock().expect("session lock poisoned");
    Ok(Json(resource(&guard, &loaded.digest)))
}

#[derive(Debug, Deserialize)]
pub struct TrialRequest {
    pub z0: i64,
    pub z1: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResponse {
    pub step: u32,
    pub state: EvalState,
    pub decision: Decision,
}

async fn post_trial(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<TrialRequest>,
) -> ApiResult<Json<TrialResponse>> {
    state.rule()?;
    let entry = state.entry(&id)?;
    let mut guard = entry.lock().expect("session lock poisoned");
    // work on a copy so a failed journal write leaves the session as it was
    let mut next = guard.session.clone();
    let decision = next.record_pair(req.z0, req.z1)?;
    let record = *next.history().last().expect("a trial was just recorded");
    guard.journal.append(&TrialEvent {
        step: record.step,
        z0: record.z0,
        z1: record.z1,
        decision,
        timestamp: unix_millis(),
    })?;
    guard.session = next;
    Ok(Json(TrialResponse {
        step: record.step,
        state: guard.session.state(),
        decision,
    }))
}

#[derive(Debug, Deserialize)]
pub struct RegionQuery {
    pub n: i64,
}

async fn get_regions(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RegionQuery>,
) -> ApiResult<Json<Value>> {
    let loaded = state.rule()?;
    state.entry(&id)?;
    let n_max = loaded.rule.n_max;
    if q.n < 1 || q.n > i64::from(n_max) {
        return Err(ApiError::Unprocessable(format!("step {} outside 1..={n_max}", q.n)));
    }
    let n = q.n as u32;
    Ok(Json(json!({ "n": n, "regions": region_cells(&loaded.rule, n) })))
}
