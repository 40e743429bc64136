//! HTTP session service for live elicitation.
//!
//! Each session is single-writer: a mutating request takes the session into
//! `Running`, computes on a blocking thread from a copy of the state, and
//! swaps the result back in. Reads see the last committed state.

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dptradeoff::front::{FrontObservation, FrontParams};
use dptradeoff::session::{MetricRecord, StepKind};
use dptradeoff::{Error as CoreError, SessionConfig64, SessionState64};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingChoice,
    AwaitingEvaluation,
    Running,
    Done,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Config(_) | CoreError::InvalidInput(_) | CoreError::OutOfRange { .. } => StatusCode::BAD_REQUEST,
            CoreError::Oracle { .. } | CoreError::Extrapolation { .. } | CoreError::Io { .. } | CoreError::Table { .. } => {
                StatusCode::BAD_GATEWAY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = match &e {
            CoreError::Oracle { message, output } if !output.is_empty() => format!("oracle failure: {message}\n{output}"),
            _ => e.to_string(),
        };
        Self::new(status, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

struct Slot {
    created_at: u64,
    inner: Mutex<SlotInner>,
}

struct SlotInner {
    /// Last committed state.
    state: SessionState64,
    running: bool,
}

impl SlotInner {
    fn status(&self) -> Status {
        if self.running {
            Status::Running
        } else {
            status_of(&self.state)
        }
    }
}

fn status_of(state: &SessionState64) -> Status {
    if state.step >= state.config.loop_.num_steps {
        Status::Done
    } else {
        match state.next_kind() {
            StepKind::Evaluate => Status::AwaitingEvaluation,
            StepKind::Interact => Status::AwaitingChoice,
        }
    }
}

/// Persisted form of one session.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    id: String,
    created_at: u64,
    state: SessionState64,
}

pub struct AppState {
    base: SessionConfig64,
    base_seed: u64,
    counter: AtomicU64,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl AppState {
    pub fn new(base: SessionConfig64, base_seed: u64) -> Self {
        Self { base, base_seed, counter: AtomicU64::new(0), sessions: RwLock::new(HashMap::new()) }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions.read().expect("session map lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    /// Write one JSON file per session into `dir`.
    pub fn write_snapshots(&self, dir: &Path) -> Result<usize> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let sessions = self.sessions.read().expect("session map lock");
        for (id, slot) in sessions.iter() {
            let state = slot.inner.lock().expect("session lock").state.clone();
            let snap = Snapshot { id: id.clone(), created_at: slot.created_at, state };
            let path = dir.join(format!("{id}.json"));
            fs::write(&path, serde_json::to_string(&snap)?).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(sessions.len())
    }

    /// Restore sessions from the `*.json` snapshots in `dir`, if it exists.
    pub fn load_snapshots(&self, dir: &Path) -> Result<usize> {
        if !dir.is_dir() {
            return Ok(0);
        }
        let mut loaded = 0;
        for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let snap: Snapshot =
                serde_json::from_str(&text).with_context(|| format!("parsing snapshot {}", path.display()))?;
            let slot = Slot { created_at: snap.created_at, inner: Mutex::new(SlotInner { state: snap.state, running: false }) };
            self.sessions.write().expect("session map lock").insert(snap.id, Arc::new(slot));
            loaded += 1;
        }
        Ok(loaded)
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/:id", get(session_info))
        .route("/sessions/:id/query", get(get_query))
        .route("/sessions/:id/choice", post(post_choice))
        .route("/sessions/:id/evaluate", post(post_evaluate))
        .route("/sessions/:id/state", get(get_state))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(app)
}

/// Bind, serve until ctrl-c, then snapshot sessions if `snapshot_dir` is set.
pub async fn serve(bind: SocketAddr, app: Arc<AppState>, snapshot_dir: Option<PathBuf>) -> Result<()> {
    if let Some(dir) = &snapshot_dir {
        let n = app.load_snapshots(dir)?;
        if n > 0 {
            eprintln!("restored {n} session(s) from {}", dir.display());
        }
    }
    let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("cannot bind {bind}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(dir) = &snapshot_dir {
        let n = app.write_snapshots(dir)?;
        eprintln!("wrote {n} session snapshot(s) to {}", dir.display());
    }
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

/// Recursive merge; an object carrying a `type` tag replaces the base value.
fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if v.is_object() && v.get("type").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

async fn healthz() -> Json<Value> {
    Json(json!({ "ok": true }))
}

#[derive(Serialize)]
struct Created {
    id: String,
    status: Status,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Created> {
    let overrides: Value = if body.iter().all(u8::is_ascii_whitespace) { json!({}) } else { parse_body(&body)? };
    if !overrides.is_object() {
        return Err(ApiError::bad_request("config overrides must be a JSON object"));
    }
    let mut doc = serde_json::to_value(&app.base).expect("config serializes");
    merge(&mut doc, overrides);
    let config = SessionConfig64::from_json(&doc.to_string())?;
    let seed = app.base_seed.wrapping_add(app.counter.fetch_add(1, Ordering::Relaxed));
    let arm = config.loop_.arm;
    let state = tokio::task::spawn_blocking(move || SessionState64::new(config, arm, seed, None))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let status = status_of(&state);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let slot = Slot { created_at: now_unix(), inner: Mutex::new(SlotInner { state, running: false }) };
    app.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(slot));
    Ok(Json(Created { id, status }))
}

#[derive(Serialize)]
struct SessionInfo {
    id: String,
    status: Status,
    created_at: u64,
    step: usize,
    arm: String,
}

fn info(id: &str, slot: &Slot) -> SessionInfo {
    let inner = slot.inner.lock().expect("session lock");
    SessionInfo {
        id: id.to_string(),
        status: inner.status(),
        created_at: slot.created_at,
        step: inner.state.step,
        arm: inner.state.arm.to_string(),
    }
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Vec<SessionInfo>> {
    let sessions = app.sessions.read().expect("session map lock");
    let mut list: Vec<SessionInfo> = sessions.iter().map(|(id, slot)| info(id, slot)).collect();
    list.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    Json(list)
}

async fn session_info(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionInfo> {
    let slot = app.slot(&id)?;
    Ok(Json(info(&id, &slot)))
}

/// Run `f` on a copy of the session state off the async runtime, with the
/// session marked `Running`; commit the copy only if `f` succeeds.
async fn run_exclusive<T, F>(slot: Arc<Slot>, expected: Status, f: F) -> Result<(T, Status), ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut SessionState64) -> Result<T, ApiError> + Send + 'static,
{
    let mut work = {
        let mut inner = slot.inner.lock().expect("session lock");
        let status = inner.status();
        if status != expected {
            return Err(ApiError::conflict(format!(
                "session is {}, expected {}",
                status_name(status),
                status_name(expected)
            )));
        }
        inner.running = true;
        inner.state.clone()
    };
    let joined = tokio::task::spawn_blocking(move || {
        let r = f(&mut work);
        (work, r)
    })
    .await;
    let mut inner = slot.inner.lock().expect("session lock");
    inner.running = false;
    match joined {
        Ok((state, Ok(value))) => {
            inner.state = state;
            Ok((value, inner.status()))
        }
        Ok((_, Err(e))) => Err(e),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("computation failed: {e}"))),
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::AwaitingChoice => "awaiting_choice",
        Status::AwaitingEvaluation => "awaiting_evaluation",
        Status::Running => "running",
        Status::Done => "done",
    }
}

#[derive(Serialize)]
struct ServedPoint {
    p: f64,
    alpha: f64,
    epsilon: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct QueryResponse {
    curve: Option<FrontParams<f64>>,
    points: Vec<ServedPoint>,
    step: usize,
}

fn query_response(state: &SessionState64) -> Result<QueryResponse, ApiError> {
    let query = state.pending_query.as_ref().expect("pending query");
    let points = query
        .points
        .iter()
        .map(|y| {
            Ok(ServedPoint {
                p: y.p,
                alpha: y.alpha,
                epsilon: state.norm.denormalize_privacy(y.p)?,
                accuracy: state.norm.denormalize_accuracy(y.alpha),
            })
        })
        .collect::<Result<Vec<_>, CoreError>>()?;
    Ok(QueryResponse { curve: query.params, points, step: state.step })
}

async fn get_query(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<QueryResponse> {
    let slot = app.slot(&id)?;
    {
        let inner = slot.inner.lock().expect("session lock");
        if !inner.running && inner.state.pending_query.is_some() {
            return Ok(Json(query_response(&inner.state)?));
        }
    }
    let (resp, _) = run_exclusive(slot, Status::AwaitingChoice, |state| {
        state.prepare_query()?;
        query_response(state)
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceRequest {
    chosen_index: usize,
}

#[derive(Serialize)]
struct PrefSummary {
    mean_w: [f64; 2],
    ess: f64,
}

#[derive(Serialize)]
struct ChoiceResponse {
    status: Status,
    step: usize,
    pref_summary: PrefSummary,
}

async fn post_choice(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<ChoiceResponse> {
    let slot = app.slot(&id)?;
    let req: ChoiceRequest = parse_body(&body)?;
    let mut inner = slot.inner.lock().expect("session lock");
    let status = inner.status();
    if status != Status::AwaitingChoice {
        return Err(ApiError::conflict(format!("session is {}, not awaiting a choice", status_name(status))));
    }
    let q = match &inner.state.pending_query {
        Some(query) => query.points.len(),
        None => return Err(ApiError::conflict("no query has been served; GET the query first")),
    };
    if req.chosen_index >= q {
        return Err(ApiError::bad_request(format!("chosen_index {} out of range for {q} points", req.chosen_index)));
    }
    inner.state.submit_choice(req.chosen_index)?;
    let pref = &inner.state.pref_post;
    Ok(Json(ChoiceResponse {
        status: inner.status(),
        step: inner.state.step,
        pref_summary: PrefSummary { mean_w: pref.mean(), ess: pref.effective_sample_size() },
    }))
}

#[derive(Serialize)]
struct ObservationView {
    p: f64,
    alpha: f64,
    epsilon: f64,
    accuracy: f64,
}

fn observation_view(state: &SessionState64, o: &FrontObservation<f64>) -> ObservationView {
    ObservationView {
        p: o.p,
        alpha: o.alpha,
        epsilon: state.norm.denormalize_privacy(o.p).unwrap_or(f64::NAN),
        accuracy: state.norm.denormalize_accuracy(o.alpha),
    }
}

#[derive(Serialize)]
struct FrontSummary {
    ess: f64,
    particles: usize,
    observations: usize,
    p_star: f64,
    epsilon_star: f64,
    u_star: f64,
}

#[derive(Serialize)]
struct EvaluateResponse {
    status: Status,
    step: usize,
    observation: ObservationView,
    front_summary: FrontSummary,
}

async fn post_evaluate(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<EvaluateResponse> {
    let slot = app.slot(&id)?;
    let ((observation, front_summary, step), status) = run_exclusive(slot, Status::AwaitingEvaluation, |state| {
        let obs = *state.evaluate()?;
        let rec = state.recommendation();
        let summary = FrontSummary {
            ess: state.front_post.effective_sample_size(),
            particles: state.front_post.particle_count(),
            observations: state.obs_history.len(),
            p_star: rec.p_star,
            epsilon_star: rec.eps_star,
            u_star: rec.u_star,
        };
        Ok((observation_view(state, &obs), summary, state.step))
    })
    .await?;
    Ok(Json(EvaluateResponse { status, step, observation, front_summary }))
}

#[derive(Serialize)]
struct CurvePoint {
    p: f64,
    epsilon: f64,
    alpha: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct BandView {
    p: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct StateResponse {
    id: String,
    status: Status,
    arm: String,
    step: usize,
    num_steps: usize,
    obs_history: Vec<ObservationView>,
    choice_count: usize,
    awaiting_query: bool,
    posterior_mean_curve: Vec<CurvePoint>,
    credible_band: Vec<BandView>,
    mean_w: [f64; 2],
    pref_ess: f64,
    p_star: f64,
    p_star_denormalized: f64,
    accuracy_star: f64,
    u_star: f64,
    metric_trace: Vec<MetricRecord<f64>>,
}

async fn get_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<StateResponse> {
    let slot = app.slot(&id)?;
    let (state, status) = {
        let inner = slot.inner.lock().expect("session lock");
        (inner.state.clone(), inner.status())
    };
    let resp = tokio::task::spawn_blocking(move || -> Result<StateResponse, ApiError> {
        let curve = state.mean_curve()?;
        let rec = state.recommendation();
        let norm = state.norm;
        Ok(StateResponse {
            id,
            status,
            arm: state.arm.to_string(),
            step: state.step,
            num_steps: state.config.loop_.num_steps,
            obs_history: state.obs_history.iter().map(|o| observation_view(&state, o)).collect(),
            choice_count: state.choice_history.len(),
            awaiting_query: state.pending_query.is_some(),
            posterior_mean_curve: curve
                .points
                .iter()
                .map(|b| CurvePoint {
                    p: b.p,
                    epsilon: norm.denormalize_privacy(b.p).unwrap_or(f64::NAN),
                    alpha: b.mean,
                    accuracy: norm.denormalize_accuracy(b.mean),
                })
                .collect(),
            credible_band: curve.points.iter().map(|b| BandView { p: b.p, lower: b.lower, upper: b.upper }).collect(),
            mean_w: state.pref_post.mean(),
            pref_ess: state.pref_post.effective_sample_size(),
            p_star: rec.p_star,
            p_star_denormalized: rec.eps_star,
            accuracy_star: rec.accuracy_star,
            u_star: rec.u_star,
            metric_trace: state.metric_trace.clone(),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}
