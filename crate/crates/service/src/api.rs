//! HTTP/JSON front door. Every mutation runs the lifecycle command on a copy of the
//! session, appends the resulting events durably, and only then swaps the copy in.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use faf_core::lifecycle::{apply_outcome, NewSession, ProposalInput};
use faf_core::model::{AgentId, Argument, ArgumentId, Edge, ForecastingQuestion};
use faf_core::{AggregationPolicy, Grid, Lifecycle, LifecycleEvent, RationalityVerdict, SubmitOutcome};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use crate::config::Config;
use crate::error::ApiError;
use crate::store::{valid_id, Store, StoreError};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    /// Defaults to the question id.
    #[serde(default)]
    pub id: Option<String>,
    pub question: ForecastingQuestion,
    pub base_forecast: f64,
    #[serde(default)]
    pub overall_deadline: Option<DateTime<Utc>>,
    /// Seconds.
    #[serde(default)]
    pub per_round_deadline: Option<i64>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub policy: Option<AggregationPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenFramework {
    pub proposal: ProposalInput,
    pub agents: Vec<AgentId>,
    #[serde(default)]
    pub round_deadline: Option<DateTime<Utc>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddArgument {
    pub argument: Argument,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

/// `agent` may be omitted when the request carries `Authorization: Bearer <agent-id>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CastVote {
    #[serde(default)]
    pub agent: Option<AgentId>,
    pub argument: ArgumentId,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitForecast {
    #[serde(default)]
    pub agent: Option<AgentId>,
    pub forecast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseSession {
    pub outcome: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventPage {
    pub framework_id: String,
    /// Last sequence number of the whole session log; poll again with `since` = this.
    pub last_seq: u64,
    pub events: Vec<LifecycleEvent>,
}

/// Body of a 409 for a forecast the rationality gate blocked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedForecast {
    pub code: String,
    pub message: String,
    #[serde(flatten)]
    pub verdict: RationalityVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalityView {
    pub framework_id: String,
    pub agent: AgentId,
    /// Whether `forecast` is the agent's stored forecast (otherwise the proposal's).
    pub has_forecast: bool,
    pub pending_votes: Vec<ArgumentId>,
    #[serde(flatten)]
    pub verdict: RationalityVerdict,
}

#[derive(Default)]
struct Slot {
    lifecycle: Option<Lifecycle>,
    unsnapshotted: u64,
}

struct Inner {
    store: Store,
    config: Config,
    sessions: Mutex<HashMap<String, Arc<RwLock<Slot>>>>,
    clock: Clock,
}

/// Shared service state: the store plus a per-session cache. The per-session lock is the
/// single writer; the store's file lock catches writers in other processes.
#[derive(Clone)]
pub struct App {
    inner: Arc<Inner>,
}

impl App {
    pub fn open(config: Config) -> Result<Self, StoreError> {
        Self::open_with_clock(config, Arc::new(Utc::now))
    }

    pub fn open_with_clock(config: Config, clock: Clock) -> Result<Self, StoreError> {
        let store = Store::open(&config.store_root)?;
        let app = App { inner: Arc::new(Inner { store, config, sessions: Mutex::new(HashMap::new()), clock }) };
        app.reconcile_records()?;
        Ok(app)
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn config(&self) -> &Config {
        &self.inner.config
    }

    /// Folds every closed session into agent records. Idempotent; repairs records lost
    /// to a crash between closing a session and writing its records.
    fn reconcile_records(&self) -> Result<(), StoreError> {
        for id in self.inner.store.session_ids()? {
            let lc = match self.inner.store.load(&id) {
                Ok(lc) => lc,
                Err(StoreError::UnknownSession(_)) => continue,
                Err(e) => {
                    tracing::warn!(session = id, error = %e, "skipping unreadable session");
                    continue;
                }
            };
            if let Some(report) = lc.report() {
                let changed = self.inner.store.update_records(|r| apply_outcome(r, &report))?;
                if !changed.is_empty() {
                    tracing::info!(session = id, ?changed, "restored agent records");
                }
            }
        }
        Ok(())
    }

    fn slot(&self, id: &str) -> Arc<RwLock<Slot>> {
        self.inner.sessions.lock().expect("session map poisoned").entry(id.to_string()).or_default().clone()
    }

    fn now(&self) -> DateTime<Utc> {
        (self.inner.clock)()
    }

    /// Runs `f` against a loaded session.
    async fn read<T>(&self, id: &str, f: impl FnOnce(&Lifecycle) -> Result<T, ApiError>) -> Result<(T, String), ApiError> {
        let slot = self.slot(id);
        {
            let guard = slot.read().await;
            if let Some(lc) = &guard.lifecycle {
                return Ok((f(lc)?, lc.state_hash()));
            }
        }
        let mut guard = slot.write().await;
        let lc = self.loaded(&mut guard, id)?;
        Ok((f(lc)?, lc.state_hash()))
    }

    fn loaded<'a>(&self, slot: &'a mut Slot, id: &str) -> Result<&'a mut Lifecycle, ApiError> {
        if slot.lifecycle.is_none() {
            slot.lifecycle = Some(self.inner.store.load(id)?);
        }
        Ok(slot.lifecycle.as_mut().expect("just loaded"))
    }

    /// Applies a lifecycle command: on success its events are durable before the new
    /// state becomes visible; on any error the cached state is untouched.
    async fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Lifecycle, DateTime<Utc>) -> Result<(T, Vec<LifecycleEvent>), ApiError>,
    ) -> Result<(T, String), ApiError> {
        let slot = self.slot(id);
        let mut guard = slot.write().await;
        let now = self.now();
        let current = self.loaded(&mut guard, id)?;
        let expected = current.last_seq();
        let mut next = current.clone();
        let (value, events) = f(&mut next, now)?;
        self.commit(&mut guard, expected, next, &events)?;
        let hash = guard.lifecycle.as_ref().expect("committed").state_hash();
        Ok((value, hash))
    }

    fn commit(&self, slot: &mut Slot, expected: u64, next: Lifecycle, events: &[LifecycleEvent]) -> Result<(), ApiError> {
        let id = next.session().id.clone();
        if !events.is_empty() {
            if let Err(e) = self.inner.store.append(&id, expected, events) {
                if matches!(e, StoreError::StaleSequence { .. }) {
                    // Another writer got there first; reload on next access.
                    slot.lifecycle = None;
                }
                return Err(e.into());
            }
            tracing::debug!(session = id, first = events[0].seq, count = events.len(), "appended events");
            slot.unsnapshotted += events.len() as u64;
            let every = self.inner.config.snapshot_every;
            if every > 0 && slot.unsnapshotted >= every {
                match self.inner.store.write_snapshot(&next) {
                    Ok(()) => slot.unsnapshotted = 0,
                    Err(e) => tracing::warn!(session = id, error = %e, "snapshot failed; the log remains authoritative"),
                }
            }
        }
        slot.lifecycle = Some(next);
        Ok(())
    }

    /// Writes snapshots for every cached session with events since its last snapshot.
    pub async fn flush(&self) {
        let slots: Vec<_> = self.inner.sessions.lock().expect("session map poisoned").values().cloned().collect();
        for slot in slots {
            let mut guard = slot.write().await;
            if guard.unsnapshotted == 0 {
                continue;
            }
            if let Some(lc) = &guard.lifecycle {
                match self.inner.store.write_snapshot(lc) {
                    Ok(()) => guard.unsnapshotted = 0,
                    Err(e) => tracing::warn!(session = lc.session().id, error = %e, "snapshot on shutdown failed"),
                }
            }
        }
    }

    async fn create_session(&self, body: CreateSession) -> Result<(Lifecycle, String), ApiError> {
        let id = body.id.clone().unwrap_or_else(|| body.question.id.clone());
        if !valid_id(&id) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_id", format!("invalid session id `{id}`")));
        }
        if body.question.outcome.is_some() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_value",
                "the outcome is supplied when the session closes",
            ));
        }
        let exists = || ApiError::new(StatusCode::CONFLICT, "session_exists", format!("session `{id}` already exists"));
        let slot = self.slot(&id);
        let mut guard = slot.write().await;
        if guard.lifecycle.is_some() || !self.inner.store.events(&id)?.is_empty() {
            return Err(exists());
        }
        let now = self.now();
        let config = &self.inner.config;
        let spec = NewSession {
            id: id.clone(),
            question: body.question,
            base_forecast: body.base_forecast,
            overall_deadline: body.overall_deadline.unwrap_or(now + Duration::days(config.session_deadline_days)),
            per_round_deadline: body.per_round_deadline.unwrap_or(config.round_deadline_secs),
            grid: body.grid.unwrap_or(config.grid()),
            policy: body.policy.unwrap_or(config.policy()),
        };
        let (lc, event) = Lifecycle::create(spec, now)?;
        match self.commit(&mut guard, 0, lc, std::slice::from_ref(&event)) {
            Err(e) if e.code == "stale_sequence" => Err(exists()),
            other => other,
        }?;
        let lc = guard.lifecycle.clone().expect("committed");
        let hash = lc.state_hash();
        Ok((lc, hash))
    }
}

/// `{session}.{n}` -> `session`.
fn session_of(framework_id: &str) -> Result<&str, ApiError> {
    framework_id
        .rsplit_once('.')
        .filter(|(s, n)| valid_id(s) && n.parse::<u32>().is_ok())
        .map(|(s, _)| s)
        .ok_or_else(|| ApiError::not_found("unknown_framework", format!("unknown framework `{framework_id}`")))
}

/// Framework routes report a missing session as a missing framework.
fn framework_scope(framework_id: &str) -> impl Fn(ApiError) -> ApiError + '_ {
    move |e| {
        if e.code == "unknown_session" {
            ApiError::not_found("unknown_framework", format!("unknown framework `{framework_id}`"))
        } else {
            e
        }
    }
}

/// The caller's agent id: the bearer token, or the body's `agent` field. Identification
/// only; there is no authentication.
fn caller(headers: &HeaderMap, from_body: Option<AgentId>) -> Result<AgentId, ApiError> {
    let bearer = match headers.get(header::AUTHORIZATION) {
        None => None,
        Some(v) => {
            let token = v.to_str().ok().and_then(|s| s.strip_prefix("Bearer ")).map(str::trim).filter(|t| !t.is_empty());
            match token {
                Some(t) => Some(t.to_string()),
                None => {
                    return Err(ApiError::new(StatusCode::UNAUTHORIZED, "invalid_agent_header", "expected `Bearer <agent-id>`"))
                }
            }
        }
    };
    match (bearer, from_body) {
        (Some(h), Some(b)) if h != b => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "agent_mismatch",
            format!("bearer agent `{h}` cannot act as `{b}`"),
        )),
        (Some(a), _) | (None, Some(a)) => Ok(a),
        (None, None) => Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing_agent", "identify the agent with a bearer header")),
    }
}

fn with_etag(status: StatusCode, body: impl Serialize, hash: &str) -> Response {
    let mut resp = (status, Json(body)).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("\"{hash}\"")) {
        resp.headers_mut().insert(header::ETAG, v);
    }
    resp
}

type ApiResult = Result<Response, ApiError>;

async fn create_session(State(app): State<App>, body: Result<Json<CreateSession>, JsonRejection>) -> ApiResult {
    let (lc, hash) = app.create_session(body?.0).await?;
    let mut resp = with_etag(StatusCode::CREATED, lc.session(), &hash);
    if let Ok(v) = HeaderValue::from_str(&format!("/sessions/{}", lc.session().id)) {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    Ok(resp)
}

async fn get_session(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    let (session, hash) = app.read(&id, |lc| Ok(lc.session().clone())).await?;
    Ok(with_etag(StatusCode::OK, session, &hash))
}

async fn open_framework(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Result<Json<OpenFramework>, JsonRejection>,
) -> ApiResult {
    let body = body?.0;
    let (u, hash) = app
        .mutate(&id, |lc, now| {
            let (fid, events) = lc.open_framework(body.proposal, body.agents, body.round_deadline, now)?;
            Ok((lc.framework(&fid)?.clone(), events))
        })
        .await?;
    let mut resp = with_etag(StatusCode::CREATED, &u, &hash);
    if let Ok(v) = HeaderValue::from_str(&format!("/frameworks/{}", u.id)) {
        resp.headers_mut().insert(header::LOCATION, v);
    }
    Ok(resp)
}

async fn get_framework(State(app): State<App>, Path(fid): Path<String>) -> ApiResult {
    let session = session_of(&fid)?;
    let (u, hash) = app.read(session, |lc| Ok(lc.framework(&fid)?.clone())).await.map_err(framework_scope(&fid))?;
    Ok(with_etag(StatusCode::OK, u, &hash))
}

async fn add_argument(
    State(app): State<App>,
    Path(fid): Path<String>,
    body: Result<Json<AddArgument>, JsonRejection>,
) -> ApiResult {
    let body = body?.0;
    let session = session_of(&fid)?;
    let (u, hash) = app
        .mutate(session, |lc, now| {
            let events = lc.add_argument(&fid, body.argument, body.edges, now)?;
            Ok((lc.framework(&fid)?.clone(), events))
        })
        .await
        .map_err(framework_scope(&fid))?;
    Ok(with_etag(StatusCode::CREATED, u, &hash))
}

async fn cast_vote(
    State(app): State<App>,
    Path(fid): Path<String>,
    headers: HeaderMap,
    body: Result<Json<CastVote>, JsonRejection>,
) -> ApiResult {
    let body = body?.0;
    let agent = caller(&headers, body.agent)?;
    let session = session_of(&fid)?;
    let (u, hash) = app
        .mutate(session, |lc, now| {
            let events = lc.cast_vote(&fid, &agent, &body.argument, body.value, now)?;
            Ok((lc.framework(&fid)?.clone(), events))
        })
        .await
        .map_err(framework_scope(&fid))?;
    Ok(with_etag(StatusCode::OK, u, &hash))
}

async fn submit_forecast(
    State(app): State<App>,
    Path(fid): Path<String>,
    headers: HeaderMap,
    body: Result<Json<SubmitForecast>, JsonRejection>,
) -> ApiResult {
    let body = body?.0;
    let agent = caller(&headers, body.agent)?;
    let session = session_of(&fid)?;
    let (outcome, hash) = app
        .mutate(session, |lc, now| Ok(lc.submit_forecast(&fid, &agent, body.forecast, now)?))
        .await
        .map_err(framework_scope(&fid))?;
    Ok(match outcome {
        accepted @ SubmitOutcome::Accepted { .. } => with_etag(StatusCode::OK, accepted, &hash),
        SubmitOutcome::Blocked { verdict } => {
            let names: Vec<String> =
                verdict.violations.iter().map(|v| serde_json::to_value(v).expect("enum").as_str().unwrap_or_default().to_string()).collect();
            let message = format!("forecast {} is irrational: {}", verdict.forecast, names.join(", "));
            with_etag(StatusCode::CONFLICT, BlockedForecast { code: "irrational_forecast".into(), message, verdict }, &hash)
        }
    })
}

async fn resolve_framework(State(app): State<App>, Path(fid): Path<String>) -> ApiResult {
    let session = session_of(&fid)?;
    let records = app.store().records()?;
    let (u, hash) = app
        .mutate(session, |lc, now| {
            let (_, events) = lc.resolve_framework(&fid, &records, now)?;
            Ok((lc.framework(&fid)?.clone(), events))
        })
        .await
        .map_err(framework_scope(&fid))?;
    Ok(with_etag(StatusCode::OK, u, &hash))
}

async fn close_session(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Result<Json<CloseSession>, JsonRejection>,
) -> ApiResult {
    let outcome = body?.0.outcome;
    let (report, hash) = app.mutate(&id, |lc, now| Ok(lc.close_session(outcome, now)?)).await?;
    // The close is durable at this point; records missed by a crash here are restored
    // on the next start.
    app.store().update_records(|r| apply_outcome(r, &report))?;
    Ok(with_etag(StatusCode::OK, report, &hash))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn framework_events(
    State(app): State<App>,
    Path(fid): Path<String>,
    query: Result<Query<Since>, QueryRejection>,
) -> ApiResult {
    let since = query?.0.since;
    let session = session_of(&fid)?;
    app.read(session, |lc| lc.framework(&fid).map(|_| ()).map_err(ApiError::from)).await.map_err(framework_scope(&fid))?;
    let all = app.store().events(session)?;
    let last_seq = all.last().map_or(0, |e| e.seq);
    let events = all.into_iter().filter(|e| e.seq > since && e.framework_id() == Some(fid.as_str())).collect();
    Ok(Json(EventPage { framework_id: fid, last_seq, events }).into_response())
}

async fn agent_record(State(app): State<App>, Path(id): Path<String>) -> ApiResult {
    match app.store().record(&id)? {
        Some(r) => Ok(Json(r).into_response()),
        None => Err(ApiError::not_found("unknown_agent", format!("no record for agent `{id}`"))),
    }
}

async fn agent_rationality(State(app): State<App>, Path((fid, agent)): Path<(String, String)>) -> ApiResult {
    let session = session_of(&fid)?;
    let (view, hash) = app
        .read(session, |lc| {
            let u = lc.framework(&fid)?;
            if !u.agents.contains(&agent) {
                return Err(ApiError::not_found("unknown_agent", format!("agent `{agent}` is not part of `{fid}`")));
            }
            Ok(RationalityView {
                framework_id: fid.clone(),
                agent: agent.clone(),
                has_forecast: u.forecasts.contains_key(&agent),
                pending_votes: u.pending_votes.get(&agent).map(|p| p.iter().cloned().collect()).unwrap_or_default(),
                verdict: lc.rationality(&fid, &agent)?,
            })
        })
        .await
        .map_err(framework_scope(&fid))?;
    Ok(with_etag(StatusCode::OK, view, &hash))
}

async fn fallback() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint")
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/frameworks", post(open_framework))
        .route("/sessions/:id/close", post(close_session))
        .route("/frameworks/:id", get(get_framework))
        .route("/frameworks/:id/arguments", post(add_argument))
        .route("/frameworks/:id/votes", post(cast_vote))
        .route("/frameworks/:id/forecasts", post(submit_forecast))
        .route("/frameworks/:id/resolve", post(resolve_framework))
        .route("/frameworks/:id/events", get(framework_events))
        .route("/frameworks/:id/agents/:aid/rationality", get(agent_rationality))
        .route("/agents/:id/record", get(agent_record))
        .fallback(fallback)
        .with_state(app)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("opening store: {0}")]
    Store(#[from] StoreError),
    #[error("binding {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("serving: {0}")]
    Io(#[from] std::io::Error),
}

/// A bound, not yet running, server.
pub struct Server {
    listener: tokio::net::TcpListener,
    app: App,
}

impl Server {
    pub async fn bind(config: Config) -> Result<Self, ServeError> {
        let addr = config.bind;
        let app = App::open(config)?;
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
        Ok(Server { listener, app })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` resolves, then drains in-flight requests and snapshots
    /// every session touched since its last snapshot.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        let Server { listener, app } = self;
        axum::serve(listener, router(app.clone())).with_graceful_shutdown(shutdown).await?;
        app.flush().await;
        tracing::info!("server stopped");
        Ok(())
    }
}
