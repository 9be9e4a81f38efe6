//! HTTP API under `/api/v1`.
//!
//! Every route except `/healthz` needs `Authorization: Bearer <token>`.
//! Handlers are thin: each mutation is exactly one registry, ingest or
//! PACS call. POST requests carrying an `Idempotency-Key` header are
//! answered from the stored response when repeated with the same body.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use screenforge_core::deid::DeidError;
use screenforge_core::ingest::{Format, IngestError, Source};
use screenforge_core::pacs::{PacsError, RouteOutcome};
use screenforge_core::registry::{
    CaseState, ExportFilter, LungRads, Nodule, ReadingProtocol, RegistryError, ScreeningCase,
};
use screenforge_dicom::{parse, render_preview, tags, DicomError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tracing::{error, warn};

use crate::config::{Role, TokenEntry};
use crate::services::Services;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const BODY_LIMIT: usize = 256 << 20;
/// Consecutive worker failures before `/healthz` reports degraded.
const DEGRADED_AFTER: u64 = 3;

/// Error envelope returned by every endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            http_status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            detail: None,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", what)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        let message = message.into();
        error!(%message, "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match &e {
            RegistryError::NotFound(_) => StatusCode::NOT_FOUND,
            RegistryError::IllegalTransition { .. } | RegistryError::NotFinalized(_) => StatusCode::CONFLICT,
            RegistryError::CategoryNoduleMismatch { .. } | RegistryError::Invalid(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            RegistryError::ReadOnly => StatusCode::SERVICE_UNAVAILABLE,
            RegistryError::Corrupt { .. } | RegistryError::Queue(_) => return ApiError::internal(e.to_string()),
        };
        let detail = match &e {
            RegistryError::IllegalTransition { state, event } => Some(json!({"state": state, "event": event})),
            RegistryError::CategoryNoduleMismatch { category } => Some(json!({"category": category})),
            _ => None,
        };
        ApiError {
            http_status: status.as_u16(),
            code: e.code().into(),
            message: e.to_string(),
            detail,
        }
    }
}

impl From<PacsError> for ApiError {
    fn from(e: PacsError) -> Self {
        match e {
            PacsError::NotFound(sop) => ApiError::not_found(format!("no instance {sop}")),
            PacsError::Deid(d) => ApiError::internal(d.public_message()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Deid(d) => ApiError::internal(d.public_message()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<DeidError> for ApiError {
    fn from(e: DeidError) -> Self {
        ApiError::internal(e.public_message())
    }
}

/// The authenticated caller, placed in request extensions by the auth layer.
#[derive(Debug, Clone)]
pub struct Caller {
    pub role: Role,
    pub user: String,
}

impl Caller {
    fn require(&self, role: Role) -> Result<(), ApiError> {
        if self.role == role {
            Ok(())
        } else {
            Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "FORBIDDEN",
                format!("this action needs the {role:?} role").to_lowercase(),
            ))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredResponse {
    scope: String,
    key: String,
    request_hash: String,
    content_type: String,
    body: String,
    stored_at: DateTime<Utc>,
}

/// Responses to idempotent POSTs, kept for the configured TTL and
/// persisted as JSON lines so a retry after a restart is still answered.
struct IdempotencyStore {
    path: PathBuf,
    ttl: chrono::Duration,
    entries: Mutex<HashMap<(String, String), StoredResponse>>,
    /// Serializes keyed requests so two concurrent retries cannot both run.
    running: tokio::sync::Mutex<()>,
}

impl IdempotencyStore {
    fn open(path: PathBuf, ttl: chrono::Duration) -> anyhow::Result<Self> {
        let now = Utc::now();
        let mut entries = HashMap::new();
        if let Ok(text) = std::fs::read_to_string(&path) {
            for line in text.lines() {
                match serde_json::from_str::<StoredResponse>(line) {
                    Ok(r) if now - r.stored_at < ttl => {
                        entries.insert((r.scope.clone(), r.key.clone()), r);
                    }
                    Ok(_) => {}
                    Err(_) => warn!(path = %path.display(), "skipping unreadable idempotency record"),
                }
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut kept: Vec<&StoredResponse> = entries.values().collect();
        kept.sort_by(|a, b| a.stored_at.cmp(&b.stored_at));
        let text: String = kept.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        std::fs::write(&path, text)?;
        Ok(IdempotencyStore {
            path,
            ttl,
            entries: Mutex::new(entries),
            running: tokio::sync::Mutex::new(()),
        })
    }

    fn get(&self, scope: &str, key: &str) -> Option<StoredResponse> {
        let entries = self.entries.lock().unwrap();
        entries
            .get(&(scope.to_string(), key.to_string()))
            .filter(|r| Utc::now() - r.stored_at < self.ttl)
            .cloned()
    }

    fn put(&self, r: StoredResponse) {
        use std::io::Write;
        let line = serde_json::to_string(&r).unwrap() + "\n";
        let appended = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()).and_then(|_| f.sync_data()));
        if let Err(e) = appended {
            warn!(error = %e, "idempotency record not persisted");
        }
        self.entries.lock().unwrap().insert((r.scope.clone(), r.key.clone()), r);
    }
}

#[derive(Default)]
pub struct WorkerHealth {
    pub consecutive_failures: AtomicU64,
    pub cycles: AtomicU64,
}

#[derive(Clone)]
pub struct AppState {
    pub svc: Arc<Services>,
    tokens: Arc<Vec<TokenEntry>>,
    idem: Arc<IdempotencyStore>,
    pub health: Arc<WorkerHealth>,
}

impl AppState {
    pub fn new(svc: Arc<Services>, tokens: Vec<TokenEntry>) -> anyhow::Result<Self> {
        if tokens.is_empty() {
            anyhow::bail!("no API tokens configured: set SCREENFORGE_API_TOKEN or add [[auth.tokens]] to the config file");
        }
        let ttl = chrono::Duration::hours(svc.config.server.idempotency_ttl_hours as i64);
        let idem = IdempotencyStore::open(svc.root.join("gateway").join("idempotency.jsonl"), ttl)?;
        Ok(AppState {
            svc,
            tokens: Arc::new(tokens),
            idem: Arc::new(idem),
            health: Arc::new(WorkerHealth::default()),
        })
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/ingest/{source}", post(ingest))
        .route("/pacs/instances", post(pacs_store))
        .route("/worklist", get(worklist))
        .route("/studies/{study_uid}", get(study))
        .route("/studies/{study_uid}/instances/{sop_uid}", get(instance))
        .route("/studies/{study_uid}/preview/{sop_uid}", get(preview))
        .route("/studies/{study_uid}/protocol", post(submit_protocol))
        .route("/studies/{study_uid}/second-opinion", post(request_second_opinion))
        .route("/studies/{study_uid}/second-opinion/protocol", post(submit_second_opinion))
        .route("/studies/{study_uid}/finalize", post(finalize))
        .route("/participants/{pseudonym}", get(participant))
        .route("/participants/{pseudonym}/timeline", get(timeline))
        .route("/participants/{pseudonym}/reinvite", post(reinvite))
        .route("/contact-tasks", get(contact_tasks))
        .route("/contact-tasks/{task_id}/close", post(close_contact))
        .route("/stats", get(stats))
        .route("/export", get(export))
        .route("/export/manifest", get(export_manifest))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(middleware::from_fn_with_state(state.clone(), authenticate));
    let api = Router::new().route("/healthz", get(healthz)).merge(protected);
    Router::new()
        .nest("/api/v1", api)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn authenticate(State(st): State<AppState>, mut req: Request, next: Next) -> Result<Response, ApiError> {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let entry = presented.and_then(|t| st.tokens.iter().find(|e| constant_time_eq(e.token.as_bytes(), t.as_bytes())));
    let Some(entry) = entry else {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or unknown bearer token"));
    };
    req.extensions_mut().insert(Caller {
        role: entry.role,
        user: entry.user.clone(),
    });
    Ok(next.run(req).await)
}

async fn idempotency(State(st): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    let key = req
        .headers()
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let Some(key) = key.filter(|_| req.method() == Method::POST) else {
        return Ok(next.run(req).await);
    };
    let user = req.extensions().get::<Caller>().map(|c| c.user.clone()).unwrap_or_default();
    let (parts, body) = req.into_parts();
    let bytes = to_bytes(body, BODY_LIMIT)
        .await
        .map_err(|e| ApiError::bad_request(format!("unreadable body: {e}")))?;
    let scope = format!("{user} {}", parts.uri.path());
    let request_hash = hex::encode(Sha256::digest(&bytes));

    let _running = st.idem.running.lock().await;
    if let Some(hit) = st.idem.get(&scope, &key) {
        if hit.request_hash != request_hash {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "IDEMPOTENCY_KEY_REUSED",
                "idempotency key was already used with a different request body",
            ));
        }
        return Ok(([(header::CONTENT_TYPE, hit.content_type)], hit.body).into_response());
    }
    let resp = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    if !resp.status().is_success() {
        return Ok(resp);
    }
    let (parts, body) = resp.into_parts();
    let body = to_bytes(body, BODY_LIMIT)
        .await
        .map_err(|e| ApiError::internal(format!("response body: {e}")))?;
    match String::from_utf8(body.to_vec()) {
        Ok(text) => st.idem.put(StoredResponse {
            scope,
            key,
            request_hash,
            content_type: parts
                .headers
                .get(header::CONTENT_TYPE)
                .and_then(|v| v.to_str().ok())
                .unwrap_or("application/json")
                .to_string(),
            body: text,
            stored_at: Utc::now(),
        }),
        Err(_) => warn!("binary response not stored for idempotent replay"),
    }
    Ok(Response::from_parts(parts, Body::from(body)))
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn healthz(State(st): State<AppState>) -> Json<Value> {
    let failures = st.health.consecutive_failures.load(Ordering::Relaxed);
    Json(json!({
        "status": if failures >= DEGRADED_AFTER { "degraded" } else { "ok" },
        "worker_failures": failures,
        "worker_cycles": st.health.cycles.load(Ordering::Relaxed),
    }))
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn body_format(query: &FormatQuery, headers: &HeaderMap) -> Result<Format, ApiError> {
    if let Some(f) = &query.format {
        return Format::from_extension(f).ok_or_else(|| ApiError::bad_request(format!("unknown format {f:?}")));
    }
    let ct = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    match ct.as_str() {
        "text/csv" => Ok(Format::Csv),
        "text/plain" => Ok(Format::Txt),
        "application/json" => Ok(Format::Json),
        "application/xml" | "text/xml" => Ok(Format::Xml),
        other => Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "UNSUPPORTED_FORMAT",
            format!("unsupported content type {other:?}"),
        )),
    }
}

async fn ingest(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(source): Path<String>,
    Query(query): Query<FormatQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    caller.require(Role::Reader)?;
    let source = match source.as_str() {
        "crm" => Source::Crm,
        "ris" => Source::Ris,
        "ehr" => Source::Ehr,
        other => return Err(ApiError::not_found(format!("no source {other:?}"))),
    };
    let format = body_format(&query, &headers)?;
    let report = st
        .svc
        .ingest
        .ingest_bytes(source, format, &format!("http:{}", source.slug()), &body)?;
    st.svc.registry.consume(&st.svc.queue)?;
    Ok((StatusCode::OK, Json(report)).into_response())
}

async fn pacs_store(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> Result<Response, ApiError> {
    caller.require(Role::Reader)?;
    match st.svc.pacs.route(&body, "http")? {
        RouteOutcome::Stored(r) => Ok((StatusCode::CREATED, Json(json!({"outcome": "STORED", "instance": r}))).into_response()),
        RouteOutcome::Unchanged(r) => Ok((StatusCode::OK, Json(json!({"outcome": "UNCHANGED", "instance": r}))).into_response()),
        RouteOutcome::Quarantined { reason } => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "QUARANTINED",
            format!("instance quarantined: {reason}"),
        )
        .with_detail(json!({"reason": reason}))),
    }
}

async fn worklist(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.svc.registry.worklist()))
}

async fn study(State(st): State<AppState>, Path(study_uid): Path<String>) -> Result<Json<Value>, ApiError> {
    let pacs = st.svc.pacs.study(&study_uid);
    let record = st.svc.registry.study(&study_uid).ok();
    if pacs.is_none() && record.is_none() {
        return Err(ApiError::not_found(format!("no study {study_uid}")));
    }
    let case = st.svc.registry.case_for_study(&study_uid).ok();
    Ok(Json(json!({
        "study_uid": study_uid,
        "pseudonym": pacs.as_ref().map(|p| p.pseudonym.to_string()).or_else(|| record.as_ref().map(|r| r.pseudonym.to_string())),
        "modality": pacs.as_ref().map(|p| p.modality.clone()),
        "study_date": pacs.as_ref().and_then(|p| p.study_date).or_else(|| record.as_ref().and_then(|r| r.study_date)),
        "case_state": case.map(|c| c.state),
        "record": record,
        "protocols": st.svc.registry.protocols_for(&study_uid),
        "instances": st.svc.pacs.instances(&study_uid),
    })))
}

fn instance_bytes(st: &AppState, study_uid: &str, sop_uid: &str) -> Result<Vec<u8>, ApiError> {
    match st.svc.pacs.instance(sop_uid) {
        Some(m) if m.study_uid == study_uid => Ok(st.svc.pacs.retrieve(sop_uid)?),
        _ => Err(ApiError::not_found(format!("no instance {sop_uid} in study {study_uid}"))),
    }
}

async fn instance(State(st): State<AppState>, Path((study_uid, sop_uid)): Path<(String, String)>) -> Result<Response, ApiError> {
    let bytes = instance_bytes(&st, &study_uid, &sop_uid)?;
    Ok(([(header::CONTENT_TYPE, "application/dicom")], bytes).into_response())
}

#[derive(Deserialize)]
struct PreviewQuery {
    wc: Option<f64>,
    ww: Option<f64>,
    /// `png` (default) or `pgm`.
    format: Option<String>,
}

/// First value of a multi-valued DS element.
fn first_ds(ds: &screenforge_dicom::Dataset, tag: screenforge_dicom::Tag) -> Option<f64> {
    ds.text(tag)?.split('\\').next()?.trim().parse().ok()
}

async fn preview(
    State(st): State<AppState>,
    Path((study_uid, sop_uid)): Path<(String, String)>,
    Query(q): Query<PreviewQuery>,
) -> Result<Response, ApiError> {
    let bytes = instance_bytes(&st, &study_uid, &sop_uid)?;
    let file = parse(&bytes).map_err(|e| ApiError::internal(e.to_string()))?;
    let wc = q.wc.or_else(|| first_ds(&file.dataset, tags::WINDOW_CENTER)).unwrap_or(40.0);
    let ww = q.ww.or_else(|| first_ds(&file.dataset, tags::WINDOW_WIDTH)).unwrap_or(400.0);
    let image = render_preview(&file, wc, ww).map_err(|e| match e {
        DicomError::UnsupportedPixels(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UNSUPPORTED_PIXELS", m),
        other => ApiError::internal(other.to_string()),
    })?;
    match q.format.as_deref().unwrap_or("png") {
        "png" => Ok(([(header::CONTENT_TYPE, "image/png")], image.to_png()).into_response()),
        "pgm" => Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], image.to_pgm()).into_response()),
        other => Err(ApiError::bad_request(format!("unknown preview format {other:?}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolRequest {
    #[serde(default)]
    pub reader_id: Option<String>,
    #[serde(default)]
    pub nodules: Vec<Nodule>,
    pub category: LungRads,
}

fn protocol_response(p: ReadingProtocol) -> Response {
    (StatusCode::CREATED, Json(p)).into_response()
}

async fn submit_protocol(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(study_uid): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    caller.require(Role::Reader)?;
    let req: ProtocolRequest = parse_json(&body)?;
    let reader = req.reader_id.unwrap_or(caller.user);
    let p = st
        .svc
        .registry
        .submit_protocol(&study_uid, &reader, req.nodules, req.category, false)?;
    Ok(protocol_response(p))
}

#[derive(Deserialize)]
struct SecondOpinionRequest {
    expert_id: String,
}

async fn request_second_opinion(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(study_uid): Path<String>,
    body: Bytes,
) -> Result<Json<ScreeningCase>, ApiError> {
    caller.require(Role::Reader)?;
    let req: SecondOpinionRequest = parse_json(&body)?;
    Ok(Json(st.svc.registry.request_second_opinion(&study_uid, &req.expert_id)?))
}

async fn submit_second_opinion(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(study_uid): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    caller.require(Role::Expert)?;
    let req: ProtocolRequest = parse_json(&body)?;
    let reader = req.reader_id.unwrap_or(caller.user);
    let p = st
        .svc
        .registry
        .submit_protocol(&study_uid, &reader, req.nodules, req.category, true)?;
    Ok(protocol_response(p))
}

async fn finalize(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(study_uid): Path<String>,
) -> Result<Json<Value>, ApiError> {
    caller.require(Role::Reader)?;
    let case = st.svc.registry.route_outcome(&study_uid)?;
    let task = case
        .contact_task_id
        .and_then(|id| st.svc.registry.contact_tasks().into_iter().find(|t| t.task_id == id));
    Ok(Json(json!({"case": case, "contact_task": task})))
}

async fn participant(State(st): State<AppState>, Path(p): Path<String>) -> Result<Json<ScreeningCase>, ApiError> {
    Ok(Json(st.svc.registry.case(&p)?))
}

async fn timeline(State(st): State<AppState>, Path(p): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!(st.svc.registry.timeline(&p)?)))
}

async fn reinvite(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(p): Path<String>,
) -> Result<Json<ScreeningCase>, ApiError> {
    caller.require(Role::Reader)?;
    Ok(Json(st.svc.registry.reinvite(&p)?))
}

async fn contact_tasks(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.svc.registry.contact_tasks()))
}

#[derive(Deserialize)]
struct CloseRequest {
    #[serde(default)]
    note: String,
}

async fn close_contact(
    State(st): State<AppState>,
    Extension(caller): Extension<Caller>,
    Path(task_id): Path<u64>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    caller.require(Role::Reader)?;
    let req: CloseRequest = if body.is_empty() { CloseRequest { note: String::new() } } else { parse_json(&body)? };
    Ok(Json(json!(st.svc.registry.close_contact(task_id, &req.note)?)))
}

async fn stats(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.svc.registry.stats()))
}

#[derive(Deserialize, Default)]
pub struct ExportQuery {
    pub state: Option<String>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl ExportQuery {
    pub fn filter(&self) -> Result<ExportFilter, String> {
        Ok(ExportFilter {
            state: self
                .state
                .as_deref()
                .map(|s| s.parse::<CaseState>().map_err(|_| format!("unknown state {s:?}")))
                .transpose()?,
            from: self.from,
            to: self.to,
        })
    }
}

async fn export(State(st): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let filter = q.filter().map_err(ApiError::bad_request)?;
    let ex = st.svc.registry.export(&filter);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], ex.csv).into_response())
}

async fn export_manifest(State(st): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let filter = q.filter().map_err(ApiError::bad_request)?;
    let ex = st.svc.registry.export(&filter);
    Ok(([(header::CONTENT_TYPE, "application/json")], ex.manifest_json()).into_response())
}

/// Background cycle: ingest inboxes, PACS drop directory, quiet periods and
/// register consumption. A failed or panicking cycle is logged and retried
/// on the next tick; repeated failures show up in `/healthz`.
pub async fn run_worker(svc: Arc<Services>, health: Arc<WorkerHealth>, interval: Duration) {
    let mut ticker = tokio::time::interval(interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        let s = svc.clone();
        let outcome = tokio::task::spawn_blocking(move || s.pump()).await;
        health.cycles.fetch_add(1, Ordering::Relaxed);
        let failed = match outcome {
            Ok(Ok(_)) => false,
            Ok(Err(e)) => {
                warn!(error = %e, "worker cycle failed");
                true
            }
            Err(e) => {
                error!(error = %e, "worker cycle panicked; restarting");
                true
            }
        };
        if failed {
            let n = health.consecutive_failures.fetch_add(1, Ordering::Relaxed) + 1;
            if n == DEGRADED_AFTER {
                error!(failures = n, "worker keeps failing");
            }
        } else {
            health.consecutive_failures.store(0, Ordering::Relaxed);
        }
    }
}

/// Serves the API and runs the worker until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let interval = Duration::from_millis(state.svc.config.server.poll_interval_ms.max(10));
    let worker = tokio::spawn(run_worker(state.svc.clone(), state.health.clone(), interval));
    let app = router(state);
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    worker.abort();
    let _ = worker.await;
    result.map_err(Into::into)
}
