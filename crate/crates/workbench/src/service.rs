//! JSON-over-HTTP API used by the annotation UI. Every route lives under
//! `/v1` and every response body carries `codebook_version`.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | /v1/codebook | frame definitions |
//! | GET  | /v1/sessions/{id}/next?annotator= | next unlabeled assigned headline |
//! | POST | /v1/annotations | record a label (idempotent per `submission_id`) |
//! | GET  | /v1/sessions/{id}/icr | reliability between two annotators |
//! | GET  | /v1/sessions/{id}/progress | done/total per annotator |
//! | GET  | /v1/adjudication/next?reviewer= | next blind item |
//! | POST | /v1/adjudication/verdict | agree/disagree, once per item |
//! | GET  | /v1/reports/{frames,months,sentiment}?source=human\|model&format=json\|csv | |
//!
//! Status codes: 400 malformed request, 404 unknown id, 409 conflicting
//! write (double verdict, reused submission id), 422 rejected by a domain
//! invariant. Annotator identity may also be sent as `x-annotator-id`;
//! it must then match the body or query.

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use framelab_core::annotation::{Annotation, AnnotatorProgress, GateDecision, IcrReport, Phase};
use framelab_core::codebook::CodebookDocument;
use framelab_core::evaluation::{ReviewerItem, Verdict};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::workspace::{AnnotationInput, ErrorKind, LabelSource, NextItem, Workspace, WorkspaceError};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
pub const VERSION_HEADER: &str = "x-codebook-version";

type AppState = Arc<Workspace>;

pub fn router(ws: Arc<Workspace>) -> Router {
    Router::new()
        .route("/v1/codebook", get(codebook))
        .route("/v1/sessions/{id}/next", get(next_item))
        .route("/v1/sessions/{id}/icr", get(icr))
        .route("/v1/sessions/{id}/progress", get(progress))
        .route("/v1/annotations", post(annotate))
        .route("/v1/adjudication/next", get(adjudication_next))
        .route("/v1/adjudication/verdict", post(verdict))
        .route("/v1/reports/{kind}", get(report))
        .fallback(unknown_route)
        .with_state(ws)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    ws: Arc<Workspace>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(ws)).with_graceful_shutdown(shutdown).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    codebook_version: String,
}

impl ApiError {
    fn new(ws: &Workspace, status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), codebook_version: ws.codebook_version().to_string() }
    }

    fn from_ws(ws: &Workspace, e: WorkspaceError) -> Self {
        let status = match e.kind() {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(ws, status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "codebook_version": self.codebook_version });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parse a JSON body: syntax errors are 400, shape errors (unknown or
/// missing fields, bad labels) 422.
fn parse_body<T: DeserializeOwned>(ws: &Workspace, body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = match e.classify() {
            serde_json::error::Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(ws, status, format!("invalid request body: {e}"))
    })
}

/// Identity from the query (or body) and the optional header; they must agree.
fn identity(ws: &Workspace, given: Option<&str>, headers: &HeaderMap, what: &str) -> Result<String, ApiError> {
    let header = match headers.get(ANNOTATOR_HEADER) {
        None => None,
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::new(ws, StatusCode::BAD_REQUEST, format!("{ANNOTATOR_HEADER} is not text")))?,
        ),
    };
    match (given, header) {
        (Some(g), Some(h)) if g != h => Err(ApiError::new(
            ws,
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("{what} {g:?} does not match {ANNOTATOR_HEADER} {h:?}"),
        )),
        (Some(g), _) => Ok(g.to_string()),
        (None, Some(h)) => Ok(h.to_string()),
        (None, None) => Err(ApiError::new(ws, StatusCode::BAD_REQUEST, format!("missing {what}"))),
    }
}

async fn unknown_route(State(ws): State<AppState>) -> ApiError {
    ApiError::new(&ws, StatusCode::NOT_FOUND, "no such endpoint")
}

#[derive(Serialize)]
struct CodebookResponse {
    codebook_version: String,
    codebook: CodebookDocument,
}

async fn codebook(State(ws): State<AppState>) -> Json<CodebookResponse> {
    Json(CodebookResponse {
        codebook_version: ws.codebook_version().to_string(),
        codebook: ws.codebook().to_document(),
    })
}

#[derive(Serialize)]
pub struct NextItemResponse {
    pub codebook_version: String,
    pub session_id: String,
    pub phase: Phase,
    pub annotator_id: String,
    pub item: Option<NextItem>,
    pub done: usize,
    pub total: usize,
}

async fn next_item(
    State(ws): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<NextItemResponse> {
    let annotator = identity(&ws, q.get("annotator").map(String::as_str), &headers, "annotator")?;
    let session = ws.session(&id).map_err(|e| ApiError::from_ws(&ws, e))?;
    let (item, p) = ws.next_item(&id, &annotator).map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(NextItemResponse {
        codebook_version: ws.codebook_version().to_string(),
        session_id: id,
        phase: session.phase,
        annotator_id: annotator,
        item,
        done: p.done,
        total: p.total,
    }))
}

#[derive(Serialize)]
pub struct AnnotationResponse {
    pub codebook_version: String,
    /// False when the submission id had already been stored.
    pub created: bool,
    pub annotation: Annotation,
}

async fn annotate(State(ws): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<AnnotationResponse> {
    let input: AnnotationInput = parse_body(&ws, &body)?;
    identity(&ws, Some(&input.annotator_id), &headers, "annotator_id")?;
    let (annotation, created) = ws.record_annotation(input).map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(AnnotationResponse { codebook_version: ws.codebook_version().to_string(), created, annotation }))
}

#[derive(Serialize)]
pub struct IcrResponse {
    pub codebook_version: String,
    pub session_id: String,
    pub phase: Phase,
    pub icr_threshold: f64,
    /// What the gate would decide on this report.
    pub gate: GateDecision,
    /// The last decision recorded for this session, if any.
    pub last_recorded_gate: Option<GateDecision>,
    pub report: IcrReport,
}

async fn icr(
    State(ws): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<IcrResponse> {
    let session = ws.session(&id).map_err(|e| ApiError::from_ws(&ws, e))?;
    let report = ws
        .icr(&id, q.get("a").map(String::as_str), q.get("b").map(String::as_str))
        .map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(IcrResponse {
        codebook_version: ws.codebook_version().to_string(),
        session_id: id,
        phase: session.phase,
        icr_threshold: session.icr_threshold,
        gate: framelab_core::annotation::gate_decision(report.kappa, session.icr_threshold),
        last_recorded_gate: session.gate_history.last().map(|g| g.decision),
        report,
    }))
}

#[derive(Serialize)]
pub struct ProgressResponse {
    pub codebook_version: String,
    pub session_id: String,
    pub phase: Phase,
    pub progress: Vec<AnnotatorProgress>,
}

async fn progress(State(ws): State<AppState>, Path(id): Path<String>) -> ApiResult<ProgressResponse> {
    let session = ws.session(&id).map_err(|e| ApiError::from_ws(&ws, e))?;
    let progress = ws.progress(&id).map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(ProgressResponse {
        codebook_version: ws.codebook_version().to_string(),
        session_id: id,
        phase: session.phase,
        progress,
    }))
}

/// The reviewer's view: item fields (absent when nothing is left) plus the
/// reviewer's own running counts.
#[derive(Serialize)]
pub struct AdjudicationNextResponse {
    pub codebook_version: String,
    #[serde(flatten)]
    pub item: Option<ReviewerItem>,
    pub done: bool,
    pub reviewed: usize,
    pub agreed: usize,
    pub pending: usize,
}

async fn adjudication_next(
    State(ws): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<AdjudicationNextResponse> {
    let reviewer = identity(&ws, q.get("reviewer").map(String::as_str), &headers, "reviewer")?;
    let (item, counts) = ws.next_adjudication(&reviewer).map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(AdjudicationNextResponse {
        codebook_version: ws.codebook_version().to_string(),
        done: item.is_none(),
        item,
        reviewed: counts.reviewed,
        agreed: counts.agreed,
        pending: counts.pending,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictRequest {
    item_id: String,
    reviewer_id: String,
    verdict: Verdict,
}

#[derive(Serialize)]
pub struct VerdictResponse {
    pub codebook_version: String,
    pub item_id: String,
    pub reviewer_id: String,
    pub verdict: Verdict,
    pub recorded_at: DateTime<Utc>,
}

async fn verdict(State(ws): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<VerdictResponse> {
    let req: VerdictRequest = parse_body(&ws, &body)?;
    identity(&ws, Some(&req.reviewer_id), &headers, "reviewer_id")?;
    let v = ws.record_verdict(&req.item_id, &req.reviewer_id, req.verdict).map_err(|e| ApiError::from_ws(&ws, e))?;
    Ok(Json(VerdictResponse {
        codebook_version: ws.codebook_version().to_string(),
        item_id: req.item_id,
        reviewer_id: v.reviewer_id,
        verdict: v.verdict,
        recorded_at: v.recorded_at,
    }))
}

async fn report(
    State(ws): State<AppState>,
    Path(kind): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let source = match q.get("source").map(String::as_str).unwrap_or("human") {
        "human" => LabelSource::Human,
        "model" => LabelSource::Model(q.get("run").cloned()),
        other => {
            return Err(ApiError::new(&ws, StatusCode::BAD_REQUEST, format!("unknown source {other:?} (human|model)")))
        }
    };
    let csv = match q.get("format").map(String::as_str).unwrap_or("json") {
        "json" => false,
        "csv" => true,
        other => {
            return Err(ApiError::new(&ws, StatusCode::BAD_REQUEST, format!("unknown format {other:?} (json|csv)")))
        }
    };
    let fail = |e| ApiError::from_ws(&ws, e);
    let (value, text) = match kind.as_str() {
        "frames" => {
            let r = ws.report_frames(&source).map_err(fail)?;
            (serde_json::to_value(&r), r.to_csv())
        }
        "months" => {
            let r = ws.report_months(&source).map_err(fail)?;
            (serde_json::to_value(&r), r.to_csv())
        }
        "sentiment" => {
            let r = ws.report_sentiment(&source).map_err(fail)?;
            (serde_json::to_value(&r), r.to_csv())
        }
        _ => return Err(ApiError::new(&ws, StatusCode::NOT_FOUND, format!("unknown report {kind:?}"))),
    };
    let version = ws.codebook_version().to_string();
    if csv {
        let mut resp = text.into_response();
        resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8"));
        if let Ok(v) = HeaderValue::from_str(&version) {
            resp.headers_mut().insert(VERSION_HEADER, v);
        }
        return Ok(resp);
    }
    let value = value.map_err(|e| ApiError::new(&ws, StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let source_name = if matches!(source, LabelSource::Human) { "human" } else { "model" };
    Ok(Json(json!({ "codebook_version": version, "report": kind, "source": source_name, "data": value }))
        .into_response())
}
