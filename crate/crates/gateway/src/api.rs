//! HTTP routes. Mutations go through the writer channel; reads use the
//! latest published snapshot.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crowdre_core::analytics::RaterSelection;
use crowdre_core::model::Dataset;
use crowdre_core::orchestrator::{emit_final_labels, Campaign};
use crowdre_core::quality::{Qualification, Status};
use crowdre_core::{ClusterName, Label, Taxonomy};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};

use crate::error::ApiError;
use crate::reports::{patch_jsonl, stats_view, CostView, DigestView, SuspensionView};
use crate::service::{Command, QualificationView, Reply, SharedRead};
use crate::token::{constant_time_eq, valid_annotator_id, TokenIssuer};

pub type Job = (Command, oneshot::Sender<Result<Reply, ApiError>>);

#[derive(Clone)]
pub struct AppState {
    pub commands: mpsc::Sender<Job>,
    pub read: watch::Receiver<SharedRead>,
    pub campaign: Arc<Campaign>,
    pub dataset: Arc<Dataset>,
    pub taxonomy: Arc<Taxonomy>,
    pub tokens: TokenIssuer,
    pub admin_token: Arc<str>,
}

impl AppState {
    async fn dispatch(&self, cmd: Command) -> Result<Reply, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send((cmd, tx))
            .await
            .map_err(|_| ApiError::unavailable("command stream closed"))?;
        rx.await.map_err(|_| ApiError::unavailable("command dropped"))?
    }

    fn snapshot(&self) -> SharedRead {
        self.read.borrow().clone()
    }
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::unauthorized("missing bearer token"))
}

fn annotator(app: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    Ok(app.tokens.verify(bearer(headers)?)?.annotator)
}

fn admin(app: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    if constant_time_eq(bearer(headers)?.as_bytes(), app.admin_token.as_bytes()) {
        Ok(())
    } else {
        Err(ApiError::unauthorized("admin token required"))
    }
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/annotators", post(register))
        .route("/v1/sessions", post(session))
        .route("/v1/me", get(me))
        .route("/v1/qualifications/{cluster}", get(qualification).post(qualify))
        .route("/v1/hits/next", get(next_hit))
        .route("/v1/hits/{hit}/responses", post(submit))
        .route("/v1/admin/progress", get(admin_progress))
        .route("/v1/admin/stats", get(admin_stats))
        .route("/v1/admin/suspensions", get(admin_suspensions))
        .route("/v1/admin/cost", get(admin_cost))
        .route("/v1/admin/patch", get(admin_patch))
        .route("/v1/admin/final-labels", get(admin_final_labels))
        .route("/v1/admin/digest", get(admin_digest))
        .with_state(app)
}

async fn health(State(app): State<AppState>) -> Json<serde_json::Value> {
    let snap = app.snapshot();
    Json(serde_json::json!({ "status": "ok", "last_seq": snap.state.last_seq }))
}

#[derive(Debug, Deserialize)]
pub struct RegisterRequest {
    pub annotator: String,
    pub approved_count: u64,
    pub approval_rate: f64,
}

async fn register(
    State(app): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<RegisterRequest>,
) -> Result<Response, ApiError> {
    admin(&app, &headers)?;
    if !valid_annotator_id(&req.annotator) {
        return Err(ApiError::bad_request("annotator ids use 1-64 ASCII letters, digits, '-' or '_'"));
    }
    app.dispatch(Command::Register {
        annotator: req.annotator.clone(),
        approved_count: req.approved_count,
        approval_rate: req.approval_rate,
    })
    .await?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "annotator": req.annotator }))).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SessionRequest {
    pub annotator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub token: String,
    pub annotator: String,
    pub issued_at: u64,
    pub expires_at: u64,
}

async fn session(State(app): State<AppState>, Json(req): Json<SessionRequest>) -> Result<Json<SessionView>, ApiError> {
    if !app.snapshot().state.annotators.contains_key(&req.annotator) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_annotator", format!("annotator `{}` is not registered", req.annotator)));
    }
    let (token, s) = app.tokens.issue_at(&req.annotator, crate::token::now_secs());
    Ok(Json(SessionView {
        token,
        annotator: s.annotator,
        issued_at: s.issued_at,
        expires_at: s.expires_at,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeView {
    pub annotator: String,
    pub qualifications: std::collections::BTreeMap<ClusterName, Qualification>,
    pub suspended_in: Vec<ClusterName>,
}

async fn me(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<MeView>, ApiError> {
    let id = annotator(&app, &headers)?;
    let snap = app.snapshot();
    let p = snap
        .state
        .annotators
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_annotator", id.clone()))?;
    Ok(Json(MeView {
        annotator: id,
        qualifications: p.qualifications.clone(),
        suspended_in: p
            .status
            .iter()
            .filter(|(_, s)| **s == Status::Suspended)
            .map(|(c, _)| c.clone())
            .collect(),
    }))
}

async fn qualification(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(cluster): Path<String>,
) -> Result<Json<QualificationView>, ApiError> {
    annotator(&app, &headers)?;
    let name = ClusterName::new(cluster);
    let test = app.campaign.tests.get(&name).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "no_qualification_test", format!("no qualification test for {name}"))
    })?;
    Ok(Json(QualificationView::new(test)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswersRequest {
    pub answers: Vec<Label>,
}

async fn qualify(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(cluster): Path<String>,
    Json(req): Json<AnswersRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let id = annotator(&app, &headers)?;
    let cluster = ClusterName::new(cluster);
    match app
        .dispatch(Command::Qualify {
            annotator: id,
            cluster: cluster.clone(),
            answers: req.answers,
        })
        .await?
    {
        Reply::Qualification(q) => Ok(Json(serde_json::json!({ "cluster": cluster, "result": q }))),
        _ => Err(ApiError::internal("unexpected reply")),
    }
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub cluster: Option<String>,
}

async fn next_hit(State(app): State<AppState>, headers: HeaderMap, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let id = annotator(&app, &headers)?;
    match app
        .dispatch(Command::NextHit {
            annotator: id,
            cluster: q.cluster.map(ClusterName::new),
        })
        .await?
    {
        Reply::Hit(Some(view)) => Ok(Json(view).into_response()),
        Reply::Hit(None) => Ok(StatusCode::NO_CONTENT.into_response()),
        _ => Err(ApiError::internal("unexpected reply")),
    }
}

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

async fn submit(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(hit): Path<String>,
    Json(req): Json<AnswersRequest>,
) -> Result<Response, ApiError> {
    let id = annotator(&app, &headers)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    match app
        .dispatch(Command::Submit {
            annotator: id,
            hit,
            answers: req.answers,
            idempotency_key: key,
        })
        .await?
    {
        Reply::Submitted(v) => Ok(Json(v).into_response()),
        _ => Err(ApiError::internal("unexpected reply")),
    }
}

async fn admin_progress(State(app): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    admin(&app, &headers)?;
    Ok(Json(app.snapshot().progress.clone()).into_response())
}

#[derive(Debug, Deserialize)]
pub struct StatsQuery {
    #[serde(default)]
    pub raters: Option<RaterSelection>,
    pub top: Option<usize>,
}

async fn admin_stats(State(app): State<AppState>, headers: HeaderMap, Query(q): Query<StatsQuery>) -> Result<Response, ApiError> {
    admin(&app, &headers)?;
    let snap = app.snapshot();
    Ok(Json(stats_view(&snap.state, q.raters.unwrap_or_default(), q.top.unwrap_or(20))).into_response())
}

async fn admin_suspensions(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<Vec<SuspensionView>>, ApiError> {
    admin(&app, &headers)?;
    Ok(Json(SuspensionView::collect(&app.snapshot().state)))
}

async fn admin_cost(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<CostView>, ApiError> {
    admin(&app, &headers)?;
    Ok(Json(CostView::new(&app.snapshot().state)))
}

async fn admin_patch(State(app): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    admin(&app, &headers)?;
    let body = patch_jsonl(&app.snapshot().state, &app.dataset, &app.taxonomy)
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, "patch", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn admin_final_labels(State(app): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    admin(&app, &headers)?;
    Ok(Json(emit_final_labels(app.snapshot().state.sentences.values())).into_response())
}

async fn admin_digest(State(app): State<AppState>, headers: HeaderMap) -> Result<Json<DigestView>, ApiError> {
    admin(&app, &headers)?;
    Ok(Json(DigestView::new(&app.snapshot().state)))
}
