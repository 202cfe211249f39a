use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;
use workbench::dataset::Split;
use workbench::error::{Error, ErrorCode};
use workbench::modelfile;
use workbench::provenance::{CardFilter, CardKind, NewCard};
use workbench::report::{ExportFormat, Section};
use workbench::transition::{TransitionFunction, TransitionKind};
use workbench::workspace::{CreateState, ExplainRequest, ScanRequest, Workspace};

use crate::error::ApiError;
use crate::jobs::{JobManager, TrainRequest};

#[derive(Clone)]
pub struct AppState {
    pub ws: Arc<Workspace>,
    pub jobs: JobManager,
}

impl AppState {
    pub fn new(ws: Workspace) -> Self {
        AppState {
            ws: Arc::new(ws),
            jobs: JobManager::default(),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor whose rejections use the API error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::new(ErrorCode::InvalidInput, e.body_text())),
        }
    }
}

/// Runs workspace code on the blocking pool.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> workbench::error::Result<T> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::internal(format!("worker failed: {e}"))),
    }
}

type Params = Query<HashMap<String, String>>;

fn split_param(q: &HashMap<String, String>) -> ApiResult<Split> {
    Ok(q.get("split").map(|s| Split::parse(s)).transpose()?.unwrap_or(Split::Test))
}

fn usize_param(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<usize>> {
    q.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| ApiError::new(ErrorCode::InvalidParam, format!("{key} must be a non-negative integer")))
        })
        .transpose()
}

pub fn router(app: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}/graph", get(run_graph))
        .route("/api/runs/{id}/series/{*node}", get(run_series))
        .route("/api/runs/{id}/histos/{*node}", get(run_histos))
        .route("/api/explainers", get(explainers))
        .route("/api/doc/{key}", get(doc))
        .route("/api/states", get(list_states).post(create_state))
        .route("/api/states/{id}", get(get_state))
        .route("/api/states/{id}/metrics", get(metrics))
        .route("/api/states/{a}/compare/{b}", get(compare))
        .route("/api/states/{id}/recommendations", get(recommendations))
        .route("/api/explain", post(explain))
        .route("/api/scan", post(scan))
        .route("/api/transitions/apply", post(apply_transition))
        .route("/api/train", post(train))
        .route("/api/train/{job}", get(train_status))
        .route("/api/provenance/cards", get(list_cards).post(add_card))
        .route("/api/provenance/cards/{id}", patch(update_card).get(get_card).delete(delete_card))
        .route("/api/reports", get(list_reports).post(create_report))
        .route("/api/reports/{id}", get(get_report))
        .route("/api/reports/{id}/export", post(export_report))
        .route("/api/reports/{id}/files/{*path}", get(report_file))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .with_state(app);
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    let router = match ui_dir {
        Some(dir) => Router::new()
            .nest_service("/ui", ServeDir::new(dir.clone()))
            .merge(api)
            .fallback_service(ServeDir::new(dir)),
        None => api,
    };
    router.layer(cors)
}

async fn list_runs(State(app): State<AppState>) -> ApiResult<Json<Value>> {
    let runs = blocking(move || app.ws.list_runs()).await?;
    Ok(Json(json!(runs)))
}

async fn run_graph(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let g = blocking(move || app.ws.run_graph(&id)).await?;
    Ok(Json(json!(g)))
}

async fn run_series(
    State(app): State<AppState>,
    Path((id, node)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Json<Value>> {
    let stat = q.get("stat").cloned().unwrap_or_else(|| "mean".into());
    let (id2, node2, stat2) = (id.clone(), node.clone(), stat.clone());
    let points = blocking(move || app.ws.run_series(&id2, &node2, &stat2)).await?;
    Ok(Json(json!({ "run_id": id, "node": node, "stat": stat, "points": points })))
}

async fn run_histos(State(app): State<AppState>, Path((id, node)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let (id2, node2) = (id.clone(), node.clone());
    let histos = blocking(move || app.ws.run_histos(&id2, &node2)).await?;
    let items: Vec<Value> = histos
        .into_iter()
        .map(|(step, h)| json!({ "step": step, "edges": h.edges, "counts": h.counts }))
        .collect();
    Ok(Json(json!({ "run_id": id, "node": node, "histograms": items })))
}

async fn explainers(State(app): State<AppState>) -> Json<Value> {
    Json(json!(app.ws.explainers()))
}

async fn doc(State(app): State<AppState>, Path(key): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.ws.doc(&key)?)))
}

async fn list_states(State(app): State<AppState>) -> Json<Value> {
    Json(json!(app.ws.list_states()))
}

async fn create_state(State(app): State<AppState>, Body(req): Body<CreateState>) -> ApiResult<impl IntoResponse> {
    let id = blocking(move || app.ws.create_state(&req)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "state_id": id }))))
}

/// The state in model-file form.
async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let state = app.ws.get_state(&id)?;
    let bytes = modelfile::to_json_bytes(&state);
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn metrics(State(app): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Json<Value>> {
    let split = split_param(&q)?;
    let dataset = q.get("dataset").cloned();
    let m = blocking(move || app.ws.evaluate(&id, split, dataset.as_deref())).await?;
    Ok(Json(json!(m)))
}

async fn compare(
    State(app): State<AppState>,
    Path((a, b)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Json<Value>> {
    let split = split_param(&q)?;
    let sample = usize_param(&q, "sample")?;
    let r = blocking(move || app.ws.compare(&a, &b, split, sample)).await?;
    Ok(Json(json!(r)))
}

async fn recommendations(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let recs = blocking(move || app.ws.recommend(&id)).await?;
    Ok(Json(json!(recs)))
}

async fn explain(State(app): State<AppState>, Body(req): Body<ExplainRequest>) -> ApiResult<Json<Value>> {
    let map = blocking(move || app.ws.explain(&req)).await?;
    Ok(Json(json!(map)))
}

async fn scan(State(app): State<AppState>, Body(req): Body<ScanRequest>) -> ApiResult<Json<Value>> {
    let r = blocking(move || app.ws.scan(&req)).await?;
    Ok(Json(json!(r)))
}

#[derive(Debug, Deserialize)]
struct ApplyBody {
    state: String,
    transition: TransitionFunction,
}

#[derive(Debug, Serialize)]
struct ApplyResponse {
    state_id: String,
    transition: TransitionFunction,
}

async fn apply_transition(State(app): State<AppState>, Body(body): Body<ApplyBody>) -> ApiResult<impl IntoResponse> {
    let t = body.transition.normalized();
    let reservation = match t.kind {
        TransitionKind::Retrain { .. } => Some(app.jobs.reserve(&body.state)?),
        _ => None,
    };
    let t2 = t.clone();
    let id = blocking(move || {
        let _reservation = reservation;
        app.ws.apply_transition(&body.state, &t2)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(ApplyResponse { state_id: id, transition: t })))
}

async fn train(State(app): State<AppState>, Body(req): Body<TrainRequest>) -> ApiResult<impl IntoResponse> {
    let status = app.jobs.submit(app.ws.clone(), req)?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn train_status(State(app): State<AppState>, Path(job): Path<String>) -> ApiResult<Json<Value>> {
    let s = app
        .jobs
        .get(&job)
        .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("job {job:?}")))?;
    Ok(Json(json!(s)))
}

async fn list_cards(State(app): State<AppState>, Query(q): Params) -> ApiResult<Json<Value>> {
    let kind = q
        .get("kind")
        .map(|k| serde_json::from_value::<CardKind>(json!(k)))
        .transpose()
        .map_err(|_| ApiError::new(ErrorCode::InvalidParam, "unknown card kind"))?;
    let filter = CardFilter {
        kind,
        group_id: q.get("group_id").cloned(),
        state_id: q.get("state_id").cloned(),
    };
    Ok(Json(json!(app.ws.list_cards(&filter))))
}

async fn add_card(State(app): State<AppState>, Body(card): Body<NewCard>) -> ApiResult<impl IntoResponse> {
    let card = app.ws.add_card(card)?;
    Ok((StatusCode::CREATED, Json(card)))
}

async fn get_card(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.ws.get_card(&id)?)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CardPatch {
    #[serde(default)]
    annotation: Option<String>,
    #[serde(default)]
    group_id: Option<String>,
}

async fn update_card(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Body(p): Body<CardPatch>,
) -> ApiResult<Json<Value>> {
    app.ws.get_card(&id)?;
    if let Some(g) = &p.group_id {
        app.ws.group_cards(std::slice::from_ref(&id), g)?;
    }
    if let Some(text) = &p.annotation {
        app.ws.annotate_card(&id, text)?;
    }
    Ok(Json(json!(app.ws.get_card(&id)?)))
}

async fn delete_card(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.ws.delete_card(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct ReportBody {
    title: String,
    #[serde(default)]
    sections: Vec<Section>,
}

async fn list_reports(State(app): State<AppState>) -> Json<Value> {
    Json(json!(app.ws.list_reports()))
}

async fn create_report(State(app): State<AppState>, Body(b): Body<ReportBody>) -> ApiResult<impl IntoResponse> {
    let r = app.ws.assemble_report(&b.title, b.sections)?;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn get_report(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.ws.get_report(&id)?)))
}

async fn export_report(State(app): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Json<Value>> {
    let format = ExportFormat::parse(q.get("format").map_or("markdown", String::as_str))?;
    let r = blocking(move || app.ws.export_report(&id, format)).await?;
    Ok(Json(json!(r)))
}

/// Serves a file written by an earlier export.
async fn report_file(State(app): State<AppState>, Path((id, path)): Path<(String, String)>) -> ApiResult<Response> {
    app.ws.get_report(&id)?;
    let safe = !path.is_empty()
        && path
            .split('/')
            .all(|p| !p.is_empty() && p != "." && p != ".." && !p.contains('\\'));
    if !safe {
        return Err(Error::NotFound(format!("report file {path:?}")).into());
    }
    let full = app.ws.report_dir(&id).join(&path);
    let bytes = tokio::fs::read(&full)
        .await
        .map_err(|_| ApiError::new(ErrorCode::NotFound, format!("report file {path:?}; export the report first")))?;
    let mime = match full.extension().and_then(|e| e.to_str()) {
        Some("svg") => "image/svg+xml",
        Some("md") => "text/markdown; charset=utf-8",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}
