use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use nocode_core::analytics::{graph_dot, graph_export, project_kinds, project_rollbacks};
use nocode_core::model::JobId;
use nocode_core::{Error, ErrorKind};

use crate::service::Service;
use crate::{ApiError, ServerConfig, ServiceOptions, Submission};

pub const API_PREFIX: &str = "/api/v1";

/// Longest a `GET /jobs/{id}?wait_ms=` call may block.
const MAX_WAIT: Duration = Duration::from_secs(30);

pub fn status_for(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::Validation | ErrorKind::Config => StatusCode::BAD_REQUEST,
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict
        | ErrorKind::AtRoot
        | ErrorKind::NoChange
        | ErrorKind::ContractViolation
        | ErrorKind::PortConflict => StatusCode::CONFLICT,
        ErrorKind::EmptyProjection | ErrorKind::InstallFailed => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Provider | ErrorKind::FixtureMissing => StatusCode::BAD_GATEWAY,
        ErrorKind::ProviderTimeout => StatusCode::GATEWAY_TIMEOUT,
        ErrorKind::Storage | ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

pub struct HttpError(StatusCode, ApiError);

impl From<Error> for HttpError {
    fn from(e: Error) -> Self {
        HttpError(status_for(e.kind()), ApiError::from(&e))
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type Reply<T> = Result<T, HttpError>;
type Svc = State<Arc<Service>>;

async fn blocking<T: Send + 'static>(
    svc: &Arc<Service>,
    f: impl FnOnce(&Service) -> nocode_core::Result<T> + Send + 'static,
) -> Reply<T> {
    let svc = svc.clone();
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(r) => r.map_err(HttpError::from),
        Err(e) => Err(HttpError(
            StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::new("internal", format!("handler panicked: {e}")),
        )),
    }
}

/// JSON bodies are parsed here so malformed input gets the usual error shape.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Reply<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| Error::Validation(format!("request body: {e}")).into())
}

#[derive(Clone)]
struct Auth(Option<Arc<str>>);

async fn require_token(State(auth): State<Auth>, req: Request, next: Next) -> Response {
    let Some(token) = &auth.0 else {
        return next.run(req).await;
    };
    if req.uri().path() == format!("{API_PREFIX}/config") {
        return next.run(req).await;
    }
    let given = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    if given.is_some_and(|g| constant_time_eq(g.as_bytes(), token.as_bytes())) {
        next.run(req).await
    } else {
        (
            StatusCode::UNAUTHORIZED,
            [(header::WWW_AUTHENTICATE, "Bearer")],
            Json(ApiError::new("unauthorized", "missing or wrong bearer token")),
        )
            .into_response()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn router(service: Arc<Service>) -> Router {
    let auth = Auth(service.config().token.as_deref().map(Arc::from));
    let api = Router::new()
        .route("/config", get(runtime_config))
        .route("/profiles", get(profiles))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{project}", get(get_project))
        .route("/projects/{project}/pages", post(add_page))
        .route("/projects/{project}/features/{feature}", post(apply_feature))
        .route("/projects/{project}/prompts", post(submit))
        .route("/projects/{project}/rollback", post(rollback))
        .route("/projects/{project}/checkout", post(checkout))
        .route("/projects/{project}/history", get(history))
        .route("/projects/{project}/snapshots", get(snapshots))
        .route("/projects/{project}/graph", get(graph))
        .route("/projects/{project}/stats", get(stats))
        .route("/projects/{project}/files", get(files))
        .route("/projects/{project}/files/{*path}", get(file))
        .route("/projects/{project}/install", post(install))
        .route("/projects/{project}/run", get(run_status).post(run))
        .route("/projects/{project}/stop", post(stop))
        .route("/jobs/{job}", get(job));
    Router::new()
        .nest(API_PREFIX, api)
        .layer(middleware::from_fn_with_state(auth, require_token))
        .with_state(service)
}

#[derive(Serialize)]
struct RuntimeConfig {
    api_base: &'static str,
    auth_required: bool,
    version: &'static str,
    provider_mode: nocode_core::gateway::ProviderMode,
    model_id: String,
    poll_interval_ms: u64,
    max_poll_interval_ms: u64,
}

/// What a browser client needs before it has a token.
async fn runtime_config(State(svc): Svc) -> Json<RuntimeConfig> {
    let c = svc.config();
    Json(RuntimeConfig {
        api_base: API_PREFIX,
        auth_required: c.token.is_some(),
        version: env!("CARGO_PKG_VERSION"),
        provider_mode: c.provider.mode,
        model_id: c.provider.model_id.clone(),
        poll_interval_ms: 1000,
        max_poll_interval_ms: 5000,
    })
}

#[derive(Serialize)]
struct ProfileSummary {
    id: String,
    name: String,
    features: Vec<String>,
}

async fn profiles(State(svc): Svc) -> Json<Vec<ProfileSummary>> {
    Json(
        svc.catalog()
            .profiles()
            .map(|p| ProfileSummary {
                id: p.id.clone(),
                name: p.name.clone(),
                features: p.predefined_features.iter().map(|f| f.id.clone()).collect(),
            })
            .collect(),
    )
}

async fn list_projects(State(svc): Svc) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, |s| s.projects()).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewProject {
    name: String,
    #[serde(default)]
    context_description: String,
    #[serde(default = "default_profile")]
    stack_profile: String,
}

fn default_profile() -> String {
    "vue-express".into()
}

async fn create_project(State(svc): Svc, bytes: Bytes) -> Reply<impl IntoResponse> {
    let req: NewProject = body(&bytes)?;
    let view = blocking(&svc, move |s| {
        let p = s.create_project(&req.name, &req.context_description, &req.stack_profile)?;
        s.view(p)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_project(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.view(s.project(&project)?)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewPage {
    name: String,
    #[serde(default)]
    description: String,
}

async fn add_page(State(svc): Svc, Path(project): Path<String>, bytes: Bytes) -> Reply<impl IntoResponse> {
    let req: NewPage = body(&bytes)?;
    let page = blocking(&svc, move |s| s.add_page(&project, &req.name, &req.description)).await?;
    Ok((StatusCode::CREATED, Json(page)))
}

#[derive(Serialize)]
struct FeatureApplied {
    snapshot: nocode_core::version::Snapshot,
    applied: Vec<String>,
}

async fn apply_feature(State(svc): Svc, Path((project, feature)): Path<(String, String)>) -> Reply<impl IntoResponse> {
    let (snapshot, result) = blocking(&svc, move |s| s.apply_feature(&project, &feature)).await?;
    Ok((
        StatusCode::CREATED,
        Json(FeatureApplied {
            snapshot,
            applied: result.applied_paths().map(|p| p.to_string()).collect(),
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewPrompt {
    kind: String,
    page: String,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    text: String,
}

async fn submit(State(svc): Svc, Path(project): Path<String>, bytes: Bytes) -> Reply<impl IntoResponse> {
    let req: NewPrompt = body(&bytes)?;
    let kind = req.kind.parse().map_err(|e| Error::Validation(format!("{e}")))?;
    let submission = Submission {
        kind,
        page: req.page,
        target: req.target,
        text: req.text,
    };
    let job = blocking(&svc, move |s| s.submit(&project, &submission)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

#[derive(Deserialize)]
struct WaitQuery {
    #[serde(default)]
    wait_ms: Option<u64>,
}

async fn job(State(svc): Svc, Path(job): Path<String>, Query(q): Query<WaitQuery>) -> Reply<impl IntoResponse> {
    let id = JobId(job);
    let wait = q.wait_ms.map(Duration::from_millis).unwrap_or_default().min(MAX_WAIT);
    Ok(Json(blocking(&svc, move |s| s.wait_job(&id, wait)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RollbackBody {
    #[serde(default = "one")]
    steps: u32,
}

fn one() -> u32 {
    1
}

async fn rollback(State(svc): Svc, Path(project): Path<String>, bytes: Bytes) -> Reply<impl IntoResponse> {
    let req: RollbackBody = body(&bytes)?;
    Ok(Json(blocking(&svc, move |s| s.rollback(&project, req.steps)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckoutBody {
    snapshot: String,
}

async fn checkout(State(svc): Svc, Path(project): Path<String>, bytes: Bytes) -> Reply<impl IntoResponse> {
    let req: CheckoutBody = body(&bytes)?;
    Ok(Json(blocking(&svc, move |s| s.checkout(&project, &req.snapshot)).await?))
}

async fn history(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.history(&project)).await?))
}

async fn snapshots(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.snapshots(&project)).await?))
}

#[derive(Deserialize)]
struct GraphQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn graph(State(svc): Svc, Path(project): Path<String>, Query(q): Query<GraphQuery>) -> Reply<Response> {
    let graph = blocking(&svc, move |s| s.graph(&project)).await?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(graph_export(&graph)).into_response()),
        Some("dot") => Ok(([(header::CONTENT_TYPE, "text/vnd.graphviz; charset=utf-8")], graph_dot(&graph)).into_response()),
        Some(other) => Err(Error::Validation(format!("unknown graph format `{other}`")).into()),
    }
}

#[derive(Serialize)]
struct Stats {
    kinds: nocode_core::analytics::KindCounts,
    rollbacks: nocode_core::analytics::ParticipantRollbacks,
}

async fn stats(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    let stats = blocking(&svc, move |s| {
        let p = s.project(&project)?;
        s.store().read(|c| {
            Ok(Stats {
                kinds: project_kinds(c, &p)?,
                rollbacks: project_rollbacks(c, &p)?,
            })
        })
    })
    .await?;
    Ok(Json(stats))
}

async fn files(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.files(&project)).await?))
}

/// Raw bytes of one file at HEAD.
async fn file(State(svc): Svc, Path((project, path)): Path<(String, String)>) -> Reply<impl IntoResponse> {
    let entry = blocking(&svc, move |s| s.file(&project, &path)).await?;
    let mut headers = HeaderMap::new();
    let ctype = if entry.content_str().is_some() { "text/plain; charset=utf-8" } else { "application/octet-stream" };
    headers.insert(header::CONTENT_TYPE, ctype.parse().expect("static header"));
    headers.insert(header::ETAG, format!("\"{}\"", entry.digest.to_hex()).parse().expect("hex is ascii"));
    Ok((headers, entry.content))
}

async fn install(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.install(&project)).await?))
}

async fn run(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.run(&project)).await?))
}

async fn run_status(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.run_status(&project)).await?))
}

async fn stop(State(svc): Svc, Path(project): Path<String>) -> Reply<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.stop(&project)).await?))
}

/// Opens the service and serves it until ctrl-c.
pub fn serve(config: ServerConfig) -> nocode_core::Result<()> {
    let bind = config.bind;
    let service = Arc::new(Service::open(ServiceOptions::new(config))?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let app = router(service.clone());
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        log::info!("listening on http://{}{API_PREFIX}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    let _ = rt.block_on(tokio::task::spawn_blocking(move || service.shutdown()));
    Ok(())
}
