//! HTTP access to a built dataset: metadata, indexes, raw block records,
//! server-side cut resolution and id selections.
//!
//! | route | response |
//! |---|---|
//! | `GET /api/meta` | `meta.json` verbatim |
//! | `GET /api/index/{s}` | `index_{s}.bin` verbatim |
//! | `GET /api/block/{s}/{path}` | one block record, header to CRC |
//! | `POST /api/resolve` | ordered block descriptors for a camera |
//! | `POST /api/selection` | `{"token": "<16 hex>"}` |
//! | `GET /api/selection/{token}/{s}/{path}` | membership bitmask |

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use cosmolod_core::camera::Camera;
use cosmolod_core::cut::select_cut;
use cosmolod_core::dataset::{index_file, Dataset};
use cosmolod_core::selection::{selection_flags, SelectionSet};
use cosmolod_core::NodePath;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub mod selection;

use selection::{format_token, parse_token, SelectionTable};

/// Request bodies up to this size are accepted (a full selection is ~20 MiB).
pub const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    TooLarge(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, self.to_string()).into_response()
    }
}

impl From<cosmolod_core::Error> for ApiError {
    fn from(e: cosmolod_core::Error) -> Self {
        log::error!("{e}");
        ApiError::Internal(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    dataset: Dataset,
    selections: Mutex<SelectionTable>,
}

impl AppState {
    pub fn new(dataset: Dataset) -> Self {
        let salt = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or_default();
        AppState {
            dataset,
            selections: Mutex::new(SelectionTable::new(salt)),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolveRequest {
    pub interval: usize,
    pub camera: Camera,
    pub tau: f64,
    pub budget: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub ids: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub token: String,
}

/// Resolves a request against a dataset; shared by the HTTP handler and
/// in-process callers. Returns the JSON body.
pub fn resolve(dataset: &Dataset, req: &ResolveRequest) -> ApiResult<Vec<u8>> {
    let index = dataset
        .index(req.interval)
        .ok_or_else(|| ApiError::NotFound(format!("no interval {}", req.interval)))?;
    req.camera
        .validate()
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    if !(req.tau > 0.0 && req.tau.is_finite()) {
        return Err(ApiError::BadRequest(format!("tau must be positive, got {}", req.tau)));
    }
    let cut = select_cut(
        index,
        &dataset.meta().root,
        req.interval as u32,
        &req.camera,
        req.tau,
        req.budget,
    )
    .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(cut.to_json())
}

fn parse_interval(ds: &Dataset, s: &str) -> ApiResult<usize> {
    let s: usize = s
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("bad interval {s:?}")))?;
    if s >= ds.intervals() {
        return Err(ApiError::NotFound(format!("no interval {s}")));
    }
    Ok(s)
}

fn parse_path(s: &str) -> ApiResult<NodePath> {
    let code: u64 = s
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("bad node path {s:?}")))?;
    // A well-formed integer that is not a locational code names no node.
    NodePath::from_code(code).map_err(|_| ApiError::NotFound(format!("no node {code}")))
}

fn octets(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
}

fn json(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn get_meta(State(st): State<Arc<AppState>>) -> Response {
    json(st.dataset.meta_bytes().to_vec())
}

async fn get_index(State(st): State<Arc<AppState>>, UrlPath(s): UrlPath<String>) -> ApiResult<Response> {
    let s = parse_interval(&st.dataset, &s)?;
    let path = index_file(st.dataset.dir(), s);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?;
    Ok(octets(bytes))
}

async fn get_block(
    State(st): State<Arc<AppState>>,
    UrlPath((s, path)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let s = parse_interval(&st.dataset, &s)?;
    let path = parse_path(&path)?;
    let bytes = blocking(move || Ok(st.dataset.block_bytes(s, path)?)).await?;
    bytes
        .map(octets)
        .ok_or_else(|| ApiError::NotFound(format!("no block {path} in interval {s}")))
}

async fn post_resolve(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: ResolveRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed resolve request: {e}")))?;
    let out = blocking(move || resolve(&st.dataset, &req)).await?;
    Ok(json(out))
}

async fn post_selection(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: SelectionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("malformed selection: {e}")))?;
    let set = SelectionSet::new(req.ids).map_err(|e| ApiError::TooLarge(e.to_string()))?;
    let token = st.selections.lock().expect("selection table poisoned").register(set);
    let body = serde_json::to_vec(&SelectionResponse {
        token: format_token(token),
    })
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(json(body))
}

async fn get_selection_flags(
    State(st): State<Arc<AppState>>,
    UrlPath((token, s, path)): UrlPath<(String, String, String)>,
) -> ApiResult<Response> {
    let token = parse_token(&token).ok_or_else(|| ApiError::NotFound(format!("unknown token {token:?}")))?;
    let set = st
        .selections
        .lock()
        .expect("selection table poisoned")
        .get(token)
        .ok_or_else(|| ApiError::NotFound(format!("unknown token {}", format_token(token))))?;
    let s = parse_interval(&st.dataset, &s)?;
    let path = parse_path(&path)?;
    let mask = blocking(move || {
        let block = st
            .dataset
            .block(s, path)?
            .ok_or_else(|| ApiError::NotFound(format!("no block {path} in interval {s}")))?;
        Ok(selection_flags(&block.id, &set))
    })
    .await?;
    Ok(octets(mask))
}

/// API routes, plus static files from `web_root` for everything else.
pub fn router(state: Arc<AppState>, web_root: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(get_meta))
        .route("/api/index/{s}", get(get_index))
        .route("/api/block/{s}/{path}", get(get_block))
        .route("/api/resolve", post(post_resolve))
        .route("/api/selection", post(post_selection))
        .route("/api/selection/{token}/{s}/{path}", get(get_selection_flags))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match web_root {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub dataset: PathBuf,
    pub addr: SocketAddr,
    pub web_root: Option<PathBuf>,
}

/// Opens the dataset and binds the listener. Fails before serving if the
/// dataset is invalid.
pub async fn bind(opts: &ServeOptions) -> Result<(tokio::net::TcpListener, Router), ServeError> {
    let dataset = Dataset::open(&opts.dataset)?;
    let state = Arc::new(AppState::new(dataset));
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    Ok((listener, router(state, opts.web_root.as_deref())))
}

/// Serves until the process is stopped.
pub async fn serve(opts: &ServeOptions) -> Result<(), ServeError> {
    let (listener, app) = bind(opts).await?;
    log::info!("serving {} on {}", opts.dataset.display(), listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

/// Serves in the background on the current runtime and returns the bound
/// address; binding port 0 picks a free port.
pub async fn spawn(opts: &ServeOptions) -> Result<(SocketAddr, tokio::task::JoinHandle<()>), ServeError> {
    let (listener, app) = bind(opts).await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((addr, handle))
}

/// Startup failures.
#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Dataset(#[from] cosmolod_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
