//! HTTP + JSON interface. Nothing a client can reach before finalization
//! carries an item's origin or source path.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use glioaug_core::io::{load_case, Naming};
use glioaug_core::{Modality, Volume3D};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;
use crate::render::{render_slice, View};
use crate::session::{modality_serde, ImageRef, Judgment, Origin, ReviewReport, ReviewSession};
use crate::store::SessionStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub real: Vec<ImageRef>,
    pub synthetic: Vec<ImageRef>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub progress: Progress,
    pub finalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub view: View,
    pub slices: usize,
    /// Image URL at the middle slice; replace `slice` to page through.
    pub url: String,
}

/// Blinded item payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientItem {
    pub item_id: String,
    #[serde(with = "modality_serde")]
    pub modality: Modality,
    /// Zero-based presentation index.
    pub position: usize,
    pub views: Vec<ViewInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub session_id: String,
    pub progress: Progress,
    /// `None` once every item is judged.
    pub item: Option<ClientItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub item_id: String,
    pub verdict: Origin,
    pub score: u8,
    #[serde(default)]
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentAck {
    pub item_id: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unjudged: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ImageQuery {
    pub view: Option<String>,
    pub slice: Option<usize>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                unjudged: Vec::new(),
            },
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::UnknownSession(_) | ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::Duplicate(_) | ReviewError::Incomplete(_) | ReviewError::NotFinalized => StatusCode::CONFLICT,
            ReviewError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Io { .. } | ReviewError::CorruptLog { .. } | ReviewError::Core(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let mut err = ApiError::new(status, e.to_string());
        if let ReviewError::Incomplete(items) = e {
            err.body.unjudged = items;
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    store: SessionStore,
    image_root: PathBuf,
    volumes: Mutex<HashMap<(String, Modality), Arc<Volume3D<f32>>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

/// Rejects absolute paths and parent components.
fn confined(root: &Path, case: &str) -> Result<PathBuf, ReviewError> {
    let rel = Path::new(case);
    if case.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ReviewError::Invalid(format!("image path {case:?} must be relative to the image root")));
    }
    Ok(root.join(rel))
}

impl AppState {
    /// Replays the session logs in `sessions_dir`; images are read from
    /// case directories under `image_root`.
    pub fn open(sessions_dir: &Path, image_root: &Path) -> Result<Self, ReviewError> {
        Ok(AppState(Arc::new(Inner {
            store: SessionStore::open(sessions_dir)?,
            image_root: image_root.to_path_buf(),
            volumes: Mutex::new(HashMap::new()),
        })))
    }

    pub fn store(&self) -> &SessionStore {
        &self.0.store
    }

    fn volume(&self, r: &ImageRef) -> Result<Arc<Volume3D<f32>>, ReviewError> {
        let key = (r.case.clone(), r.modality);
        if let Some(v) = self.0.volumes.lock().get(&key) {
            return Ok(v.clone());
        }
        let dir = confined(&self.0.image_root, &r.case)?;
        let case = load_case::<f32>(&dir, Naming::Auto)
            .map_err(|e| ReviewError::Invalid(format!("cannot load {}: {e}", r.case)))?;
        let v = Arc::new(
            case.volume(r.modality)
                .map_err(|e| ReviewError::Invalid(format!("{}: {e}", r.case)))?
                .clone(),
        );
        self.0.volumes.lock().insert(key, v.clone());
        Ok(v)
    }

    async fn volume_blocking(&self, r: ImageRef) -> Result<Arc<Volume3D<f32>>, ReviewError> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || state.volume(&r))
            .await
            .map_err(|e| ReviewError::Invalid(format!("image loader failed: {e}")))?
    }
}

fn client_item(session: &ReviewSession, position: usize) -> ClientItem {
    let item = &session.items[position];
    let views = View::ALL
        .iter()
        .map(|&view| {
            let slices = view.slices(item.shape);
            ViewInfo {
                view,
                slices,
                url: format!(
                    "/sessions/{}/items/{}/image?view={}&slice={}",
                    session.session_id,
                    item.item_id,
                    view.as_str(),
                    slices / 2
                ),
            }
        })
        .collect();
    ClientItem {
        item_id: item.item_id.clone(),
        modality: item.modality,
        position,
        views,
    }
}

fn progress(s: &ReviewSession) -> Progress {
    Progress {
        judged: s.judgments.len(),
        total: s.items.len(),
    }
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateSessionResponse>)> {
    let Json(req) = body?;
    let shaped = |refs: Vec<ImageRef>| async {
        let mut out = Vec::with_capacity(refs.len());
        for r in refs {
            let v = state.volume_blocking(r.clone()).await?;
            out.push((r, v.shape()));
        }
        Ok::<_, ReviewError>(out)
    };
    let real = shaped(req.real).await?;
    let synthetic = shaped(req.synthetic).await?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = ReviewSession::create(id.clone(), &real, &synthetic, req.seed)?;
    let total = session.items.len();
    state.store().insert(session)?;
    Ok((StatusCode::CREATED, Json(CreateSessionResponse { session_id: id, total })))
}

async fn status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionStatus>> {
    Ok(Json(state.store().with(&id, |s| SessionStatus {
        session_id: s.session_id.clone(),
        progress: progress(s),
        finalized: s.finalized,
    })?))
}

async fn next(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<NextResponse>> {
    Ok(Json(state.store().with(&id, |s| NextResponse {
        session_id: s.session_id.clone(),
        progress: progress(s),
        item: s.next_unjudged().map(|(i, _)| client_item(s, i)),
    })?))
}

async fn judge(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<JudgmentRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JudgmentAck>)> {
    let Json(req) = body?;
    let judgment = Judgment {
        verdict: req.verdict,
        score: req.score,
        comment: req.comment,
    };
    let (judged, total) = state.store().record(&id, &req.item_id, judgment)?;
    Ok((
        StatusCode::CREATED,
        Json(JudgmentAck {
            item_id: req.item_id,
            progress: Progress { judged, total },
        }),
    ))
}

async fn finalize(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ReviewReport>> {
    Ok(Json(state.store().finalize(&id)?))
}

async fn report(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ReviewReport>> {
    Ok(Json(state.store().report(&id)?))
}

async fn image(
    State(state): State<AppState>,
    UrlPath((id, item_id)): UrlPath<(String, String)>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let view: View = q.view.as_deref().unwrap_or("axial").parse()?;
    let item = state
        .store()
        .with(&id, |s| s.item(&item_id).cloned())?
        .ok_or_else(|| ReviewError::UnknownItem(item_id.clone()))?;
    let slice = q.slice.unwrap_or(view.slices(item.shape) / 2);
    let volume = state.volume_blocking(item.image).await?;
    let png = render_slice(&volume, view, slice)?;
    Ok((
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")],
        png,
    )
        .into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/judgments", post(judge))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/items/{item_id}/image", get(image))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
