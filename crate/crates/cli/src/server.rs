//! Local HTTP service.
//!
//! State lives in an immutable [`Session`] behind an `Arc`. Readers clone the
//! `Arc` and render from that snapshot; writers hold a single async mutex,
//! build the next session off to the side and swap it in with the revision
//! bumped, so a render never observes a half-applied edit.

use crate::cli::ServeArgs;
use crate::commands::{load_avatar, rig_for};
use crate::CliError;
use anyhow::anyhow;
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::{Cursor, Write};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use tower_http::services::ServeDir;
use uvavatar::ops::{edit_texture, TexturePatch, UvRect};
use uvavatar::renderer::{make_rig, Intrinsics};
use uvavatar::{Avatar, Camera, Image, Pose, Quat, ShapeParams};

/// Largest image side the service will render.
pub const MAX_SIDE: u32 = 4096;
pub const MAX_TURNTABLE_VIEWS: usize = 360;
pub const DEFAULT_TURNTABLE_VIEWS: usize = 24;

#[derive(Clone, Debug)]
pub struct Session {
    pub avatar: Avatar,
    pub pose: Pose,
    pub camera: Camera,
    pub background: [f64; 3],
    pub revision: u64,
}

pub struct AppState {
    snapshot: RwLock<Arc<Session>>,
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(session: Session) -> Arc<Self> {
        Arc::new(AppState {
            snapshot: RwLock::new(Arc::new(session)),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    pub fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, ui_dir: PathBuf) -> Router {
    Router::new()
        .route("/v1/state", get(get_state))
        .route("/v1/joints", get(get_joints))
        .route("/v1/pose", put(put_pose))
        .route("/v1/shape", put(put_shape))
        .route("/v1/camera", put(put_camera))
        .route("/v1/texture/patch", post(post_patch))
        .route("/v1/render", get(get_render))
        .route("/v1/turntable", get(get_turntable))
        .nest_service("/ui", ServeDir::new(ui_dir))
        .with_state(state)
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let avatar = load_avatar(&args.avatar)?;
    let camera = rig_for(&avatar, &args.view, 1)?.remove(0);
    let session = Session {
        pose: avatar.identity_pose(),
        avatar,
        camera,
        background: [1.0; 3],
        revision: 0,
    };
    let state = AppState::new(session);
    let app = router(state, args.ui_dir.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(anyhow!("starting runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::user(anyhow!("binding {addr}: {e}")))?;
        println!("listening on http://{addr} (viewer at /ui/)");
        axum::serve(listener, app)
            .await
            .map_err(|e| CliError::internal(anyhow!("server: {e}")))
    })
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PoseJson {
    pub root_t: [f64; 3],
    /// `[w, x, y, z]` per joint in template order.
    pub rot: Vec<[f64; 4]>,
}

impl From<&Pose> for PoseJson {
    fn from(p: &Pose) -> Self {
        PoseJson {
            root_t: p.root_translation.into(),
            rot: p.joint_rotations.iter().map(|q| q.to_array()).collect(),
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn get_state(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let s = state.snapshot();
    Json(json!({
        "pose": PoseJson::from(&s.pose),
        "beta": s.avatar.shape().beta,
        "camera": s.camera,
        "background": s.background,
        "revision": s.revision,
    }))
}

async fn get_joints(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let s = state.snapshot();
    let t = s.avatar.template();
    Json(json!({ "names": t.joint_names, "parents": t.parents }))
}

/// Apply `edit` to a copy of the current session and publish it.
async fn mutate<F>(state: Arc<AppState>, expected: Option<u64>, edit: F) -> ApiResult<Json<serde_json::Value>>
where
    F: FnOnce(&mut Session) -> ApiResult<()> + Send + 'static,
{
    let _writer = state.writer.lock().await;
    let current = state.snapshot();
    if let Some(e) = expected {
        if e != current.revision {
            return Err(ApiError {
                status: StatusCode::CONFLICT,
                message: format!("expected revision {e}, current revision is {}", current.revision),
            });
        }
    }
    let mut next = (*current).clone();
    let next = tokio::task::spawn_blocking(move || edit(&mut next).map(|_| next))
        .await
        .map_err(|e| ApiError::internal(format!("edit task failed: {e}")))??;
    let revision = current.revision + 1;
    *state.snapshot.write().expect("snapshot lock poisoned") = Arc::new(Session { revision, ..next });
    Ok(Json(json!({ "revision": revision })))
}

#[derive(Deserialize)]
struct PosePut {
    #[serde(default)]
    root_t: [f64; 3],
    rot: Vec<[f64; 4]>,
    expected_revision: Option<u64>,
}

async fn put_pose(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: PosePut = parse_json(&body)?;
    let pose = Pose {
        root_translation: req.root_t.into(),
        joint_rotations: req.rot.iter().map(|&q| Quat::from(q)).collect(),
    };
    pose.validate(state.snapshot().avatar.joint_count())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    mutate(state, req.expected_revision, move |s| {
        s.pose = pose;
        Ok(())
    })
    .await
}

#[derive(Deserialize)]
struct ShapePut {
    beta: Vec<f64>,
    expected_revision: Option<u64>,
}

async fn put_shape(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: ShapePut = parse_json(&body)?;
    if !req.beta.iter().all(|b| b.is_finite()) {
        return Err(ApiError::bad_request("beta must be finite"));
    }
    mutate(state, req.expected_revision, move |s| {
        s.avatar = s
            .avatar
            .with_shape(ShapeParams { beta: req.beta })
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(())
    })
    .await
}

#[derive(Deserialize)]
struct CameraPut {
    #[serde(flatten)]
    camera: Camera,
    expected_revision: Option<u64>,
}

async fn put_camera(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: CameraPut = parse_json(&body)?;
    req.camera.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    if req.camera.width > MAX_SIDE || req.camera.height > MAX_SIDE {
        return Err(ApiError::bad_request(format!("camera larger than {MAX_SIDE} pixels")));
    }
    mutate(state, req.expected_revision, move |s| {
        s.camera = req.camera;
        Ok(())
    })
    .await
}

#[derive(Deserialize)]
struct PatchQuery {
    u0: f64,
    v0: f64,
    u1: f64,
    v1: f64,
    expected_revision: Option<u64>,
}

async fn post_patch(
    State(state): State<Arc<AppState>>,
    query: Result<Query<PatchQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let rect = UvRect::new(q.u0, q.v0, q.u1, q.v1).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let patch = TexturePatch::from_png(&body, rect).map_err(|e| ApiError::bad_request(e.to_string()))?;
    mutate(state, q.expected_revision, move |s| {
        s.avatar.maps = edit_texture(&s.avatar.maps, &patch).map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(())
    })
    .await
}

#[derive(Deserialize)]
struct SizeQuery {
    w: Option<u32>,
    h: Option<u32>,
    n: Option<usize>,
}

fn sized_camera(camera: &Camera, w: Option<u32>, h: Option<u32>) -> ApiResult<Camera> {
    let (w, h) = match (w, h) {
        (None, None) => return Ok(camera.clone()),
        (Some(w), Some(h)) => (w, h),
        (Some(w), None) => (w, ((w as f64 * camera.height as f64 / camera.width as f64).round() as u32).max(1)),
        (None, Some(h)) => (((h as f64 * camera.width as f64 / camera.height as f64).round() as u32).max(1), h),
    };
    if w == 0 || h == 0 || w > MAX_SIDE || h > MAX_SIDE {
        return Err(ApiError::bad_request(format!("image size must be within 1..={MAX_SIDE}")));
    }
    Ok(camera.resized(w, h))
}

fn render_png(session: &Session, camera: &Camera) -> ApiResult<Vec<u8>> {
    let img: Image = session
        .avatar
        .render(&session.pose, camera, session.background)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    if !img.data.iter().all(|v| v.is_finite()) {
        return Err(ApiError::internal("rendered image contains non-finite values"));
    }
    Ok(img.to_png())
}

fn size_query(q: Result<Query<SizeQuery>, axum::extract::rejection::QueryRejection>) -> ApiResult<SizeQuery> {
    q.map(|Query(q)| q).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn get_render(
    State(state): State<Arc<AppState>>,
    query: Result<Query<SizeQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = size_query(query)?;
    let session = state.snapshot();
    let camera = sized_camera(&session.camera, q.w, q.h)?;
    let revision = session.revision;
    let png = tokio::task::spawn_blocking(move || render_png(&session, &camera))
        .await
        .map_err(|e| ApiError::internal(format!("render task failed: {e}")))??;
    Ok((
        [(header::CONTENT_TYPE, "image/png".to_string()), (header::HeaderName::from_static("x-revision"), revision.to_string())],
        png,
    )
        .into_response())
}

/// Ring around the avatar at the current camera's distance and elevation.
fn turntable_cameras(session: &Session, camera: &Camera, n: usize) -> ApiResult<Vec<Camera>> {
    let target = session.avatar.center();
    let offset = camera.center() - target;
    let radius = offset.norm();
    if !(radius > 0.0) {
        return Err(ApiError::bad_request("camera sits at the avatar center"));
    }
    let elevation = (offset.y / radius).clamp(-1.0, 1.0).asin().to_degrees();
    let intr: Intrinsics = camera.intrinsics();
    make_rig(n, elevation, radius, target, intr).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn get_turntable(
    State(state): State<Arc<AppState>>,
    query: Result<Query<SizeQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let q = size_query(query)?;
    let n = q.n.unwrap_or(DEFAULT_TURNTABLE_VIEWS);
    if n == 0 || n > MAX_TURNTABLE_VIEWS {
        return Err(ApiError::bad_request(format!("n must be within 1..={MAX_TURNTABLE_VIEWS}")));
    }
    let session = state.snapshot();
    let camera = sized_camera(&session.camera, q.w, q.h)?;
    let revision = session.revision;
    let zip = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        let cameras = turntable_cameras(&session, &camera, n)?;
        let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let options = zip::write::SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Stored)
            .last_modified_time(zip::DateTime::default());
        for (k, cam) in cameras.iter().enumerate() {
            let png = render_png(&session, cam)?;
            writer
                .start_file(format!("view_{k:03}.png"), options)
                .and_then(|_| writer.write_all(&png).map_err(Into::into))
                .map_err(|e| ApiError::internal(e.to_string()))?;
        }
        let cursor = writer.finish().map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(cursor.into_inner())
    })
    .await
    .map_err(|e| ApiError::internal(format!("turntable task failed: {e}")))??;
    Ok((
        [(header::CONTENT_TYPE, "application/zip".to_string()), (header::HeaderName::from_static("x-revision"), revision.to_string())],
        zip,
    )
        .into_response())
}
