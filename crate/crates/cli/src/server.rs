//! HTTP service backing the annotation tool. Coordinates on the wire are
//! native-resolution pixels.
//!
//! - `GET /videos`: ids with frame counts.
//! - `GET /videos/{id}/frames/{n}`: the raw depth PNG of an annotatable frame.
//! - `GET /videos/{id}/annotations`: every annotated frame of a video.
//! - `PUT /videos/{id}/annotations/{n}`: replaces one frame's annotation.
//! - `GET /skeleton`: joint and connection topology.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use limbpose_core::dataset::{
    frame_path, list_frames, load_annotations, save_annotations, AnnotationRecord, FrameSpec, JointAnnotation,
    Manifest, ManifestEntry,
};
use limbpose_core::skeleton::JOINT_NAMES;
use limbpose_core::{Point, SkeletonModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex;

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub id: String,
    /// Frames on the annotation cadence.
    pub frames: usize,
    pub annotated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLabel {
    pub name: String,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_index: usize,
    pub joints: Vec<JointLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub video_id: String,
    /// `[width, height]` of the coordinate frame.
    pub resolution: [usize; 2],
    pub frames: Vec<FrameAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

struct Video {
    entry: ManifestEntry,
    /// Serializes writes to the video's annotation file.
    lock: Mutex<()>,
}

pub struct ServiceState {
    videos: BTreeMap<String, Video>,
    /// Native geometry; annotations are read and written without scaling.
    spec: FrameSpec,
    cadence: usize,
}

impl ServiceState {
    pub fn new(manifest: Manifest, frame: &FrameSpec, cadence: usize) -> Result<Self> {
        if cadence == 0 {
            return Err(CliError::Config("cadence must be at least 1".into()));
        }
        let mut videos = BTreeMap::new();
        for entry in manifest.entries {
            if videos.contains_key(&entry.video_id) {
                return Err(CliError::Config(format!("video `{}` is listed twice", entry.video_id)));
            }
            videos.insert(
                entry.video_id.clone(),
                Video {
                    entry,
                    lock: Mutex::new(()),
                },
            );
        }
        Ok(ServiceState {
            videos,
            spec: FrameSpec::native(frame.native_width, frame.native_height, frame.fps),
            cadence,
        })
    }

    fn video(&self, id: &str) -> std::result::Result<&Video, Response> {
        self.videos
            .get(id)
            .ok_or_else(|| not_found(format!("unknown video `{id}`")))
    }

    /// Annotatable frames: present on disk and on the cadence.
    fn frames(&self, video: &Video) -> Result<Vec<usize>> {
        Ok(list_frames(&video.entry.frames_dir)?
            .into_iter()
            .filter(|i| i % self.cadence == 0)
            .collect())
    }

    fn check_frame(&self, video: &Video, n: usize) -> std::result::Result<PathBuf, Response> {
        let path = frame_path(&video.entry.frames_dir, n);
        if n % self.cadence != 0 || !path.is_file() {
            return Err(not_found(format!(
                "frame {n} of video `{}` is not available for annotation",
                video.entry.video_id
            )));
        }
        Ok(path)
    }

    fn records(&self, video: &Video) -> Result<Vec<AnnotationRecord>> {
        let path = &video.entry.annotations;
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(load_annotations(path, &self.spec)?)
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/videos", get(list_videos))
        .route("/videos/{id}/frames/{n}", get(get_frame))
        .route("/videos/{id}/annotations", get(get_annotations))
        .route("/videos/{id}/annotations/{n}", axum::routing::put(put_annotation))
        .route("/skeleton", get(get_skeleton))
        .with_state(state)
}

/// Binds `addr` and serves until the process is interrupted.
pub async fn serve(state: ServiceState, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
    log::info!("annotation service listening on {}", listener.local_addr().map_err(|e| CliError::io("<socket>", e))?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::io("<socket>", e))
}

fn not_found(message: String) -> Response {
    (StatusCode::NOT_FOUND, Json(serde_json::json!({ "error": message }))).into_response()
}

fn internal(e: CliError) -> Response {
    log::error!("{e}");
    (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({ "error": e.to_string() }))).into_response()
}

fn bad_request(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "errors": errors }))).into_response()
}

async fn list_videos(State(state): State<Arc<ServiceState>>) -> Response {
    let mut out = Vec::new();
    for (id, video) in &state.videos {
        let frames = match state.frames(video) {
            Ok(f) => f.len(),
            Err(e) => return internal(e),
        };
        let annotated = match state.records(video) {
            Ok(r) => r.len(),
            Err(e) => return internal(e),
        };
        out.push(VideoSummary {
            id: id.clone(),
            frames,
            annotated,
        });
    }
    Json(out).into_response()
}

async fn get_frame(State(state): State<Arc<ServiceState>>, UrlPath((id, n)): UrlPath<(String, usize)>) -> Response {
    let path = match state.video(&id).and_then(|v| state.check_frame(v, n)) {
        Ok(p) => p,
        Err(r) => return r,
    };
    match fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => internal(CliError::io(path, e)),
    }
}

fn frame_annotation(rec: &AnnotationRecord) -> FrameAnnotation {
    FrameAnnotation {
        frame_index: rec.frame_index,
        joints: rec
            .joints
            .iter()
            .enumerate()
            .map(|(j, a)| JointLabel {
                name: JOINT_NAMES[j].to_string(),
                x: a.position.map(|p| p.x),
                y: a.position.map(|p| p.y),
                visible: a.visible,
            })
            .collect(),
    }
}

async fn get_annotations(State(state): State<Arc<ServiceState>>, UrlPath(id): UrlPath<String>) -> Response {
    let video = match state.video(&id) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let records = {
        let _guard = video.lock.lock().await;
        state.records(video)
    };
    match records {
        Ok(records) => Json(VideoAnnotations {
            video_id: id,
            resolution: [state.spec.native_width, state.spec.native_height],
            frames: records.iter().map(frame_annotation).collect(),
        })
        .into_response(),
        Err(e) => internal(e),
    }
}

/// Parses a PUT body into the 12 joint annotations of one frame. Joints the
/// body does not mention are stored as not visible without a position.
pub fn parse_frame_body(body: &[u8], spec: &FrameSpec) -> std::result::Result<[JointAnnotation; 12], Vec<FieldError>> {
    let err = |field: &str, message: String| FieldError {
        field: field.to_string(),
        message,
    };
    let value: Value = serde_json::from_slice(body).map_err(|e| vec![err("body", format!("invalid JSON: {e}"))])?;
    let Some(list) = value.get("joints") else {
        return Err(vec![err("joints", "missing".into())]);
    };
    let Some(list) = list.as_array() else {
        return Err(vec![err("joints", "must be an array".into())]);
    };
    let skeleton = SkeletonModel::new();
    let mut errors = Vec::new();
    let mut joints = [JointAnnotation::hidden(); 12];
    let mut seen = BTreeSet::new();
    for (i, item) in list.iter().enumerate() {
        let field = |name: &str| format!("joints[{i}].{name}");
        let Some(obj) = item.as_object() else {
            errors.push(err(&format!("joints[{i}]"), "must be an object".into()));
            continue;
        };
        let jid = match obj.get("name").and_then(Value::as_str) {
            None => {
                errors.push(err(&field("name"), "missing or not a string".into()));
                None
            }
            Some(name) => match skeleton.joint_index(name) {
                Err(_) => {
                    errors.push(err(&field("name"), format!("unknown joint `{name}`")));
                    None
                }
                Ok(j) if !seen.insert(j) => {
                    errors.push(err(&field("name"), format!("joint `{name}` appears twice")));
                    None
                }
                Ok(j) => Some(j),
            },
        };
        let visible = match obj.get("visible").and_then(Value::as_bool) {
            Some(v) => Some(v),
            None => {
                errors.push(err(&field("visible"), "missing or not a boolean".into()));
                None
            }
        };
        let mut coord = |key: &str, limit: usize| -> Option<Option<f64>> {
            match obj.get(key) {
                None | Some(Value::Null) => Some(None),
                Some(v) => match v.as_f64() {
                    Some(c) if c.is_finite() && c >= 0.0 && c < limit as f64 => Some(Some(c)),
                    Some(c) => {
                        errors.push(err(&field(key), format!("{c} outside [0, {limit})")));
                        None
                    }
                    None => {
                        errors.push(err(&field(key), "must be a number or null".into()));
                        None
                    }
                },
            }
        };
        let x = coord("x", spec.native_width);
        let y = coord("y", spec.native_height);
        let (Some(jid), Some(visible), Some(x), Some(y)) = (jid, visible, x, y) else {
            continue;
        };
        let position = match (x, y) {
            (Some(x), Some(y)) => Some(Point::new(x, y)),
            (None, None) => None,
            _ => {
                errors.push(err(&field("x"), "x and y must be given together".into()));
                continue;
            }
        };
        if visible && position.is_none() {
            errors.push(err(&field("x"), "a visible joint needs coordinates".into()));
            continue;
        }
        joints[jid] = JointAnnotation { position, visible };
    }
    if errors.is_empty() {
        Ok(joints)
    } else {
        Err(errors)
    }
}

async fn put_annotation(
    State(state): State<Arc<ServiceState>>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    body: Bytes,
) -> Response {
    let video = match state.video(&id) {
        Ok(v) => v,
        Err(r) => return r,
    };
    if let Err(r) = state.check_frame(video, n) {
        return r;
    }
    let joints = match parse_frame_body(&body, &state.spec) {
        Ok(j) => j,
        Err(errors) => return bad_request(errors),
    };
    let _guard = video.lock.lock().await;
    let result = (|| -> Result<AnnotationRecord> {
        let mut records = state.records(video)?;
        let record = AnnotationRecord {
            video_id: id.clone(),
            frame_index: n,
            joints,
        };
        match records.iter_mut().find(|r| r.frame_index == n) {
            Some(r) => *r = record.clone(),
            None => records.push(record.clone()),
        }
        replace_annotations(&video.entry.annotations, &records, &state.spec)?;
        Ok(record)
    })();
    match result {
        Ok(record) => Json(frame_annotation(&record)).into_response(),
        Err(e) => internal(e),
    }
}

/// Writes a sibling file and renames it over `path`, so readers never see a
/// partial file.
fn replace_annotations(path: &Path, records: &[AnnotationRecord], spec: &FrameSpec) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("csv.tmp");
    save_annotations(&tmp, records, spec)?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

async fn get_skeleton() -> Response {
    Json(SkeletonModel::new().description()).into_response()
}
