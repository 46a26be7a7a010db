use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use limbpose_cli::commands::{synth, SynthOptions};
use limbpose_cli::server::{router, serve, ServiceState, VideoAnnotations, VideoSummary};
use limbpose_core::dataset::{load_annotations, read_depth_png, FrameSpec, Manifest};
use limbpose_core::skeleton::{SkeletonDescription, JOINT_NAMES};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    dir: tempfile::TempDir,
    manifest: Manifest,
    frame: FrameSpec,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let frame = FrameSpec {
        width: 64,
        height: 48,
        native_width: 128,
        native_height: 96,
        fps: 30.0,
    };
    let manifest = synth(&SynthOptions {
        output: dir.path().to_path_buf(),
        videos: 2,
        length: 4,
        frame,
        ..SynthOptions::default()
    })
    .unwrap();
    Fixture { dir, manifest, frame }
}

fn app(f: &Fixture) -> Router {
    router(Arc::new(ServiceState::new(f.manifest.clone(), &f.frame, 5).unwrap()))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn labels(points: &[(f64, f64)], skipped: usize) -> Value {
    let joints: Vec<Value> = JOINT_NAMES
        .iter()
        .zip(points)
        .enumerate()
        .map(|(j, (name, &(x, y)))| {
            if j == skipped {
                json!({ "name": name, "x": null, "y": null, "visible": false })
            } else {
                json!({ "name": name, "x": x, "y": y, "visible": true })
            }
        })
        .collect();
    json!({ "joints": joints })
}

#[tokio::test]
async fn lists_videos_with_frame_counts() {
    let f = fixture();
    let (status, body) = send(&app(&f), "GET", "/videos", None).await;
    assert_eq!(status, StatusCode::OK);
    let videos: Vec<VideoSummary> = serde_json::from_slice(&body).unwrap();
    assert_eq!(videos.len(), 2);
    assert_eq!(videos[0].id, "synth_000");
    assert_eq!(videos[0].frames, 4);
    assert_eq!(videos[0].annotated, 4);
}

#[tokio::test]
async fn serves_frames_on_the_cadence_only() {
    let f = fixture();
    let app = app(&f);
    let (status, body) = send(&app, "GET", "/videos/synth_000/frames/5", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&body[1..4], b"PNG");
    let path = f.dir.path().join("served.png");
    std::fs::write(&path, &body).unwrap();
    assert_eq!(read_depth_png(&path).unwrap().dim(), (96, 128));

    for uri in [
        "/videos/synth_000/frames/999999",
        "/videos/synth_000/frames/3",
        "/videos/nope/frames/0",
    ] {
        assert_eq!(send(&app, "GET", uri, None).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test]
async fn put_then_get_returns_identical_coordinates() {
    let f = fixture();
    let app = app(&f);
    let points: Vec<(f64, f64)> = (0..12).map(|j| (10.25 + 7.5 * j as f64, 3.0 + 6.125 * j as f64)).collect();
    let (status, _) = send(&app, "PUT", "/videos/synth_001/annotations/10", Some(labels(&points, 4))).await;
    assert_eq!(status, StatusCode::OK);

    let (status, body) = send(&app, "GET", "/videos/synth_001/annotations", None).await;
    assert_eq!(status, StatusCode::OK);
    let ann: VideoAnnotations = serde_json::from_slice(&body).unwrap();
    assert_eq!(ann.resolution, [128, 96]);
    let frame = ann.frames.iter().find(|fr| fr.frame_index == 10).unwrap();
    for (j, label) in frame.joints.iter().enumerate() {
        assert_eq!(label.name, JOINT_NAMES[j]);
        if j == 4 {
            assert!(!label.visible);
            assert_eq!((label.x, label.y), (None, None));
        } else {
            assert!(label.visible);
            assert_eq!((label.x.unwrap(), label.y.unwrap()), points[j]);
        }
    }
    // Other frames are untouched and the file stays readable by the loader.
    assert_eq!(ann.frames.len(), 4);
    let csv = &f.manifest.get("synth_001").unwrap().annotations;
    let records = load_annotations(csv, &f.frame).unwrap();
    assert_eq!(records.len(), 4);
    let p = records[2].joints[0].position.unwrap();
    assert!((p.x - points[0].0 / 2.0).abs() < 1e-9 && (p.y - points[0].1 / 2.0).abs() < 1e-9);
}

#[tokio::test]
async fn put_on_a_new_frame_adds_it() {
    let f = fixture();
    let entry = f.manifest.get("synth_000").unwrap();
    std::fs::copy(
        entry.frames_dir.join("frame_000000.png"),
        entry.frames_dir.join("frame_000020.png"),
    )
    .unwrap();
    let app = app(&f);
    let points = vec![(1.0, 2.0); 12];
    let (status, _) = send(&app, "PUT", "/videos/synth_000/annotations/20", Some(labels(&points, 99))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = send(&app, "GET", "/videos", None).await;
    let videos: Vec<VideoSummary> = serde_json::from_slice(&body).unwrap();
    assert_eq!((videos[0].frames, videos[0].annotated), (5, 5));
}

#[tokio::test]
async fn malformed_bodies_get_field_level_messages() {
    let f = fixture();
    let app = app(&f);
    let csv = &f.manifest.get("synth_000").unwrap().annotations;
    let before = std::fs::read(csv).unwrap();
    let cases = [
        (json!({}), "joints"),
        (json!({ "joints": 3 }), "joints"),
        (json!({ "joints": [{ "name": "XX", "x": 1, "y": 1, "visible": true }] }), "joints[0].name"),
        (json!({ "joints": [{ "name": "RS", "x": 500, "y": 1, "visible": true }] }), "joints[0].x"),
        (json!({ "joints": [{ "name": "RS", "x": 5, "y": -1, "visible": true }] }), "joints[0].y"),
        (json!({ "joints": [{ "name": "RS", "x": 5, "y": 5 }] }), "joints[0].visible"),
        (json!({ "joints": [{ "name": "RS", "visible": true }] }), "joints[0].x"),
        (json!({ "joints": [{ "name": "RS", "x": 1, "visible": false }] }), "joints[0].x"),
        (
            json!({ "joints": [
                { "name": "RS", "x": 1, "y": 1, "visible": true },
                { "name": "RS", "x": 2, "y": 2, "visible": true }
            ] }),
            "joints[1].name",
        ),
    ];
    for (body, field) in cases {
        let (status, resp) = send(&app, "PUT", "/videos/synth_000/annotations/0", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        let resp: Value = serde_json::from_slice(&resp).unwrap();
        let fields: Vec<&str> = resp["errors"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["field"].as_str().unwrap())
            .collect();
        assert!(fields.contains(&field), "{body}: {fields:?}");
    }
    let req = Request::put("/videos/synth_000/annotations/0").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    assert_eq!(std::fs::read(csv).unwrap(), before);
}

#[tokio::test]
async fn put_outside_the_cadence_is_not_found() {
    let f = fixture();
    let app = app(&f);
    let body = labels(&[(1.0, 1.0); 12], 99);
    for uri in ["/videos/synth_000/annotations/7", "/videos/synth_000/annotations/500", "/videos/x/annotations/0"] {
        assert_eq!(send(&app, "PUT", uri, Some(body.clone())).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writes_to_one_video_are_all_kept() {
    let f = fixture();
    let app = app(&f);
    let tasks: Vec<_> = (0..4)
        .map(|k| {
            let app = app.clone();
            tokio::spawn(async move {
                let points = vec![(k as f64 + 0.5, 1.5); 12];
                send(&app, "PUT", &format!("/videos/synth_000/annotations/{}", 5 * k), Some(labels(&points, 99))).await
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
    let (_, body) = send(&app, "GET", "/videos/synth_000/annotations", None).await;
    let ann: VideoAnnotations = serde_json::from_slice(&body).unwrap();
    for k in 0..4 {
        let fr = ann.frames.iter().find(|fr| fr.frame_index == 5 * k).unwrap();
        assert_eq!(fr.joints[3].x, Some(k as f64 + 0.5));
    }
}

#[tokio::test]
async fn skeleton_topology() {
    let f = fixture();
    let (status, body) = send(&app(&f), "GET", "/skeleton", None).await;
    assert_eq!(status, StatusCode::OK);
    let desc: SkeletonDescription = serde_json::from_slice(&body).unwrap();
    assert!(desc.is_compatible());
    assert_eq!(desc.joints.len(), 12);
    assert_eq!(desc.connections.len(), 8);
}

#[tokio::test]
async fn busy_port_is_a_startup_error() {
    let f = fixture();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let state = ServiceState::new(f.manifest.clone(), &f.frame, 5).unwrap();
    let err = serve(state, addr).await.unwrap_err();
    assert!(err.to_string().contains("cannot listen"), "{err}");
}
