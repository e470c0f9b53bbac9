mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use whodet::imageio::encode_png;
use whodet::service::{router, Service, ServiceConfig};
use whodet::store::{self, Catalogue};

const BOUNDARY: &str = "whodet-test-boundary";

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    service: Arc<Service>,
}

fn fixture(per_class: usize, models: &[whodet_core::Mixture]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (models_dir, data_dir) = (dir.path().join("models"), dir.path().join("data"));
    std::fs::create_dir_all(&models_dir).unwrap();
    std::fs::create_dir_all(&data_dir).unwrap();
    if per_class > 0 {
        common::shapes_dataset(&data_dir, per_class, 11);
    }
    let mut cat = Catalogue::open_dir(&models_dir).unwrap();
    for m in models {
        store::store_in(&mut cat, &models_dir, m).unwrap();
    }
    let stats_path = dir.path().join("bg.stats");
    store::save_stats(&common::small_stats(), &stats_path).unwrap();
    let mut config = ServiceConfig::new(&models_dir, &data_dir);
    config.stats_path = Some(stats_path);
    config.learn = common::small_params();
    config.hs.iterations = 100;
    let service = Service::start(config).unwrap();
    Fixture { _dir: dir, app: router(service.clone()), service }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

enum Part<'a> {
    Text(&'a str, String),
    File(&'a str, &'a str, Vec<u8>),
}

async fn post_multipart(app: &Router, uri: &str, parts: Vec<Part<'_>>) -> (StatusCode, Value) {
    let mut body = Vec::new();
    for part in parts {
        body.extend(format!("--{BOUNDARY}\r\n").bytes());
        match part {
            Part::Text(name, text) => {
                body.extend(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").bytes());
                body.extend(text.bytes());
            }
            Part::File(name, file, bytes) => {
                body.extend(
                    format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\nContent-Type: image/png\r\n\r\n")
                        .bytes(),
                );
                body.extend(bytes);
            }
        }
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").bytes());
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn wait_for_job(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (status, job) = get(app, &format!("/api/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
        assert!(start.elapsed() < Duration::from_secs(300), "job {id} stuck: {job}");
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
}

#[tokio::test]
async fn empty_catalogue_lists_nothing() {
    let f = fixture(0, &[]);
    let (status, body) = get(&f.app, "/api/models").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
    let (status, body) = get(&f.app, "/api/jobs").await;
    assert_eq!((status, body), (StatusCode::OK, json!([])));
}

#[tokio::test]
async fn unknown_resources_are_json_404s() {
    let f = fixture(0, &[]);
    for uri in ["/api/models/nope", "/api/jobs/77", "/api/jobs/abc", "/api/nothing/here"] {
        let (status, body) = get(&f.app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert!(body["code"].is_string() && body["message"].is_string(), "{uri}: {body}");
    }
    let (status, body) = post_json(&f.app, "/api/jobs/optimize", json!({"model_id": "nope"})).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownModel")));
}

#[tokio::test]
async fn deleting_the_last_component_conflicts() {
    let f = fixture(0, &[common::planted_mixture("glyph")]);
    let (_, list) = get(&f.app, "/api/models").await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let req = Request::builder()
        .method(Method::DELETE)
        .uri(format!("/api/models/{id}/components/0"))
        .body(Body::empty())
        .unwrap();
    let (status, body) = send(&f.app, req).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["code"], "LastComponentError");
    let req = Request::delete(format!("/api/models/{id}/components/5")).body(Body::empty()).unwrap();
    assert_eq!(send(&f.app, req).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn deleting_a_component_replaces_the_entry() {
    let base = common::planted_mixture("glyph");
    let extra = base.components[0].clone();
    let two = base.append([extra]);
    let f = fixture(0, &[two]);
    let (_, list) = get(&f.app, "/api/models").await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let req = Request::delete(format!("/api/models/{id}/components/1")).body(Body::empty()).unwrap();
    let (status, body) = send(&f.app, req).await;
    assert_eq!(status, StatusCode::OK);
    let detail: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(detail["components"].as_array().unwrap().len(), 1);
    assert_eq!(detail["biases_stale"], true);
    let (_, list) = get(&f.app, "/api/models").await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_ne!(list[0]["id"], id.as_str());
}

#[tokio::test]
async fn model_detail_and_glyphs() {
    let f = fixture(0, &[common::planted_mixture("glyph")]);
    let (_, list) = get(&f.app, "/api/models").await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let (status, detail) = get(&f.app, &format!("/api/models/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(detail["class_name"], "glyph");
    assert_eq!(detail["components"][0]["rows"], 4);
    let url = detail["glyph_urls"][0].as_str().unwrap().to_string();
    let resp = f.app.clone().oneshot(Request::get(&url).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
    let png = resp.into_body().collect().await.unwrap().to_bytes();
    let glyph = whodet::imageio::decode(&png).unwrap();
    assert_eq!((glyph.width(), glyph.height()), (80, 80));
}

#[tokio::test]
async fn detect_finds_the_planted_object() {
    let f = fixture(0, &[common::planted_mixture("glyph")]);
    let (_, list) = get(&f.app, "/api/models").await;
    let id = list[0]["id"].as_str().unwrap().to_string();
    let corner = (56, 40);
    let png = encode_png(&common::planted_scene(3, 160, 128, &[corner]));
    let uri = format!("/api/models/{id}/detect");
    let (status, body) = post_multipart(&f.app, &uri, vec![Part::File("image", "scene.png", png)]).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(160), Some(128)));
    let top = &body["detections"][0];
    let b = whodet_core::BBox::new(
        top["x"].as_f64().unwrap(),
        top["y"].as_f64().unwrap(),
        top["w"].as_f64().unwrap(),
        top["h"].as_f64().unwrap(),
    );
    assert!(b.iou(&common::planted_box(corner)) >= 0.5, "{top}");

    let (status, body) = post_multipart(&f.app, &uri, vec![Part::File("image", "empty.png", Vec::new())]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, _) =
        post_multipart(&f.app, &uri, vec![Part::File("image", "junk.png", b"not an image".to_vec())]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_multipart(&f.app, "/api/models/nope/detect", vec![Part::File("image", "a.png", vec![1])]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let f = fixture(2, &[]);
    let req = Request::post("/api/jobs/learn").body(Body::from("{nope")).unwrap();
    let (status, body) = send(&f.app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["message"].is_string());
    let (status, _) = post_json(&f.app, "/api/jobs/learn", json!({"class": "unicorn"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json(&f.app, "/api/jobs/learn", json!({"class": "disk", "k_ar": 0})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn learn_then_adapt_through_jobs() {
    let f = fixture(12, &[]);
    let (status, classes) = get(&f.app, "/api/datasets").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(classes.as_array().unwrap().len(), 3);
    assert_eq!(classes[0]["images"], 12);

    let (status, job) = post_json(&f.app, "/api/jobs/learn", json!({"class": "disk", "seed": 1})).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    assert_eq!(job["kind"], "learn");
    let done = wait_for_job(&f.app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);
    let model_id = done["result"].as_str().unwrap().to_string();
    let (_, list) = get(&f.app, "/api/models").await;
    assert_eq!(list[0]["id"].as_str(), Some(model_id.as_str()));
    let (_, detail) = get(&f.app, &format!("/api/models/{model_id}")).await;
    let before = detail["components"].as_array().unwrap().len();

    // In-situ uploads: two disks drawn from another domain.
    let target = whodet::synth::render_class(
        whodet::synth::Shape::Disk,
        &whodet::synth::Domain::SHIFTED,
        "target",
        &whodet::synth::SynthConfig::default(),
        3,
        2,
    );
    let records: Vec<Value> = target
        .iter()
        .map(|t| {
            let b = t.boxes[0].0;
            json!({"image": t.file_name, "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h}]})
        })
        .collect();
    let mut parts = vec![Part::Text("model_id", model_id.clone()), Part::Text("boxes", Value::from(records).to_string())];
    for t in &target {
        parts.push(Part::File("images", &t.file_name, encode_png(&t.image)));
    }
    let (status, job) = post_multipart(&f.app, "/api/jobs/adapt", parts).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    let done = wait_for_job(&f.app, job["id"].as_str().unwrap()).await;
    assert_eq!(done["state"], "done", "{done}");
    let adapted = done["result"].as_str().unwrap();
    let (_, detail) = get(&f.app, &format!("/api/models/{adapted}")).await;
    let comps = detail["components"].as_array().unwrap();
    assert!(comps.len() > before);
    assert!(comps[before..].iter().all(|c| c["provenance"] == "in-situ"));
    assert!(comps[..before].iter().all(|c| c["provenance"] == "source-dataset"));

    let (status, body) = post_multipart(
        &f.app,
        "/api/jobs/adapt",
        vec![Part::Text("model_id", model_id), Part::Text("boxes", r#"[{"image": "missing.png", "boxes": []}]"#.into())],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    f.service.shutdown();
}
