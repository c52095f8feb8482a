//! Walk through the HTTP API in-process: upload a toy scene, request an
//! edit, compose it and render before/after frames into a temp store.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use varfield::distillation::toy_scene;
use varfield::gaussians::write_ply;
use varfield_service::api::{router, AppState};
use varfield_service::Store;

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Value) -> Value {
    let (status, bytes) = call(app, method, uri, serde_json::to_vec(&body).unwrap()).await;
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    println!("{method} {uri} -> {status} {v}");
    v
}

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Store::open(dir.path()).unwrap()).unwrap());

    let mut ply = Vec::new();
    write_ply(&toy_scene(300, 1), &mut ply).unwrap();
    let (status, body) = call(&app, "POST", "/scenes", ply).await;
    let scene_id = serde_json::from_slice::<Value>(&body).unwrap()["scene_id"].as_str().unwrap().to_string();
    println!("POST /scenes -> {status} {scene_id}");

    let meta = call_json(&app, "GET", &format!("/scenes/{scene_id}/meta"), Value::Null).await;
    println!("{} primitives", meta["primitives"]);

    let edit = call_json(&app, "POST", "/edits", json!({"scene_id": scene_id, "instruction": "make it golden", "seed": 7})).await;
    let variation = edit["variation_id"].as_str().unwrap();

    let half = call_json(&app, "POST", "/variations/compose", json!({"op": "scale", "operands": [variation], "params": {"w": 0.5}})).await;
    let applied = call_json(
        &app,
        "POST",
        &format!("/scenes/{scene_id}/apply"),
        json!({"variation_id": half["variation_id"]}),
    )
    .await;

    for (name, id) in [("before", scene_id.as_str()), ("after", applied["scene_id"].as_str().unwrap())] {
        let (status, png) = call(&app, "GET", &format!("/scenes/{id}/render"), Vec::new()).await;
        let path = dir.path().join(format!("{name}.png"));
        std::fs::write(&path, &png).unwrap();
        println!("GET /scenes/{id}/render -> {status}, {} bytes", png.len());
    }
    let (status, png) = call(&app, "GET", &format!("/variations/{variation}/viz?scene_id={scene_id}"), Vec::new()).await;
    println!("GET /variations/{variation}/viz -> {status}, {} bytes", png.len());
}
