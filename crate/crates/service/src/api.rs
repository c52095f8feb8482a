use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use varfield::distillation::OracleRegistry;
use varfield::gaussians::{
    mask_variation, mix_variations, overlay, scale_variation, AttributeWeights, MixWeights, Selector, Variation,
};
use varfield::predictor::{DecodeMode, Predictor, PredictorConfig};
use varfield::rasterizer::{render, Camera};
use varfield::visualize::{viz_layer, viz_panel, VizConfig, VizLayer};

use crate::error::{ServiceError, ServiceResult};
use crate::jobs::{JobKind, JobQueue};
use crate::store::{Kind, Store, VariationMeta};
use crate::{framing_camera, SceneMeta};

/// Side of the default visualisation camera in pixels.
pub const VIZ_SIZE: u32 = 256;

#[derive(Clone)]
pub struct AppState {
    pub store: Store,
    pub jobs: JobQueue,
    predictors: Arc<Mutex<HashMap<String, Arc<Predictor>>>>,
}

impl AppState {
    pub fn new(store: Store) -> ServiceResult<Self> {
        let jobs = JobQueue::start(store.clone())?;
        Ok(Self {
            store,
            jobs,
            predictors: Arc::default(),
        })
    }

    fn predictor(&self, id: &str) -> ServiceResult<Arc<Predictor>> {
        if let Some(p) = self.predictors.lock().expect("predictor cache").get(id) {
            return Ok(p.clone());
        }
        let p = Arc::new(self.store.get_weights(id)?);
        self.predictors.lock().expect("predictor cache").insert(id.to_string(), p.clone());
        Ok(p)
    }

    /// Default-config weights, stored so the edit can name them.
    fn fresh_weights(&self) -> ServiceResult<String> {
        let p = Predictor::new(PredictorConfig::default())?;
        self.store.put_weights(&p)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/scenes", post(post_scene))
        .route("/scenes/{id}/meta", get(scene_meta))
        .route("/scenes/{id}/render", get(render_scene))
        .route("/scenes/{id}/apply", post(apply))
        .route("/edits", post(edit))
        .route("/variations/compose", post(compose))
        .route("/variations/{id}/viz", get(viz))
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(job))
        .route("/weights", get(list_weights).post(post_weights))
        .with_state(state)
}

/// Bind, report the bound address through `on_bound`, and serve until
/// ctrl-c.
pub async fn serve(state: AppState, bind: &str, on_bound: impl FnOnce(SocketAddr)) -> ServiceResult<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| ServiceError::bad(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| ServiceError::bad(e.to_string()))?;
    on_bound(addr);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::bad(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::bad(format!("worker panicked: {e}")))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// Camera from a base64 (standard or URL-safe, padding optional) JSON blob.
pub fn decode_camera(b64: &str) -> ServiceResult<Camera> {
    let trimmed = b64.trim().trim_end_matches('=');
    let bytes = base64::engine::general_purpose::URL_SAFE_NO_PAD
        .decode(trimmed)
        .or_else(|_| base64::engine::general_purpose::STANDARD_NO_PAD.decode(trimmed))
        .map_err(|e| ServiceError::bad(format!("camera is not base64: {e}")))?;
    let cam: Camera = serde_json::from_slice(&bytes).map_err(|e| ServiceError::bad(format!("camera JSON: {e}")))?;
    cam.validate().map_err(|e| ServiceError::bad(format!("camera: {e}")))?;
    Ok(cam)
}

pub fn encode_camera(cam: &Camera) -> String {
    base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(serde_json::to_vec(cam).expect("camera serialises"))
}

fn parse_background(bg: Option<&str>) -> ServiceResult<[f32; 3]> {
    let Some(s) = bg else { return Ok([0.0; 3]) };
    let parts: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|e| ServiceError::bad(format!("background {s:?}: {e}")))?;
    match parts.as_slice() {
        [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([*r, *g, *b]),
        _ => Err(ServiceError::bad(format!("background {s:?} must be three values in [0, 1]"))),
    }
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::bad(format!("request body: {e}")))
}

async fn post_scene(State(s): State<AppState>, body: Bytes) -> ServiceResult<Response> {
    let id = blocking(move || s.store.put_scene_bytes(&body)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "scene_id": id }))).into_response())
}

async fn scene_meta(State(s): State<AppState>, Path(id): Path<String>) -> ServiceResult<Json<SceneMeta>> {
    let scene = s.store.get_scene(&id)?;
    Ok(Json(SceneMeta::new(&id, &scene)))
}

#[derive(Deserialize)]
struct RenderQuery {
    cam: Option<String>,
    bg: Option<String>,
}

async fn render_scene(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
) -> ServiceResult<Response> {
    let scene = s.store.get_scene(&id)?;
    let cam = match &q.cam {
        Some(c) => decode_camera(c)?,
        None => framing_camera(&scene, VIZ_SIZE, VIZ_SIZE)?,
    };
    let bg = parse_background(q.bg.as_deref())?;
    let bytes = blocking(move || Ok(render(&scene, &cam, bg).image.encode_png()?)).await?;
    Ok(png(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    scene_id: String,
    instruction: String,
    #[serde(default)]
    seed: u64,
    weights_id: Option<String>,
    #[serde(default)]
    mode: DecodeMode,
}

async fn edit(State(s): State<AppState>, body: Bytes) -> ServiceResult<Json<Value>> {
    let req: EditRequest = json_body(&body)?;
    let origin = serde_json::from_slice::<Value>(&body)?;
    blocking(move || {
        OracleRegistry::builtin().resolve(&req.instruction)?;
        let scene = s.store.get_scene(&req.scene_id)?;
        let weights_id = match &req.weights_id {
            Some(w) => w.clone(),
            None => s.fresh_weights()?,
        };
        let predictor = s.predictor(&weights_id)?;
        let v = predictor.predict(&scene, &req.instruction, req.seed, req.mode)?;
        let meta = VariationMeta {
            scene: req.scene_id.clone(),
            origin: json!({ "edit": origin, "weights_id": weights_id }),
        };
        let id = s.store.put_variation(&v, &meta)?;
        Ok(Json(json!({
            "variation_id": id,
            "scene_id": req.scene_id,
            "weights_id": weights_id,
            "zero": v.is_zero(),
        })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScaleWeights {
    Uniform(f32),
    PerAttribute(AttributeWeights),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleParams {
    w: ScaleWeights,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixParams {
    w: MixWeights,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskParams {
    selector: Selector,
    /// Scene whose positions the selector reads; defaults to the operand's.
    scene_id: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ComposeOp {
    Scale,
    Mix,
    Mask,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeRequest {
    op: ComposeOp,
    operands: Vec<String>,
    #[serde(default)]
    params: Value,
}

fn operand_count(op: &str, operands: &[String], n: usize) -> ServiceResult<()> {
    if operands.len() != n {
        return Err(ServiceError::bad(format!("{op} takes {n} operand(s), got {}", operands.len())));
    }
    Ok(())
}

fn params<T: for<'de> Deserialize<'de>>(op: &str, v: Value) -> ServiceResult<T> {
    serde_json::from_value(v).map_err(|e| ServiceError::bad(format!("{op} params: {e}")))
}

async fn compose(State(s): State<AppState>, body: Bytes) -> ServiceResult<Json<Value>> {
    let req: ComposeRequest = json_body(&body)?;
    let origin = serde_json::from_slice::<Value>(&body)?;
    blocking(move || {
        let first = req.operands.first().ok_or_else(|| ServiceError::bad("no operands"))?;
        let v1 = s.store.get_variation(first)?;
        let scene_ref = s.store.variation_meta(first)?.map(|m| m.scene);
        let mut extra = json!({});
        let out: Variation = match req.op {
            ComposeOp::Scale => {
                operand_count("scale", &req.operands, 1)?;
                let p: ScaleParams = params("scale", req.params)?;
                let w = match p.w {
                    ScaleWeights::Uniform(w) => AttributeWeights::uniform(w),
                    ScaleWeights::PerAttribute(w) => w,
                };
                scale_variation(&v1, w)
            }
            ComposeOp::Mix => {
                operand_count("mix", &req.operands, 2)?;
                let p: MixParams = params("mix", req.params)?;
                let v2 = s.store.get_variation(&req.operands[1])?;
                mix_variations(&v1, &v2, &p.w)?
            }
            ComposeOp::Mask => {
                operand_count("mask", &req.operands, 1)?;
                let p: MaskParams = params("mask", req.params)?;
                let scene_id = p
                    .scene_id
                    .or_else(|| scene_ref.clone())
                    .ok_or_else(|| ServiceError::bad("mask needs params.scene_id for this variation"))?;
                let scene = s.store.get_scene(&scene_id)?;
                let m = mask_variation(&v1, &scene, &p.selector)?;
                let selected = m.selected;
                extra = json!({ "selected": selected, "empty": m.empty });
                m.variation
            }
        };
        let meta = VariationMeta {
            scene: scene_ref.unwrap_or_default(),
            origin: json!({ "compose": origin }),
        };
        let id = s.store.put_variation(&out, &meta)?;
        let mut resp = json!({ "variation_id": id });
        if let (Some(r), Some(e)) = (resp.as_object_mut(), extra.as_object()) {
            r.extend(e.clone());
        }
        Ok(Json(resp))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyRequest {
    variation_id: String,
}

async fn apply(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ServiceResult<Json<Value>> {
    let req: ApplyRequest = json_body(&body)?;
    blocking(move || {
        let scene = s.store.get_scene(&id)?;
        let v = s.store.get_variation(&req.variation_id)?;
        let edited = overlay(&scene, &v)?;
        let scene_id = s.store.put_scene(&edited)?;
        Ok(Json(json!({ "scene_id": scene_id })))
    })
    .await
}

#[derive(Deserialize)]
struct VizQuery {
    layer: Option<String>,
    cam: Option<String>,
    scene_id: Option<String>,
    radius: Option<f32>,
    bg: Option<String>,
}

async fn viz(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<VizQuery>) -> ServiceResult<Response> {
    let v = s.store.get_variation(&id)?;
    let scene_id = match q.scene_id {
        Some(sid) => sid,
        None => s
            .store
            .variation_meta(&id)?
            .map(|m| m.scene)
            .filter(|sid| !sid.is_empty())
            .ok_or_else(|| ServiceError::bad("variation has no recorded scene; pass scene_id"))?,
    };
    let scene = s.store.get_scene(&scene_id)?;
    let cam = match &q.cam {
        Some(c) => decode_camera(c)?,
        None => framing_camera(&scene, VIZ_SIZE, VIZ_SIZE)?,
    };
    let mut cfg = VizConfig::new(cam);
    cfg.background = parse_background(q.bg.as_deref())?;
    if let Some(r) = q.radius {
        cfg.radius = r;
    }
    let layer = q.layer.unwrap_or_else(|| "panel".into());
    let bytes = blocking(move || {
        Ok(if layer == "panel" {
            viz_panel(&scene, &v, &cfg)?.encode_png()?
        } else {
            let which: VizLayer = layer.parse().map_err(|e: varfield::Error| ServiceError::bad(e.to_string()))?;
            viz_layer(&scene, &v, which, &cfg)?.encode_png()?
        })
    })
    .await?;
    Ok(png(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JobRequest {
    kind: JobKind,
    #[serde(default)]
    config: Value,
}

async fn submit_job(State(s): State<AppState>, body: Bytes) -> ServiceResult<Response> {
    let req: JobRequest = json_body(&body)?;
    let record = s.jobs.submit(req.kind, req.config)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": record.id, "status": record.status }))).into_response())
}

async fn job(State(s): State<AppState>, Path(id): Path<String>) -> ServiceResult<Response> {
    Ok(Json(s.jobs.get(&id)?).into_response())
}

async fn list_jobs(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "jobs": s.jobs.list() }))
}

async fn list_weights(State(s): State<AppState>) -> ServiceResult<Json<Value>> {
    let ids = s.store.list(Kind::Weights)?;
    Ok(Json(json!({ "weights": ids })))
}

async fn post_weights(State(s): State<AppState>, body: Bytes) -> ServiceResult<Response> {
    let id = blocking(move || s.store.put_weights_bytes(&body)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "weights_id": id }))).into_response())
}
