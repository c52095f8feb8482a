//! Persistent store, HTTP API, job queue and command-line front end for
//! varfield.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod store;

pub use api::{router, serve, AppState};
pub use error::{ServiceError, ServiceResult};
pub use jobs::{JobKind, JobQueue, JobRecord, JobStatus};
pub use store::{content_id, Kind, Store, VariationMeta, STORE_ENV};

use serde::Serialize;
use varfield::gaussians::GaussianScene;
use varfield::rasterizer::Camera;

/// Front view of the whole scene: orbit camera at the centroid with a
/// radius that fits every primitive centre inside a 50° field of view.
pub fn framing_camera(scene: &GaussianScene, width: u32, height: u32) -> varfield::Result<Camera> {
    let c = scene.centroid();
    let reach = scene
        .mu()
        .iter()
        .map(|m| (0..3).map(|k| (m[k] - c[k]).powi(2)).sum::<f32>().sqrt())
        .fold(0f32, f32::max)
        .max(1e-3);
    Camera::orbit(c, 2.6 * reach, 0.0, 0.0, 50.0, width, height)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneMeta {
    pub id: String,
    pub primitives: usize,
    /// Digest variations are bound to, as 16 hex digits.
    pub content_id: String,
    pub centroid: [f32; 3],
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl SceneMeta {
    pub fn new(id: &str, scene: &GaussianScene) -> Self {
        let mut min = [f32::INFINITY; 3];
        let mut max = [f32::NEG_INFINITY; 3];
        for m in scene.mu() {
            for k in 0..3 {
                min[k] = min[k].min(m[k]);
                max[k] = max[k].max(m[k]);
            }
        }
        if scene.is_empty() {
            min = [0.0; 3];
            max = [0.0; 3];
        }
        Self {
            id: id.to_string(),
            primitives: scene.len(),
            content_id: format!("{:016x}", scene.content_id()),
            centroid: scene.centroid(),
            min,
            max,
        }
    }
}
