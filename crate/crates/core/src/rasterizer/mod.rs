//! Differentiable tile-based splatting of Gaussian scenes.

mod backward;
mod camera;
pub(crate) mod image;
mod project;
mod render;

pub use backward::render_backward;
pub use camera::Camera;
pub use image::Image;
pub use project::{
    project_ewa, project_ewa_with, quat_to_rotation, world_covariance, ProjectedGaussian, LOW_PASS,
    MAX_ALPHA, MIN_ALPHA,
};
pub use render::{
    render, render_bruteforce, render_with, threshold_margin, RenderOutput, RenderSettings, MIN_TRANSMITTANCE, TILE,
};
