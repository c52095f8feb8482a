pub mod distillation;
pub mod error;
pub mod gaussians;
pub mod metrics;
pub mod numerics;
pub mod predictor;
pub mod rasterizer;
pub mod tokenizer;
pub mod visualize;

pub use error::{Error, Result};
