//! Explicit Gaussian scenes, variations and their algebra.

mod algebra;
mod ply;
mod scene;
mod sidecar;
mod variation;

pub use algebra::{
    mask_variation, mix_variations, overlay, overlay_traced, scale_variation, AttributeWeights,
    MaskedVariation, MixWeights, OverlayTrace, SceneGradients, Selector, OPACITY_MAX, OPACITY_MIN,
    SCALE_MIN,
};
pub use ply::{load_ply, read_ply, save_ply, write_ply, SH_C0};
pub use scene::{GaussianScene, Primitive, ATTRIBUTES, QUAT_NORM_TOLERANCE};
pub use sidecar::{load_variation, save_variation, variation_from_bytes, variation_to_bytes};
pub use variation::Variation;
