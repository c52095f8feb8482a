//! Draw the 3×2 variation panel for a hand-made edit of a toy scene:
//! the top half lifts and turns gold, the left side fades.
//! Usage: cargo run --example viz_panel -- out.png

use varfield::distillation::toy_scene;
use varfield::gaussians::Variation;
use varfield::rasterizer::Camera;
use varfield::visualize::{viz_panel, VizConfig};

fn main() -> varfield::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "panel.png".into());
    let scene = toy_scene(400, 3);
    let c = scene.centroid();
    let mut v = Variation::zeros_for(&scene);
    for (i, m) in scene.mu().iter().enumerate() {
        if m[1] > c[1] {
            v.delta_mu[i] = [0.0, 0.25, 0.0];
            v.delta_color[i] = [0.3, 0.2, -0.3];
        }
        if m[0] < c[0] {
            v.delta_opacity[i] = -1.5;
            v.delta_scale[i] = [0.2, 0.2, 0.2];
        }
        v.delta_rot[i] = [0.05 * m[0], 0.0, 0.05 * m[1], 0.0];
    }
    let mut cfg = VizConfig::new(Camera::orbit(c, 4.0, 20.0, 15.0, 50.0, 192, 192)?);
    cfg.background = [0.1, 0.1, 0.12];
    viz_panel(&scene, &v, &cfg)?.save_png(&out)?;
    println!("{out}");
    Ok(())
}
