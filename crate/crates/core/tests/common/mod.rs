#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varfield::gaussians::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.1 {
            return q.map(|v| v / norm);
        }
    }
}

pub fn random_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims: Vec<Primitive> = (0..n)
        .map(|_| {
            Primitive {
                mu: std::array::from_fn(|_| rng.gen_range(-2.0..2.0)),
                scale: std::array::from_fn(|_| rng.gen_range(0.01..2.0)),
                opacity: rng.gen_range(0.05..0.95),
                color: std::array::from_fn(|_| rng.gen_range(0.05..0.95)),
                rot: random_rotation(&mut rng),
            }
        })
        .collect();
    GaussianScene::from_primitives(prims).unwrap()
}

pub fn random_variation(scene: &GaussianScene, magnitude: f32, seed: u64) -> Variation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<f32> = (0..scene.len() * ATTRIBUTES)
        .map(|_| rng.gen_range(-magnitude..magnitude))
        .collect();
    Variation::from_rows(scene.content_id(), &rows).unwrap()
}


/// Scene sized for a camera orbiting the origin at distance 4.
pub fn view_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims: Vec<Primitive> = (0..n)
        .map(|_| Primitive {
            mu: std::array::from_fn(|_| rng.gen_range(-1.2..1.2)),
            scale: std::array::from_fn(|_| rng.gen_range(0.03..0.4)),
            opacity: rng.gen_range(0.05..0.99),
            color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            rot: random_rotation(&mut rng),
        })
        .collect();
    GaussianScene::from_primitives(prims).unwrap()
}

pub fn view_camera(seed: u64, size: u32) -> varfield::rasterizer::Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    varfield::rasterizer::Camera::orbit(
        [0.0; 3],
        rng.gen_range(3.5..5.0),
        rng.gen_range(0.0..360.0),
        rng.gen_range(-40.0..40.0),
        50.0,
        size,
        size,
    )
    .unwrap()
}
