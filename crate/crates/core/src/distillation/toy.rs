use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussians::{GaussianScene, Primitive};
use crate::rasterizer::Camera;

/// A few coloured blobs inside the unit cube, `n` primitives in total.
pub fn toy_scene(n: usize, seed: u64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = rng.gen_range(3..=6);
    let centers: Vec<([f32; 3], [f32; 3], f32)> = (0..blobs)
        .map(|_| {
            (
                std::array::from_fn(|_| rng.gen_range(-0.55..0.55)),
                std::array::from_fn(|_| rng.gen_range(0.15..0.95)),
                rng.gen_range(0.12..0.3),
            )
        })
        .collect();
    let prims = (0..n).map(|i| {
        let (c, col, spread) = centers[i % blobs];
        let mut normal = || -> f32 { StandardNormal.sample(&mut rng) };
        let mu = [0, 1, 2].map(|k| (c[k] + spread * normal()).clamp(-1.0, 1.0));
        let color = [0, 1, 2].map(|k| (col[k] + 0.05 * normal()).clamp(0.02, 0.98));
        let q: [f32; 4] = std::array::from_fn(|_| normal());
        let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
        Primitive {
            mu,
            scale: std::array::from_fn(|_| rng.gen_range(0.03..0.09)),
            opacity: rng.gen_range(0.4..0.9),
            color,
            rot: q.map(|v| v / norm),
        }
    });
    GaussianScene::from_primitives(prims).expect("finite toy scene")
}

/// Cameras on a sphere around the origin, looking at it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraOrbit {
    pub radius: f32,
    pub min_elevation: f32,
    pub max_elevation: f32,
    pub fov_y: f32,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraOrbit {
    fn default() -> Self {
        Self {
            radius: 3.2,
            min_elevation: -15.0,
            max_elevation: 25.0,
            fov_y: 45.0,
            width: 64,
            height: 64,
        }
    }
}

impl CameraOrbit {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Camera> {
        let az = rng.gen_range(0.0..360.0);
        let el = if self.max_elevation > self.min_elevation {
            rng.gen_range(self.min_elevation..self.max_elevation)
        } else {
            self.min_elevation
        };
        Camera::orbit([0.0; 3], self.radius, az, el, self.fov_y, self.width, self.height)
    }
}
