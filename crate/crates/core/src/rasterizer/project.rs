use crate::gaussians::GaussianScene;
use crate::rasterizer::camera::Camera;

pub(crate) type M3 = [[f64; 3]; 3];

/// Screen-space dilation added to both diagonal entries of the 2D covariance.
pub const LOW_PASS: f64 = 0.3;
/// Smallest per-pixel opacity that takes part in blending.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;

/// Rotation matrix of the unit quaternion `q / |q|`, `q = (w, x, y, z)`.
pub fn quat_to_rotation(q: [f32; 4]) -> M3 {
    let n = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v as f64 / n);
    rotation_unit(w, x, y, z)
}

pub(crate) fn rotation_unit(w: f64, x: f64, y: f64, z: f64) -> M3 {
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `R·diag(s)·diag(s)·Rᵀ`.
pub fn world_covariance(scale: [f32; 3], rot: [f32; 4]) -> M3 {
    let r = quat_to_rotation(rot);
    let s = scale.map(|v| v as f64);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum())
    })
}

/// A primitive after EWA projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index into the source scene.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Upper triangle `(a, b, c)` of `[[a, b], [b, c]]`, pixels².
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// No pixel farther than this from `mean2d` reaches the blending threshold.
    pub radius: f64,
}

impl ProjectedGaussian {
    /// Per-pixel opacity before and after the 0.99 clamp, or `None` when
    /// the contribution falls under the blending threshold.
    #[inline]
    pub(crate) fn alpha_at(&self, px: f64, py: f64) -> Option<(f64, f64, f64)> {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        let g = power.exp();
        let raw = self.opacity * g;
        let o = raw.min(MAX_ALPHA);
        (o >= MIN_ALPHA).then_some((o, raw, g))
    }
}

/// Projection intermediates reused by the backward pass.
pub(crate) struct Projection {
    pub p: [f64; 3],
    pub jw: [[f64; 3]; 2],
    pub sigma: M3,
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
}

pub(crate) fn jacobian(camera: &Camera, p: [f64; 3]) -> [[f64; 3]; 2] {
    let (fx, fy) = (camera.fx as f64, camera.fy as f64);
    let [x, y, z] = p;
    [
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ]
}

pub(crate) fn project_one(scene: &GaussianScene, camera: &Camera, i: usize, low_pass: f64) -> Projection {
    let w = camera.rotation();
    let p = camera.to_camera_space(scene.mu()[i]);
    let j = jacobian(camera, p);
    let jw: [[f64; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum()));
    let sigma = world_covariance(scene.scale()[i], scene.rot()[i]);
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += jw[r][k] * sigma[k][l] * jw[c][l];
                }
            }
            cov[r][c] = acc;
        }
    }
    let mean2d = [
        camera.fx as f64 * p[0] / p[2] + camera.cx as f64,
        camera.fy as f64 * p[1] / p[2] + camera.cy as f64,
    ];
    Projection {
        p,
        jw,
        sigma,
        mean2d,
        cov2d: [cov[0][0] + low_pass, 0.5 * (cov[0][1] + cov[1][0]), cov[1][1] + low_pass],
    }
}

/// EWA projection of every visible primitive, in scene order.
///
/// Primitives at or behind the near plane, with degenerate screen
/// covariance, with opacity too low to ever reach the blending threshold,
/// or whose footprint misses the image are dropped.
pub fn project_ewa(scene: &GaussianScene, camera: &Camera) -> Vec<ProjectedGaussian> {
    project_ewa_with(scene, camera, LOW_PASS)
}

pub fn project_ewa_with(scene: &GaussianScene, camera: &Camera, low_pass: f64) -> Vec<ProjectedGaussian> {
    let mut out = Vec::new();
    for i in 0..scene.len() {
        if let Some(g) = project_visible(scene, camera, i, low_pass) {
            out.push(g);
        }
    }
    out
}

fn project_visible(scene: &GaussianScene, camera: &Camera, i: usize, low_pass: f64) -> Option<ProjectedGaussian> {
    let opacity = scene.opacity()[i] as f64;
    if opacity < MIN_ALPHA {
        return None;
    }
    let z = camera.to_camera_space(scene.mu()[i])[2];
    if !(z > camera.near as f64) {
        return None;
    }
    let pr = project_one(scene, camera, i, low_pass);
    let [a, b, c] = pr.cov2d;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    // α·exp(−q/2) ≥ 1/255 needs q ≤ 2 ln(255 α), and q ≥ |d|²/λmax.
    let reach = 2.0 * (opacity / MIN_ALPHA).ln();
    let radius = (reach * lambda_max).sqrt() * 1.001 + 1e-3;
    let [mx, my] = pr.mean2d;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if mx + radius < 0.0 || my + radius < 0.0 || mx - radius > w - 1.0 || my - radius > h - 1.0 {
        return None;
    }
    Some(ProjectedGaussian {
        index: i,
        mean2d: pr.mean2d,
        cov2d: pr.cov2d,
        conic,
        depth: pr.p[2],
        color: scene.color()[i].map(|v| v as f64),
        opacity,
        radius,
    })
}

/// Front-to-back order: camera depth, ties broken by scene index.
pub(crate) fn sort_front_to_back(projected: &mut [ProjectedGaussian]) {
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
}
