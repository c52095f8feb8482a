use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// centres sit at integer coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    pub near: f32,
    /// Row-major `[R | t]`, mapping world points to camera space.
    pub world_to_camera: [f32; 12],
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f32,
    fy: f32,
    cx: f32,
    cy: f32,
    width: u32,
    height: u32,
    near: f32,
    world_to_camera: Vec<f32>,
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let world_to_camera: [f32; 12] = j.world_to_camera.as_slice().try_into().map_err(|_| {
            Error::Input(format!(
                "world_to_camera needs 12 floats, got {}",
                j.world_to_camera.len()
            ))
        })?;
        let cam = Camera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
            near: j.near,
            world_to_camera,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            near: c.near,
            world_to_camera: c.world_to_camera.to_vec(),
        }
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near]
            .iter()
            .chain(&self.world_to_camera)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("camera has non-finite parameters".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Input(format!("focal lengths must be positive: {} {}", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input("image size must be at least 1×1".into()));
        }
        if self.near <= 0.0 {
            return Err(Error::Input(format!("near plane must be positive: {}", self.near)));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: [f32; 3],
        target: [f32; 3],
        up: [f32; 3],
        fov_y_degrees: f32,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let eye64 = eye.map(f64::from);
        let f = normalize([0, 1, 2].map(|k| target[k] as f64 - eye64[k]));
        let down = up.map(|u| -(u as f64));
        let along = down[0] * f[0] + down[1] * f[1] + down[2] * f[2];
        let y = [0, 1, 2].map(|k| down[k] - along * f[k]);
        if !f.iter().all(|v| v.is_finite()) || y.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            return Err(Error::Input("look_at: degenerate eye/target/up".into()));
        }
        let y = normalize(y);
        let x = cross(y, f);
        let rows = [x, y, f];
        let mut w2c = [0f32; 12];
        for r in 0..3 {
            let t = -(0..3).map(|k| rows[r][k] * eye64[k]).sum::<f64>();
            for k in 0..3 {
                w2c[r * 4 + k] = rows[r][k] as f32;
            }
            w2c[r * 4 + 3] = t as f32;
        }
        let focal = (height as f64 / 2.0) / ((fov_y_degrees as f64).to_radians() * 0.5).tan();
        let cam = Camera {
            fx: focal as f32,
            fy: focal as f32,
            cx: (width as f32 - 1.0) / 2.0,
            cy: (height as f32 - 1.0) / 2.0,
            width,
            height,
            near: 0.01,
            world_to_camera: w2c,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera on a sphere around `target` (y up), angles in degrees.
    pub fn orbit(
        target: [f32; 3],
        radius: f32,
        azimuth_degrees: f32,
        elevation_degrees: f32,
        fov_y_degrees: f32,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let (az, el) = (
            (azimuth_degrees as f64).to_radians(),
            (elevation_degrees as f64).to_radians(),
        );
        let r = radius as f64;
        let eye = [
            target[0] as f64 + r * el.cos() * az.sin(),
            target[1] as f64 + r * el.sin(),
            target[2] as f64 - r * el.cos() * az.cos(),
        ];
        Self::look_at(eye.map(|v| v as f32), target, [0.0, 1.0, 0.0], fov_y_degrees, width, height)
    }

    /// Same view at `factor` times the resolution, pixel centres aligned so
    /// that pixel `(u, v)` maps to `(factor·u, factor·v)`.
    pub fn scaled(&self, factor: u32) -> Camera {
        let f = factor as f32;
        Camera {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            ..self.clone()
        }
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.world_to_camera;
        std::array::from_fn(|r| std::array::from_fn(|c| m[r * 4 + c] as f64))
    }

    pub fn translation(&self) -> [f64; 3] {
        let m = &self.world_to_camera;
        [m[3] as f64, m[7] as f64, m[11] as f64]
    }

    pub fn to_camera_space(&self, p: [f32; 3]) -> [f64; 3] {
        let (r, t) = (self.rotation(), self.translation());
        std::array::from_fn(|i| (0..3).map(|k| r[i][k] * p[k] as f64).sum::<f64>() + t[i])
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
