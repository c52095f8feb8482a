//! 2D pictures of a variation: displacement segments, signed opacity and
//! scale circles, colour and rotation circles, and a composite panel.

mod font;

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{overlay, GaussianScene, Variation};
use crate::rasterizer::{image::encode_png, render, Camera, Image};

pub const RED: [f32; 3] = [1.0, 0.0, 0.0];
pub const BLUE: [f32; 3] = [0.0, 0.0, 1.0];
pub const WHITE: [f32; 3] = [1.0; 3];
/// Palette directions in the image plane (x right, y up), in degrees.
pub const PALETTE_DEGREES: [f64; 3] = [0.0, 120.0, 240.0];
/// Below this fraction of the largest |δ| a scalar circle is drawn white.
pub const NEUTRAL_FRACTION: f32 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VizConfig {
    pub camera: Camera,
    /// Circle radius in pixels.
    pub radius: f32,
    /// Displacement quantile used to normalise segment opacity.
    pub percentile: f64,
    /// Background of the before/after renders in the panel.
    #[serde(default)]
    pub background: [f32; 3],
}

impl VizConfig {
    pub fn new(camera: Camera) -> Self {
        Self {
            camera,
            radius: 2.0,
            percentile: 0.95,
            background: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !(self.radius >= 1.0) {
            return Err(Error::Config(format!("circle radius must be ≥ 1, got {}", self.radius)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::Config(format!("percentile must be in (0, 1], got {}", self.percentile)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VizLayer {
    Position,
    Opacity,
    Scale,
    Color,
    Rotation,
}

impl VizLayer {
    pub const ALL: [VizLayer; 5] = [Self::Position, Self::Opacity, Self::Scale, Self::Color, Self::Rotation];

    pub fn name(self) -> &'static str {
        match self {
            Self::Position => "position",
            Self::Opacity => "opacity",
            Self::Scale => "scale",
            Self::Color => "color",
            Self::Rotation => "rotation",
        }
    }
}

impl FromStr for VizLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown layer {s:?} (position, opacity, scale, color, rotation)")))
    }
}

/// Straight-alpha RGBA canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    width: u32,
    height: u32,
    rgba: Vec<f32>,
}

impl Layer {
    pub fn transparent(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            rgba: vec![0.0; width as usize * height as usize * 4],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn rgba(&self, x: u32, y: u32) -> [f32; 4] {
        let o = (y as usize * self.width as usize + x as usize) * 4;
        std::array::from_fn(|c| self.rgba[o + c])
    }

    pub fn is_transparent(&self) -> bool {
        self.rgba.chunks_exact(4).all(|p| p[3] == 0.0)
    }

    /// Composite `rgb` at `alpha` over the pixel.
    pub fn blend(&mut self, x: u32, y: u32, rgb: [f32; 3], alpha: f32) {
        if x >= self.width || y >= self.height || alpha <= 0.0 {
            return;
        }
        let o = (y as usize * self.width as usize + x as usize) * 4;
        let a = alpha.min(1.0);
        let below = self.rgba[o + 3];
        let out = a + below * (1.0 - a);
        for c in 0..3 {
            self.rgba[o + c] = if out > 0.0 {
                (rgb[c] * a + self.rgba[o + c] * below * (1.0 - a)) / out
            } else {
                0.0
            };
        }
        self.rgba[o + 3] = out;
    }

    /// The layer composited over a solid background.
    pub fn flatten(&self, background: [f32; 3]) -> Image {
        let data = self
            .rgba
            .chunks_exact(4)
            .flat_map(|p| (0..3).map(move |c| p[c] * p[3] + background[c] * (1.0 - p[3])))
            .collect();
        Image::new(self.width, self.height, data).expect("layer size")
    }

    /// 8-bit RGBA PNG bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.rgba.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        encode_png(self.width, self.height, png::ColorType::Rgba, &bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    fn disk(&mut self, centre: [f64; 2], radius: f32, alpha: f32, mut color: impl FnMut(f64) -> [f32; 3]) {
        let r = radius as f64;
        let (x0, x1) = ((centre[0] - r).floor().max(0.0), (centre[0] + r).ceil());
        let (y0, y1) = ((centre[1] - r).floor().max(0.0), (centre[1] + r).ceil());
        if x1 < 0.0 || y1 < 0.0 {
            return;
        }
        for y in y0 as u32..=(y1 as u32).min(self.height.saturating_sub(1)) {
            for x in x0 as u32..=(x1 as u32).min(self.width.saturating_sub(1)) {
                let (dx, dy) = (x as f64 - centre[0], y as f64 - centre[1]);
                if dx * dx + dy * dy <= r * r {
                    self.blend(x, y, color(dx), alpha);
                }
            }
        }
    }

    /// Pixels on the segment, each blended once.
    fn segment(&mut self, a: [f64; 2], b: [f64; 2], rgb: [f32; 3], alpha: f32) {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        let mut last = None;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let (x, y) = (p[0].round(), p[1].round());
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let px = (x as u32, y as u32);
            if last != Some(px) {
                self.blend(px.0, px.1, rgb, alpha);
                last = Some(px);
            }
        }
    }
}

/// Pixel coordinates of a world point, `None` behind the near plane.
pub fn project_point(camera: &Camera, p: [f32; 3]) -> Option<[f64; 2]> {
    let c = camera.to_camera_space(p);
    (c[2] > camera.near as f64).then(|| [camera.fx as f64 * c[0] / c[2] + camera.cx as f64, camera.fy as f64 * c[1] / c[2] + camera.cy as f64])
}

/// Barycentric blend of the palette colours for a direction in the image
/// plane (x right, y up).
pub fn direction_color(dx: f64, dy: f64) -> [f32; 3] {
    let sector = 2.0 * PI / 3.0;
    let theta = dy.atan2(dx).rem_euclid(2.0 * PI);
    let k = ((theta / sector) as usize).min(2);
    let phi = theta - k as f64 * sector;
    let a = (sector - phi).sin();
    let b = phi.sin();
    let mut rgb = [0f32; 3];
    rgb[k] = (a / (a + b)) as f32;
    rgb[(k + 1) % 3] = (b / (a + b)) as f32;
    rgb
}

/// Original and displaced projections of every primitive.
pub fn segment_endpoints(scene: &GaussianScene, v: &Variation, camera: &Camera) -> Result<Vec<Option<([f64; 2], [f64; 2])>>> {
    v.check_aligned(scene)?;
    Ok(scene
        .mu()
        .iter()
        .zip(&v.delta_mu)
        .map(|(m, d)| {
            let moved = [m[0] + d[0], m[1] + d[1], m[2] + d[2]];
            Some((project_point(camera, *m)?, project_point(camera, moved)?))
        })
        .collect())
}

fn quantile(mut values: Vec<f32>, q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f32::total_cmp);
    let i = ((values.len() - 1) as f64 * q).round() as usize;
    values[i]
}

fn norm3(v: &[f32; 3]) -> f32 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn viz_position(scene: &GaussianScene, v: &Variation, cfg: &VizConfig) -> Result<Layer> {
    cfg.validate()?;
    let ends = segment_endpoints(scene, v, &cfg.camera)?;
    let magnitudes: Vec<f32> = v.delta_mu.iter().map(norm3).collect();
    let normaliser = quantile(magnitudes.iter().copied().filter(|&m| m > 0.0).collect(), cfg.percentile);
    let mut layer = Layer::transparent(cfg.camera.width, cfg.camera.height);
    for (e, &m) in ends.iter().zip(&magnitudes) {
        let Some((a, b)) = e else { continue };
        if m == 0.0 || normaliser == 0.0 {
            continue;
        }
        let (dx, dy) = (b[0] - a[0], -(b[1] - a[1]));
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        layer.segment(*a, *b, direction_color(dx, dy), (m / normaliser).min(1.0));
    }
    Ok(layer)
}

/// Red for increases, blue for decreases, white below the neutral band.
pub fn signed_color(delta: f32, max_abs: f32) -> [f32; 3] {
    if max_abs == 0.0 || delta.abs() < NEUTRAL_FRACTION * max_abs {
        return WHITE;
    }
    let t = (delta.abs() / max_abs).min(1.0);
    let hue = if delta > 0.0 { RED } else { BLUE };
    std::array::from_fn(|c| WHITE[c] + t * (hue[c] - WHITE[c]))
}

fn scalar_deltas(v: &Variation, which: VizLayer) -> Result<Vec<f32>> {
    match which {
        VizLayer::Opacity => Ok(v.delta_opacity.clone()),
        VizLayer::Scale => Ok(v.delta_scale.iter().map(|s| (s[0] + s[1] + s[2]) / 3.0).collect()),
        other => Err(Error::Input(format!("{} is not a scalar layer", other.name()))),
    }
}

fn max_abs(values: impl IntoIterator<Item = f32>) -> f32 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn centres(scene: &GaussianScene, camera: &Camera) -> Vec<Option<[f64; 2]>> {
    scene.mu().iter().map(|m| project_point(camera, *m)).collect()
}

/// Opacity or mean-scale change as signed circles.
pub fn viz_scalar(scene: &GaussianScene, v: &Variation, which: VizLayer, cfg: &VizConfig) -> Result<Layer> {
    cfg.validate()?;
    v.check_aligned(scene)?;
    let deltas = scalar_deltas(v, which)?;
    let m = max_abs(deltas.iter().copied());
    let mut layer = Layer::transparent(cfg.camera.width, cfg.camera.height);
    for (c, &d) in centres(scene, &cfg.camera).iter().zip(&deltas) {
        if let Some(c) = c {
            layer.disk(*c, cfg.radius, 1.0, |_| signed_color(d, m));
        }
    }
    Ok(layer)
}

/// `δ/(2·max|δ|) + 0.5` per channel; a zero maximum maps to 0.5.
fn affine_color(d: &[f32; 3], max: f32) -> [f32; 3] {
    d.map(|x| if max > 0.0 { x / (2.0 * max) + 0.5 } else { 0.5 })
}

pub fn viz_color(scene: &GaussianScene, v: &Variation, cfg: &VizConfig) -> Result<Layer> {
    cfg.validate()?;
    v.check_aligned(scene)?;
    let max = max_abs(v.delta_color.iter().flatten().copied());
    let max_norm = v.delta_color.iter().map(norm3).fold(0.0, f32::max);
    let mut layer = Layer::transparent(cfg.camera.width, cfg.camera.height);
    if max_norm == 0.0 {
        return Ok(layer);
    }
    for (c, d) in centres(scene, &cfg.camera).iter().zip(&v.delta_color) {
        if let Some(c) = c {
            let rgb = affine_color(d, max);
            layer.disk(*c, cfg.radius, norm3(d) / max_norm, |_| rgb);
        }
    }
    Ok(layer)
}

/// Opacity from `|δr.w|`, colour from `(δr.x, δr.y, δr.z)`.
pub fn viz_rotation(scene: &GaussianScene, v: &Variation, cfg: &VizConfig) -> Result<Layer> {
    cfg.validate()?;
    v.check_aligned(scene)?;
    let max_w = max_abs(v.delta_rot.iter().map(|r| r[0]));
    let max_xyz = max_abs(v.delta_rot.iter().flat_map(|r| [r[1], r[2], r[3]]));
    let mut layer = Layer::transparent(cfg.camera.width, cfg.camera.height);
    if max_w == 0.0 {
        return Ok(layer);
    }
    for (c, r) in centres(scene, &cfg.camera).iter().zip(&v.delta_rot) {
        if let Some(c) = c {
            let rgb = affine_color(&[r[1], r[2], r[3]], max_xyz);
            layer.disk(*c, cfg.radius, r[0].abs() / max_w, |_| rgb);
        }
    }
    Ok(layer)
}

pub fn viz_layer(scene: &GaussianScene, v: &Variation, layer: VizLayer, cfg: &VizConfig) -> Result<Layer> {
    match layer {
        VizLayer::Position => viz_position(scene, v, cfg),
        VizLayer::Opacity | VizLayer::Scale => viz_scalar(scene, v, layer, cfg),
        VizLayer::Color => viz_color(scene, v, cfg),
        VizLayer::Rotation => viz_rotation(scene, v, cfg),
    }
}

/// Opacity on the left half of each circle, mean scale on the right.
fn opacity_scale(scene: &GaussianScene, v: &Variation, cfg: &VizConfig) -> Result<Layer> {
    let op = scalar_deltas(v, VizLayer::Opacity)?;
    let sc = scalar_deltas(v, VizLayer::Scale)?;
    let (mo, ms) = (max_abs(op.iter().copied()), max_abs(sc.iter().copied()));
    let mut layer = Layer::transparent(cfg.camera.width, cfg.camera.height);
    for ((c, &o), &s) in centres(scene, &cfg.camera).iter().zip(&op).zip(&sc) {
        if let Some(c) = c {
            layer.disk(*c, cfg.radius, 1.0, |dx| if dx < 0.0 { signed_color(o, mo) } else { signed_color(s, ms) });
        }
    }
    Ok(layer)
}

pub const PANEL_LABELS: [&str; 6] = ["before", "after", "position", "opacity|scale", "color", "rotation"];

fn label(img: &mut Image, text: &str) {
    let pixels = font::text_pixels(text);
    for &(x, y) in &pixels {
        for (ox, oy) in [(0, 1), (2, 1), (1, 0), (1, 2)] {
            let (hx, hy) = (x + 1 + ox, y + 1 + oy);
            if hx >= 1 && hy >= 1 && hx - 1 < img.width() && hy - 1 < img.height() {
                img.set_pixel(hx - 1, hy - 1, WHITE);
            }
        }
    }
    for &(x, y) in &pixels {
        if x + 1 < img.width() && y + 1 < img.height() {
            img.set_pixel(x + 1, y + 1, [0.0; 3]);
        }
    }
}

/// 3×2 grid of `camera`-sized tiles: before and after renders, then the
/// position, opacity|scale, colour and rotation layers over white.
pub fn viz_panel(scene: &GaussianScene, v: &Variation, cfg: &VizConfig) -> Result<Image> {
    cfg.validate()?;
    v.check_aligned(scene)?;
    let cam = &cfg.camera;
    let tiles = [
        render(scene, cam, cfg.background).image,
        render(&overlay(scene, v)?, cam, cfg.background).image,
        viz_position(scene, v, cfg)?.flatten(WHITE),
        opacity_scale(scene, v, cfg)?.flatten(WHITE),
        viz_color(scene, v, cfg)?.flatten(WHITE),
        viz_rotation(scene, v, cfg)?.flatten(WHITE),
    ];
    let (w, h) = (cam.width, cam.height);
    let mut panel = Image::filled(3 * w, 2 * h, WHITE);
    for (i, (mut tile, text)) in tiles.into_iter().zip(PANEL_LABELS).enumerate() {
        label(&mut tile, text);
        let (ox, oy) = ((i as u32 % 3) * w, (i as u32 / 3) * h);
        for y in 0..h {
            for x in 0..w {
                panel.set_pixel(ox + x, oy + y, tile.pixel(x, y));
            }
        }
    }
    Ok(panel)
}
