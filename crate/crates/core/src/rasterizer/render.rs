use serde::{Deserialize, Serialize};

use crate::gaussians::GaussianScene;
use crate::rasterizer::camera::Camera;
use crate::rasterizer::image::Image;
use crate::rasterizer::project::{project_ewa_with, sort_front_to_back, ProjectedGaussian, LOW_PASS, MAX_ALPHA, MIN_ALPHA};

pub const TILE: u32 = 16;
/// Blending stops before a contributor would drop transmittance below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub background: [f32; 3],
    /// Added to the diagonal of every screen-space covariance.
    pub low_pass: f64,
    /// Stop blending once transmittance would fall under 1e-4.
    pub early_stop: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            low_pass: LOW_PASS,
            early_stop: true,
        }
    }
}

impl RenderSettings {
    pub fn with_background(background: [f32; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }
}

/// Everything the backward pass needs to replay the blend.
#[derive(Clone, Debug)]
pub(crate) struct BlendRecords {
    pub scene: GaussianScene,
    pub camera: Camera,
    pub settings: RenderSettings,
    /// Visible primitives, sorted front to back.
    pub projected: Vec<ProjectedGaussian>,
    pub tiles_x: u32,
    /// Per tile, positions into `projected`, front to back.
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel, transmittance left after the last blended contributor.
    pub final_t: Vec<f64>,
    /// Per pixel, how many entries of its tile list were visited.
    pub n_contrib: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pixels: Vec<f64>,
    pub(crate) records: Option<BlendRecords>,
}

impl RenderOutput {
    /// Pixel values before rounding to f32.
    pub fn pixels_f64(&self) -> &[f64] {
        &self.pixels
    }

    pub fn has_records(&self) -> bool {
        self.records.is_some()
    }

    /// Drop the blend records, keeping only the image.
    pub fn discard_records(&mut self) {
        self.records = None;
    }

    /// Sorted contributor list of the tile at `(tx, ty)`, as scene indices.
    pub fn tile_contributors(&self, tx: u32, ty: u32) -> Option<Vec<usize>> {
        let r = self.records.as_ref()?;
        let list = r.tile_lists.get((ty * r.tiles_x + tx) as usize)?;
        Some(list.iter().map(|&p| r.projected[p as usize].index).collect())
    }

    /// Per-pixel transmittance left for the background.
    pub fn final_transmittance(&self) -> Option<&[f64]> {
        self.records.as_ref().map(|r| r.final_t.as_slice())
    }

    /// Number of primitive–tile pairs produced by binning.
    pub fn tile_pairs(&self) -> usize {
        self.records
            .as_ref()
            .map_or(0, |r| r.tile_lists.iter().map(Vec::len).sum())
    }
}

fn tile_range(lo: f64, hi: f64, tiles: u32) -> Option<(u32, u32)> {
    let t0 = (lo / TILE as f64).floor().max(0.0);
    let t1 = (hi / TILE as f64).floor().min(tiles as f64 - 1.0);
    (t0 <= t1).then_some((t0 as u32, t1 as u32))
}

/// Tile-based front-to-back rasterization with default settings.
pub fn render(scene: &GaussianScene, camera: &Camera, background: [f32; 3]) -> RenderOutput {
    render_with(scene, camera, &RenderSettings::with_background(background))
}

pub fn render_with(scene: &GaussianScene, camera: &Camera, settings: &RenderSettings) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut projected = project_ewa_with(scene, camera, settings.low_pass);
    sort_front_to_back(&mut projected);

    let mut tile_lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (pos, g) in projected.iter().enumerate() {
        let [mx, my] = g.mean2d;
        let xs = tile_range(mx - g.radius, mx + g.radius, tiles_x);
        let ys = tile_range(my - g.radius, my + g.radius, tiles_y);
        if let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) {
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    tile_lists[(ty * tiles_x + tx) as usize].push(pos as u32);
                }
            }
        }
    }

    let npix = camera.pixels();
    let bg = settings.background.map(|v| v as f64);
    let mut pixels = vec![0f64; npix * 3];
    let mut final_t = vec![1f64; npix];
    let mut n_contrib = vec![0u32; npix];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &tile_lists[(ty * tiles_x + tx) as usize];
            for py in ty * TILE..((ty + 1) * TILE).min(h) {
                for px in tx * TILE..((tx + 1) * TILE).min(w) {
                    let pix = (py * w + px) as usize;
                    let mut t = 1.0f64;
                    let mut c = [0f64; 3];
                    let mut visited = 0u32;
                    for (k, &pos) in list.iter().enumerate() {
                        let g = &projected[pos as usize];
                        let Some((o, _, _)) = g.alpha_at(px as f64, py as f64) else {
                            continue;
                        };
                        let next = t * (1.0 - o);
                        if settings.early_stop && next < MIN_TRANSMITTANCE {
                            break;
                        }
                        for ch in 0..3 {
                            c[ch] += g.color[ch] * o * t;
                        }
                        t = next;
                        visited = k as u32 + 1;
                    }
                    for ch in 0..3 {
                        pixels[pix * 3 + ch] = c[ch] + t * bg[ch];
                    }
                    final_t[pix] = t;
                    n_contrib[pix] = visited;
                }
            }
        }
    }
    let image = Image::new(w, h, pixels.iter().map(|&v| v as f32).collect())
        .expect("render buffer matches camera size");
    RenderOutput {
        image,
        pixels,
        records: Some(BlendRecords {
            scene: scene.clone(),
            camera: camera.clone(),
            settings: *settings,
            projected,
            tiles_x,
            tile_lists,
            final_t,
            n_contrib,
        }),
    }
}

/// Reference renderer: every pixel blends every visible primitive in
/// global depth order, with no tiling, footprint bound or early stop.
pub fn render_bruteforce(scene: &GaussianScene, camera: &Camera, settings: &RenderSettings) -> Image {
    let mut projected = project_ewa_with(scene, camera, settings.low_pass);
    sort_front_to_back(&mut projected);
    let bg = settings.background.map(|v| v as f64);
    let (w, h) = (camera.width, camera.height);
    let mut data = Vec::with_capacity(camera.pixels() * 3);
    for py in 0..h {
        for px in 0..w {
            let mut t = 1.0f64;
            let mut c = [0f64; 3];
            for g in &projected {
                if let Some((o, _, _)) = g.alpha_at(px as f64, py as f64) {
                    for ch in 0..3 {
                        c[ch] += g.color[ch] * o * t;
                    }
                    t *= 1.0 - o;
                }
            }
            data.extend((0..3).map(|ch| (c[ch] + t * bg[ch]) as f32));
        }
    }
    Image::new(w, h, data).expect("render buffer matches camera size")
}

/// How far every pixel's opacity stays from the skip and clamp thresholds,
/// as the smallest of `raw/MIN_ALPHA` and `MAX_ALPHA/raw`. Above 1 the
/// render is a smooth function of the attributes. Culled primitives give 0.
pub fn threshold_margin(scene: &GaussianScene, camera: &Camera, settings: &RenderSettings) -> f64 {
    let projected = project_ewa_with(scene, camera, settings.low_pass);
    if projected.len() != scene.len() {
        return 0.0;
    }
    let mut margin = f64::INFINITY;
    for g in &projected {
        let [a, b, c] = g.conic;
        for py in 0..camera.height {
            for px in 0..camera.width {
                let dx = px as f64 - g.mean2d[0];
                let dy = py as f64 - g.mean2d[1];
                let raw = g.opacity * (-0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy).exp();
                margin = margin.min(raw / MIN_ALPHA).min(MAX_ALPHA / raw);
            }
        }
    }
    margin
}
