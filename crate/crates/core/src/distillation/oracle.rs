use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::{GaussianScene, Primitive};
use crate::numerics::Tensor;
use crate::predictor::{eps0, normalize_instruction};
use crate::rasterizer::{render_with, Camera, Image, RenderOutput, RenderSettings};

pub const GOLD: [f32; 3] = [1.0, 0.843, 0.0];
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// The target is a pure function of (scene, camera, instruction, ε).
    #[default]
    Deterministic,
    /// One extra unrecorded parameter also shifts the edit.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorKind {
    ImageSpace,
    SceneSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EditAction {
    /// Blend towards gold with strength `0.6 + 0.4·σ(θ)`.
    GoldTint,
    /// Replace colour by its luma.
    Desaturate,
    /// Blend towards `luma · color` with strength `0.5 + 0.5·σ(θ)`.
    Recolor { color: [f32; 3] },
    /// Move primitives above the μ-centroid up by `base·σ(θ)`.
    Lift { base: f32 },
    /// Multiply opacity on one side of the centroid by `1 − 0.9·(0.5 + 0.5·σ(θ))`.
    Fade { axis: usize, positive_side: bool },
}

impl EditAction {
    pub fn kind(&self) -> EditorKind {
        match self {
            Self::GoldTint | Self::Desaturate | Self::Recolor { .. } => EditorKind::ImageSpace,
            Self::Lift { .. } | Self::Fade { .. } => EditorKind::SceneSpace,
        }
    }

    /// The edit's scalar parameter as a function of `θ`.
    pub fn strength(&self, theta: f64) -> f64 {
        match self {
            Self::GoldTint => 0.6 + 0.4 * sigmoid(theta),
            Self::Desaturate => 1.0,
            Self::Recolor { .. } | Self::Fade { .. } => 0.5 + 0.5 * sigmoid(theta),
            Self::Lift { base } => *base as f64 * sigmoid(theta),
        }
    }

    /// Image-space edits are affine colour maps `c ↦ M c + b`.
    pub fn color_map(&self, theta: f64) -> Option<([[f64; 3]; 3], [f64; 3])> {
        let s = self.strength(theta);
        let identity = |k: f64| -> [[f64; 3]; 3] { std::array::from_fn(|r| std::array::from_fn(|c| if r == c { k } else { 0.0 })) };
        match self {
            Self::GoldTint => Some((identity(1.0 - s), GOLD.map(|g| s * g as f64))),
            Self::Desaturate => Some(([LUMA; 3], [0.0; 3])),
            Self::Recolor { color } => {
                let mut m = identity(1.0 - s);
                for r in 0..3 {
                    for c in 0..3 {
                        m[r][c] += s * color[r] as f64 * LUMA[c];
                    }
                }
                Some((m, [0.0; 3]))
            }
            Self::Lift { .. } | Self::Fade { .. } => None,
        }
    }

    /// Scene-space edits change the primitives directly.
    pub fn edit_scene(&self, scene: &GaussianScene, theta: f64) -> Option<Result<GaussianScene>> {
        let s = self.strength(theta);
        let centroid = scene.centroid();
        let prims = scene.primitives();
        let edited: Vec<Primitive> = match *self {
            Self::Lift { .. } => prims
                .map(|mut p| {
                    if p.mu[1] > centroid[1] {
                        p.mu[1] = (p.mu[1] as f64 + s) as f32;
                    }
                    p
                })
                .collect(),
            Self::Fade { axis, positive_side } => prims
                .map(|mut p| {
                    let above = p.mu[axis] > centroid[axis];
                    if above == positive_side {
                        p.opacity = (p.opacity as f64 * (1.0 - 0.9 * s)).max(1e-6) as f32;
                    }
                    p
                })
                .collect(),
            _ => return None,
        };
        Some(GaussianScene::from_primitives(edited))
    }
}

/// Apply `c ↦ M c + b` to the splatted colour of every pixel while leaving
/// the background share untouched: `T·bg + M(x − T·bg) + b(1 − T)`. The
/// result equals rendering the scene with every primitive colour mapped.
pub fn map_splat_colors(out: &RenderOutput, background: [f32; 3], m: &[[f64; 3]; 3], b: &[f64; 3]) -> Result<Image> {
    let t_final = out
        .final_transmittance()
        .ok_or_else(|| Error::State("colour map needs blend records".into()))?;
    let x = out.pixels_f64();
    let bg = background.map(|v| v as f64);
    let mut data = Vec::with_capacity(x.len());
    for (p, &t) in t_final.iter().enumerate() {
        let fg: [f64; 3] = std::array::from_fn(|c| x[p * 3 + c] - t * bg[c]);
        for r in 0..3 {
            let v = t * bg[r] + (0..3).map(|c| m[r][c] * fg[c]).sum::<f64>() + b[r] * (1.0 - t);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(out.image.width(), out.image.height(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEditor {
    pub name: String,
    /// Regular expressions tried against the normalised instruction.
    pub patterns: Vec<String>,
    #[serde(flatten)]
    pub action: EditAction,
}

impl OracleEditor {
    pub fn new(name: &str, patterns: &[&str], action: EditAction) -> Self {
        Self {
            name: name.into(),
            patterns: patterns.iter().map(|p| p.to_string()).collect(),
            action,
        }
    }

    pub fn kind(&self) -> EditorKind {
        self.action.kind()
    }
}

#[derive(Clone, Debug)]
pub struct OracleRegistry {
    editors: Vec<OracleEditor>,
    compiled: Vec<Vec<Regex>>,
}

impl Default for OracleRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl OracleRegistry {
    pub fn new(editors: Vec<OracleEditor>) -> Result<Self> {
        let compiled = editors
            .iter()
            .map(|e| {
                e.patterns
                    .iter()
                    .map(|p| Regex::new(p).map_err(|err| Error::Config(format!("editor {}: {err}", e.name))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { editors, compiled })
    }

    pub fn builtin() -> Self {
        let recolor = |name: &str, word: &str, color: [f32; 3]| {
            OracleEditor::new(name, &[&format!(r"\b{word}\b")], EditAction::Recolor { color })
        };
        Self::new(vec![
            OracleEditor::new("gold_tint", &[r"\b(gold|golden|gilded)\b"], EditAction::GoldTint),
            OracleEditor::new(
                "desaturate",
                &[r"\b(grayscale|greyscale|desaturate|colorless)\b", r"\bblack and white\b"],
                EditAction::Desaturate,
            ),
            recolor("recolor_red", "red", [1.0, 0.0, 0.0]),
            recolor("recolor_green", "green", [0.0, 1.0, 0.0]),
            recolor("recolor_blue", "blue", [0.0, 0.0, 1.0]),
            OracleEditor::new("lift_top", &[r"\b(lift|raise)\b"], EditAction::Lift { base: 0.3 }),
            OracleEditor::new(
                "fade_left",
                &[r"\bfade\b.*\bleft\b"],
                EditAction::Fade { axis: 0, positive_side: false },
            ),
            OracleEditor::new(
                "fade_right",
                &[r"\bfade\b.*\bright\b"],
                EditAction::Fade { axis: 0, positive_side: true },
            ),
        ])
        .expect("built-in patterns compile")
    }

    pub fn editors(&self) -> &[OracleEditor] {
        &self.editors
    }

    pub fn known_patterns(&self) -> String {
        self.editors
            .iter()
            .map(|e| format!("{}: {}", e.name, e.patterns.join(" | ")))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// The single editor whose patterns match the instruction.
    pub fn resolve(&self, instruction: &str) -> Result<&OracleEditor> {
        let text = normalize_instruction(instruction).join(" ");
        let hits: Vec<usize> = (0..self.editors.len())
            .filter(|&i| self.compiled[i].iter().any(|r| r.is_match(&text)))
            .collect();
        match hits.as_slice() {
            [i] => Ok(&self.editors[*i]),
            [] => Err(Error::UnknownInstruction {
                instruction: instruction.into(),
                known: self.known_patterns(),
            }),
            many => Err(Error::AmbiguousInstruction {
                instruction: instruction.into(),
                editors: many.iter().map(|&i| self.editors[i].name.clone()).collect(),
            }),
        }
    }

    /// Edit parameter `θ`: `ε₀` of the noise, plus an unrecorded uniform
    /// draw in `[−1, 1]` in degenerate mode.
    pub fn theta(eps: &Tensor, flow: FlowMode, extra_seed: u64) -> f64 {
        let base = eps0(eps) as f64;
        match flow {
            FlowMode::Deterministic => base,
            FlowMode::Degenerate => base + ChaCha8Rng::seed_from_u64(extra_seed).gen_range(-1.0..=1.0),
        }
    }

    /// Target image for one triplet.
    #[allow(clippy::too_many_arguments)]
    pub fn edit(
        &self,
        scene: &GaussianScene,
        camera: &Camera,
        instruction: &str,
        eps: &Tensor,
        flow: FlowMode,
        extra_seed: u64,
        settings: &RenderSettings,
    ) -> Result<Image> {
        let editor = self.resolve(instruction)?;
        let theta = Self::theta(eps, flow, extra_seed);
        apply_action(&editor.action, scene, camera, theta, settings)
    }
}

pub fn apply_action(
    action: &EditAction,
    scene: &GaussianScene,
    camera: &Camera,
    theta: f64,
    settings: &RenderSettings,
) -> Result<Image> {
    if let Some((m, b)) = action.color_map(theta) {
        let out = render_with(scene, camera, settings);
        return map_splat_colors(&out, settings.background, &m, &b);
    }
    let edited = action.edit_scene(scene, theta).expect("scene-space action")?;
    Ok(render_with(&edited, camera, settings).image)
}
