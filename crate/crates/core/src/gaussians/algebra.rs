use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussians::scene::{quat_norm, GaussianScene, ATTRIBUTES, QUAT_NORM_TOLERANCE};
use crate::gaussians::variation::Variation;

pub const OPACITY_MIN: f32 = 1e-6;
pub const OPACITY_MAX: f32 = 1.0 - 1e-6;
pub const SCALE_MIN: f32 = 1e-7;

/// Gradients of a scalar with respect to every attribute of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients {
    pub mu: Vec<[f32; 3]>,
    pub scale: Vec<[f32; 3]>,
    pub opacity: Vec<f32>,
    pub color: Vec<[f32; 3]>,
    pub rot: Vec<[f32; 4]>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            mu: vec![[0.0; 3]; n],
            scale: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            rot: vec![[0.0; 4]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn row(&self, i: usize) -> [f32; ATTRIBUTES] {
        let mut a = [0.0; ATTRIBUTES];
        a[0..3].copy_from_slice(&self.mu[i]);
        a[3..6].copy_from_slice(&self.scale[i]);
        a[6] = self.opacity[i];
        a[7..10].copy_from_slice(&self.color[i]);
        a[10..14].copy_from_slice(&self.rot[i]);
        a
    }

    pub fn to_rows(&self) -> Vec<f32> {
        (0..self.len()).flat_map(|i| self.row(i)).collect()
    }

    pub fn add_assign(&mut self, other: &SceneGradients) {
        for i in 0..self.len().min(other.len()) {
            for k in 0..3 {
                self.mu[i][k] += other.mu[i][k];
                self.scale[i][k] += other.scale[i][k];
                self.color[i][k] += other.color[i][k];
            }
            self.opacity[i] += other.opacity[i];
            for k in 0..4 {
                self.rot[i][k] += other.rot[i][k];
            }
        }
    }
}

/// Which projections fired during [`overlay_traced`], enough to pull
/// gradients on the result back onto the variation.
#[derive(Clone, Debug)]
pub struct OverlayTrace {
    scale_free: Vec<[bool; 3]>,
    opacity_free: Vec<bool>,
    color_free: Vec<[bool; 3]>,
    /// Pre-normalisation quaternion when renormalisation was applied.
    renormalized: Vec<Option<[f32; 4]>>,
}

impl OverlayTrace {
    /// Gradient with respect to the variation as `[N, 14]` rows.
    pub fn backward(&self, grads: &SceneGradients) -> Vec<f32> {
        let n = self.opacity_free.len();
        let mut out = vec![0.0f32; n * ATTRIBUTES];
        for i in 0..n {
            let r = &mut out[i * ATTRIBUTES..(i + 1) * ATTRIBUTES];
            r[0..3].copy_from_slice(&grads.mu[i]);
            for k in 0..3 {
                r[3 + k] = if self.scale_free[i][k] { grads.scale[i][k] } else { 0.0 };
                r[7 + k] = if self.color_free[i][k] { grads.color[i][k] } else { 0.0 };
            }
            r[6] = if self.opacity_free[i] { grads.opacity[i] } else { 0.0 };
            let g = grads.rot[i];
            match self.renormalized[i] {
                None => r[10..14].copy_from_slice(&g),
                Some(q) => {
                    let norm = quat_norm(&q);
                    if norm > 1e-12 {
                        let u = q.map(|v| v / norm);
                        let dot: f32 = (0..4).map(|k| u[k] * g[k]).sum();
                        for k in 0..4 {
                            r[10 + k] = (g[k] - u[k] * dot) / norm;
                        }
                    }
                }
            }
        }
        out
    }
}

/// `X^r = X^s + Δ` followed by projection onto the feasible set.
pub fn overlay(scene: &GaussianScene, v: &Variation) -> Result<GaussianScene> {
    overlay_traced(scene, v).map(|(s, _)| s)
}

/// Like [`overlay`], also returning the projection record for backprop.
///
/// Quaternions whose sum stays within the unit-norm tolerance are kept
/// as is, so a zero variation reproduces the scene bit for bit.
pub fn overlay_traced(scene: &GaussianScene, v: &Variation) -> Result<(GaussianScene, OverlayTrace)> {
    v.check_aligned(scene)?;
    let n = scene.len();
    let mut mu = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    let mut opacity = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    let mut rot = Vec::with_capacity(n);
    let mut trace = OverlayTrace {
        scale_free: Vec::with_capacity(n),
        opacity_free: Vec::with_capacity(n),
        color_free: Vec::with_capacity(n),
        renormalized: Vec::with_capacity(n),
    };
    for i in 0..n {
        let p = scene.primitive(i);
        let m = [0, 1, 2].map(|k| p.mu[k] + v.delta_mu[i][k]);
        let s_raw = [0, 1, 2].map(|k| p.scale[k] + v.delta_scale[i][k]);
        let a_raw = p.opacity + v.delta_opacity[i];
        let c_raw = [0, 1, 2].map(|k| p.color[k] + v.delta_color[i][k]);
        let q_raw = [0, 1, 2, 3].map(|k| p.rot[k] + v.delta_rot[i][k]);
        let nonfinite = m
            .iter()
            .chain(&s_raw)
            .chain(&c_raw)
            .chain(&q_raw)
            .chain(std::iter::once(&a_raw))
            .any(|x| !x.is_finite());
        if nonfinite {
            return Err(Error::Data {
                index: i,
                detail: "non-finite value after overlay".into(),
            });
        }
        mu.push(m);
        scale.push(s_raw.map(|s| s.max(SCALE_MIN)));
        trace.scale_free.push(s_raw.map(|s| s >= SCALE_MIN));
        opacity.push(a_raw.clamp(OPACITY_MIN, OPACITY_MAX));
        trace
            .opacity_free
            .push((OPACITY_MIN..=OPACITY_MAX).contains(&a_raw));
        color.push(c_raw.map(|c| c.clamp(0.0, 1.0)));
        trace.color_free.push(c_raw.map(|c| (0.0..=1.0).contains(&c)));
        let norm = quat_norm(&q_raw);
        if (norm - 1.0).abs() <= QUAT_NORM_TOLERANCE {
            rot.push(q_raw);
            trace.renormalized.push(None);
        } else if norm > 1e-12 {
            rot.push(q_raw.map(|x| x / norm));
            trace.renormalized.push(Some(q_raw));
        } else {
            rot.push([1.0, 0.0, 0.0, 0.0]);
            trace.renormalized.push(Some([0.0; 4]));
        }
    }
    let out = GaussianScene::from_parts_unchecked(mu, scale, opacity, color, rot);
    Ok((out, trace))
}

/// Per-attribute multipliers; a bare `f32` scales every attribute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeWeights {
    pub mu: f32,
    pub scale: f32,
    pub opacity: f32,
    pub color: f32,
    pub rot: f32,
}

impl AttributeWeights {
    pub fn uniform(w: f32) -> Self {
        Self {
            mu: w,
            scale: w,
            opacity: w,
            color: w,
            rot: w,
        }
    }
}

impl From<f32> for AttributeWeights {
    fn from(w: f32) -> Self {
        Self::uniform(w)
    }
}

/// Multiply each delta array by its weight.
pub fn scale_variation(v: &Variation, weights: impl Into<AttributeWeights>) -> Variation {
    let w = weights.into();
    Variation {
        scene_id: v.scene_id,
        delta_mu: v.delta_mu.iter().map(|d| d.map(|x| x * w.mu)).collect(),
        delta_scale: v.delta_scale.iter().map(|d| d.map(|x| x * w.scale)).collect(),
        delta_opacity: v.delta_opacity.iter().map(|x| x * w.opacity).collect(),
        delta_color: v.delta_color.iter().map(|d| d.map(|x| x * w.color)).collect(),
        delta_rot: v.delta_rot.iter().map(|d| d.map(|x| x * w.rot)).collect(),
    }
}

/// Blend weight for [`mix_variations`]: one value or one per primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MixWeights {
    Scalar(f32),
    PerPrimitive(Vec<f32>),
}

impl From<f32> for MixWeights {
    fn from(w: f32) -> Self {
        MixWeights::Scalar(w)
    }
}

impl From<Vec<f32>> for MixWeights {
    fn from(w: Vec<f32>) -> Self {
        MixWeights::PerPrimitive(w)
    }
}

/// Per-primitive `w·v1 + (1−w)·v2`.
pub fn mix_variations(v1: &Variation, v2: &Variation, weights: &MixWeights) -> Result<Variation> {
    v1.check_compatible(v2)?;
    let n = v1.len();
    let per: Vec<f32> = match weights {
        MixWeights::Scalar(w) => vec![*w; n],
        MixWeights::PerPrimitive(ws) => {
            if ws.len() != n {
                return Err(Error::Alignment(format!(
                    "{} mix weights for {n} primitives",
                    ws.len()
                )));
            }
            ws.clone()
        }
    };
    if let Some(i) = per.iter().position(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Input(format!("mix weight {} at {i} outside [0, 1]", per[i])));
    }
    let mut out = Variation::zeros(v1.scene_id, n);
    for (i, &w) in per.iter().enumerate() {
        let (a, b) = (v1.row(i), v2.row(i));
        let mut r = [0.0; ATTRIBUTES];
        for k in 0..ATTRIBUTES {
            r[k] = w * a[k] + (1.0 - w) * b[k];
        }
        out.set_row(i, &r);
    }
    Ok(out)
}

/// Region predicate over primitives, evaluated on source positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    All,
    /// Inclusive axis-aligned box.
    Box { min: [f32; 3], max: [f32; 3] },
    /// Closed ball.
    Sphere { center: [f32; 3], radius: f32 },
    Indices(Vec<usize>),
}

impl Selector {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Selector::All => Ok(()),
            Selector::Box { min, max } => {
                if min.iter().chain(max).any(|v| !v.is_finite()) {
                    return Err(Error::Input("box bounds must be finite".into()));
                }
                if (0..3).any(|k| min[k] > max[k]) {
                    return Err(Error::Input(format!("box min {min:?} exceeds max {max:?}")));
                }
                Ok(())
            }
            Selector::Sphere { center, radius } => {
                if center.iter().any(|v| !v.is_finite()) || !radius.is_finite() || *radius < 0.0 {
                    return Err(Error::Input(format!(
                        "sphere center {center:?} radius {radius} is malformed"
                    )));
                }
                Ok(())
            }
            Selector::Indices(idx) => match idx.iter().find(|&&i| i >= n) {
                Some(i) => Err(Error::Input(format!("index {i} out of range for {n} primitives"))),
                None => Ok(()),
            },
        }
    }

    /// Membership mask over the scene's primitives.
    pub fn select(&self, scene: &GaussianScene) -> Result<Vec<bool>> {
        self.validate(scene.len())?;
        let mu = scene.mu();
        Ok(match self {
            Selector::All => vec![true; mu.len()],
            Selector::Box { min, max } => mu
                .iter()
                .map(|p| (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]))
                .collect(),
            Selector::Sphere { center, radius } => mu
                .iter()
                .map(|p| {
                    let d2: f32 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                    d2 <= radius * radius
                })
                .collect(),
            Selector::Indices(idx) => {
                let mut m = vec![false; mu.len()];
                for &i in idx {
                    m[i] = true;
                }
                m
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedVariation {
    pub variation: Variation,
    pub selected: usize,
    /// True when the selector matched no primitive.
    pub empty: bool,
}

/// Zero the deltas of primitives outside `selector`.
pub fn mask_variation(v: &Variation, scene: &GaussianScene, selector: &Selector) -> Result<MaskedVariation> {
    v.check_aligned(scene)?;
    let keep = selector.select(scene)?;
    let mut out = v.clone();
    for (i, &k) in keep.iter().enumerate() {
        if !k {
            out.set_row(i, &[0.0; ATTRIBUTES]);
        }
    }
    let selected = keep.iter().filter(|&&k| k).count();
    Ok(MaskedVariation {
        variation: out,
        selected,
        empty: selected == 0,
    })
}
