use crate::error::{Error, Result};
use crate::gaussians::scene::{GaussianScene, ATTRIBUTES};

/// Per-primitive additive deltas in activated space, bound to one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Variation {
    pub scene_id: u64,
    pub delta_mu: Vec<[f32; 3]>,
    pub delta_scale: Vec<[f32; 3]>,
    pub delta_opacity: Vec<f32>,
    pub delta_color: Vec<[f32; 3]>,
    pub delta_rot: Vec<[f32; 4]>,
}

impl Variation {
    pub fn zeros(scene_id: u64, n: usize) -> Self {
        Self {
            scene_id,
            delta_mu: vec![[0.0; 3]; n],
            delta_scale: vec![[0.0; 3]; n],
            delta_opacity: vec![0.0; n],
            delta_color: vec![[0.0; 3]; n],
            delta_rot: vec![[0.0; 4]; n],
        }
    }

    pub fn zeros_for(scene: &GaussianScene) -> Self {
        Self::zeros(scene.content_id(), scene.len())
    }

    /// Build from `n` rows of 14 values in `(μ, s, α, c, r)` order.
    pub fn from_rows(scene_id: u64, rows: &[f32]) -> Result<Self> {
        if rows.len() % ATTRIBUTES != 0 {
            return Err(Error::dim(
                "variation_from_rows",
                format!("{} values is not a multiple of {ATTRIBUTES}", rows.len()),
            ));
        }
        let n = rows.len() / ATTRIBUTES;
        let mut v = Self::zeros(scene_id, n);
        for (i, r) in rows.chunks_exact(ATTRIBUTES).enumerate() {
            v.delta_mu[i].copy_from_slice(&r[0..3]);
            v.delta_scale[i].copy_from_slice(&r[3..6]);
            v.delta_opacity[i] = r[6];
            v.delta_color[i].copy_from_slice(&r[7..10]);
            v.delta_rot[i].copy_from_slice(&r[10..14]);
        }
        v.check_shape()?;
        Ok(v)
    }

    pub fn row(&self, i: usize) -> [f32; ATTRIBUTES] {
        let mut a = [0.0; ATTRIBUTES];
        a[0..3].copy_from_slice(&self.delta_mu[i]);
        a[3..6].copy_from_slice(&self.delta_scale[i]);
        a[6] = self.delta_opacity[i];
        a[7..10].copy_from_slice(&self.delta_color[i]);
        a[10..14].copy_from_slice(&self.delta_rot[i]);
        a
    }

    pub fn set_row(&mut self, i: usize, r: &[f32; ATTRIBUTES]) {
        self.delta_mu[i].copy_from_slice(&r[0..3]);
        self.delta_scale[i].copy_from_slice(&r[3..6]);
        self.delta_opacity[i] = r[6];
        self.delta_color[i].copy_from_slice(&r[7..10]);
        self.delta_rot[i].copy_from_slice(&r[10..14]);
    }

    /// All rows concatenated, `[N, 14]` row-major.
    pub fn to_rows(&self) -> Vec<f32> {
        (0..self.len()).flat_map(|i| self.row(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.delta_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_mu.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        (0..self.len()).all(|i| self.row(i).iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|i| self.row(i).iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f32 {
        (0..self.len())
            .flat_map(|i| self.row(i))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let n = self.len();
        if self.delta_scale.len() != n
            || self.delta_opacity.len() != n
            || self.delta_color.len() != n
            || self.delta_rot.len() != n
        {
            return Err(Error::Alignment("variation arrays have different lengths".into()));
        }
        Ok(())
    }

    /// Ensure this variation can be applied to `scene`.
    pub fn check_aligned(&self, scene: &GaussianScene) -> Result<()> {
        self.check_shape()?;
        if self.len() != scene.len() {
            return Err(Error::Alignment(format!(
                "variation has {} rows, scene has {} primitives",
                self.len(),
                scene.len()
            )));
        }
        let id = scene.content_id();
        if self.scene_id != id {
            return Err(Error::Alignment(format!(
                "variation bound to scene {:016x}, got {id:016x}",
                self.scene_id
            )));
        }
        Ok(())
    }

    pub(crate) fn check_compatible(&self, other: &Variation) -> Result<()> {
        self.check_shape()?;
        other.check_shape()?;
        if self.scene_id != other.scene_id {
            return Err(Error::Alignment(format!(
                "variations bound to different scenes {:016x} and {:016x}",
                self.scene_id, other.scene_id
            )));
        }
        if self.len() != other.len() {
            return Err(Error::Alignment(format!(
                "variations have {} and {} rows",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Element-wise sum of two variations of the same scene.
    pub fn add(&self, other: &Variation) -> Result<Variation> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for i in 0..self.len() {
            let (a, b) = (self.row(i), other.row(i));
            let mut r = [0.0; ATTRIBUTES];
            for k in 0..ATTRIBUTES {
                r[k] = a[k] + b[k];
            }
            out.set_row(i, &r);
        }
        Ok(out)
    }

    /// Same deltas, re-bound to another scene with the same primitive count.
    pub fn rebind(mut self, scene: &GaussianScene) -> Result<Variation> {
        if self.len() != scene.len() {
            return Err(Error::Alignment(format!(
                "cannot rebind {} rows to a scene of {} primitives",
                self.len(),
                scene.len()
            )));
        }
        self.scene_id = scene.content_id();
        Ok(self)
    }
}
