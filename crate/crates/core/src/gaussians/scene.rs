use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of scalar attributes per primitive: μ(3) s(3) α(1) c(3) r(4).
pub const ATTRIBUTES: usize = 14;

/// Allowed deviation of a stored quaternion's norm from 1.
pub const QUAT_NORM_TOLERANCE: f32 = 1e-5;

/// One Gaussian primitive in activated space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub mu: [f32; 3],
    pub scale: [f32; 3],
    pub opacity: f32,
    pub color: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rot: [f32; 4],
}

impl Primitive {
    pub fn isotropic(mu: [f32; 3], scale: f32, opacity: f32, color: [f32; 3]) -> Self {
        Self {
            mu,
            scale: [scale; 3],
            opacity,
            color,
            rot: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Attributes flattened in `(μ, s, α, c, r)` order.
    pub fn attributes(&self) -> [f32; ATTRIBUTES] {
        let mut a = [0.0; ATTRIBUTES];
        a[0..3].copy_from_slice(&self.mu);
        a[3..6].copy_from_slice(&self.scale);
        a[6] = self.opacity;
        a[7..10].copy_from_slice(&self.color);
        a[10..14].copy_from_slice(&self.rot);
        a
    }
}

/// An explicit 3DGS scene with spherical-harmonic degree 0.
///
/// All values are stored activated: positive scales, opacity in (0, 1),
/// RGB color in [0, 1] and unit quaternions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    mu: Vec<[f32; 3]>,
    scale: Vec<[f32; 3]>,
    opacity: Vec<f32>,
    color: Vec<[f32; 3]>,
    rot: Vec<[f32; 4]>,
}

impl GaussianScene {
    pub fn new(
        mu: Vec<[f32; 3]>,
        scale: Vec<[f32; 3]>,
        opacity: Vec<f32>,
        color: Vec<[f32; 3]>,
        rot: Vec<[f32; 4]>,
    ) -> Result<Self> {
        let n = mu.len();
        if scale.len() != n || opacity.len() != n || color.len() != n || rot.len() != n {
            return Err(Error::Alignment(format!(
                "attribute lengths differ: mu {n}, scale {}, opacity {}, color {}, rot {}",
                scale.len(),
                opacity.len(),
                color.len(),
                rot.len()
            )));
        }
        let scene = Self::from_parts_unchecked(mu, scale, opacity, color, rot);
        scene.validate()?;
        Ok(scene)
    }

    pub(crate) fn from_parts_unchecked(
        mu: Vec<[f32; 3]>,
        scale: Vec<[f32; 3]>,
        opacity: Vec<f32>,
        color: Vec<[f32; 3]>,
        rot: Vec<[f32; 4]>,
    ) -> Self {
        Self {
            mu,
            scale,
            opacity,
            color,
            rot,
        }
    }

    pub fn from_primitives(prims: impl IntoIterator<Item = Primitive>) -> Result<Self> {
        let mut s = Self::default();
        for p in prims {
            s.mu.push(p.mu);
            s.scale.push(p.scale);
            s.opacity.push(p.opacity);
            s.color.push(p.color);
            s.rot.push(p.rot);
        }
        s.validate()?;
        Ok(s)
    }

    /// Check every invariant, reporting the first offending primitive.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.len() {
            let p = self.primitive(i);
            let bad = |detail: String| Err(Error::Data { index: i, detail });
            if !p.attributes().iter().all(|v| v.is_finite()) {
                return bad("non-finite attribute".into());
            }
            if p.scale.iter().any(|&s| s <= 0.0) {
                return bad(format!("non-positive scale {:?}", p.scale));
            }
            if !(p.opacity > 0.0 && p.opacity < 1.0) {
                return bad(format!("opacity {} outside (0, 1)", p.opacity));
            }
            if p.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad(format!("color {:?} outside [0, 1]", p.color));
            }
            let norm = quat_norm(&p.rot);
            if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE {
                return bad(format!("quaternion norm {norm}"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[[f32; 3]] {
        &self.mu
    }

    pub fn scale(&self) -> &[[f32; 3]] {
        &self.scale
    }

    pub fn opacity(&self) -> &[f32] {
        &self.opacity
    }

    pub fn color(&self) -> &[[f32; 3]] {
        &self.color
    }

    pub fn rot(&self) -> &[[f32; 4]] {
        &self.rot
    }

    pub fn primitive(&self, i: usize) -> Primitive {
        Primitive {
            mu: self.mu[i],
            scale: self.scale[i],
            opacity: self.opacity[i],
            color: self.color[i],
            rot: self.rot[i],
        }
    }

    pub fn primitives(&self) -> impl Iterator<Item = Primitive> + '_ {
        (0..self.len()).map(|i| self.primitive(i))
    }

    /// Keep the primitives at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut s = Self::default();
        for &i in indices {
            s.mu.push(self.mu[i]);
            s.scale.push(self.scale[i]);
            s.opacity.push(self.opacity[i]);
            s.color.push(self.color[i]);
            s.rot.push(self.rot[i]);
        }
        s
    }

    pub fn translated(&self, offset: [f32; 3]) -> Self {
        let mut s = self.clone();
        for m in &mut s.mu {
            for k in 0..3 {
                m[k] += offset[k];
            }
        }
        s
    }

    pub fn centroid(&self) -> [f32; 3] {
        let n = self.len().max(1) as f64;
        let mut acc = [0.0f64; 3];
        for m in &self.mu {
            for k in 0..3 {
                acc[k] += m[k] as f64;
            }
        }
        acc.map(|v| (v / n) as f32)
    }

    /// Indices sorted lexicographically by position, ties broken by index.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (self.mu[a], self.mu[b]);
            pa[0]
                .total_cmp(&pb[0])
                .then(pa[1].total_cmp(&pb[1]))
                .then(pa[2].total_cmp(&pb[2]))
                .then(a.cmp(&b))
        });
        order
    }

    /// Content digest of every attribute, used to bind variations to scenes.
    pub fn content_id(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.primitive(i).attributes() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

pub(crate) fn quat_norm(q: &[f32; 4]) -> f32 {
    q.iter().map(|v| v * v).sum::<f32>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_infeasible_values() {
        let good = Primitive::isotropic([0.0; 3], 0.1, 0.5, [0.2, 0.3, 0.4]);
        assert!(GaussianScene::from_primitives([good]).is_ok());
        let cases = [
            Primitive { opacity: 1.0, ..good },
            Primitive { scale: [0.1, 0.0, 0.1], ..good },
            Primitive { color: [1.2, 0.0, 0.0], ..good },
            Primitive { rot: [1.0, 0.1, 0.0, 0.0], ..good },
            Primitive { mu: [f32::NAN, 0.0, 0.0], ..good },
        ];
        for bad in cases {
            let err = GaussianScene::from_primitives([good, bad]).unwrap_err();
            assert!(matches!(err, Error::Data { index: 1, .. }), "{err}");
        }
    }

    #[test]
    fn content_id_tracks_content() {
        let a = GaussianScene::from_primitives([Primitive::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3])])
            .unwrap();
        let b = a.translated([0.0, 1e-3, 0.0]);
        assert_eq!(a.content_id(), a.clone().content_id());
        assert_ne!(a.content_id(), b.content_id());
    }

    #[test]
    fn canonical_order_is_lexicographic() {
        let p = |x, y| Primitive::isotropic([x, y, 0.0], 0.1, 0.5, [0.5; 3]);
        let s = GaussianScene::from_primitives([p(1.0, 0.0), p(0.0, 2.0), p(0.0, 1.0)]).unwrap();
        assert_eq!(s.canonical_order(), vec![2, 1, 0]);
    }
}
