//! Content-addressed, append-only artifact store.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use varfield::gaussians::{read_ply, variation_from_bytes, variation_to_bytes, write_ply, GaussianScene, Variation};
use varfield::predictor::{read_checkpoint, write_checkpoint, Predictor};

use crate::error::{ServiceError, ServiceResult};

/// Environment variable naming the store root.
pub const STORE_ENV: &str = "VARFIELD_STORE";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Scene,
    Variation,
    Weights,
    Dataset,
    Job,
}

impl Kind {
    pub fn dir(self) -> &'static str {
        match self {
            Kind::Scene => "scenes",
            Kind::Variation => "variations",
            Kind::Weights => "weights",
            Kind::Dataset => "datasets",
            Kind::Job => "jobs",
        }
    }

    fn ext(self) -> &'static str {
        match self {
            Kind::Scene => "ply",
            Kind::Variation => "vfv",
            Kind::Weights => "ckpt",
            Kind::Dataset => "",
            Kind::Job => "json",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Kind::Scene => "scene",
            Kind::Variation => "variation",
            Kind::Weights => "weights",
            Kind::Dataset => "dataset",
            Kind::Job => "job",
        }
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Where a variation came from; kept next to the blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationMeta {
    /// Store id of the scene the variation is aligned with.
    pub scene: String,
    pub origin: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> ServiceResult<Self> {
        let root = root.into();
        for k in [Kind::Scene, Kind::Variation, Kind::Weights, Kind::Dataset, Kind::Job] {
            let d = root.join(k.dir());
            fs::create_dir_all(&d).map_err(|e| ServiceError::io(&d, e))?;
        }
        Ok(Self { root })
    }

    /// Root from `VARFIELD_STORE`, falling back to `./varfield-store`.
    pub fn from_env() -> ServiceResult<Self> {
        Self::open(std::env::var_os(STORE_ENV).map(PathBuf::from).unwrap_or_else(|| "varfield-store".into()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: Kind, id: &str) -> PathBuf {
        let dir = self.root.join(kind.dir());
        if kind.ext().is_empty() {
            dir.join(id)
        } else {
            dir.join(format!("{id}.{}", kind.ext()))
        }
    }

    fn existing(&self, kind: Kind, id: &str) -> ServiceResult<PathBuf> {
        let p = self.path(kind, id);
        if valid_id(id) && p.exists() {
            Ok(p)
        } else {
            Err(ServiceError::NotFound(format!("{} {id}", kind.label())))
        }
    }

    pub fn contains(&self, kind: Kind, id: &str) -> bool {
        valid_id(id) && self.path(kind, id).exists()
    }

    /// Write `bytes` under their content id unless already present. The
    /// blob is written to a temporary name first and renamed into place.
    pub fn put_bytes(&self, kind: Kind, bytes: &[u8]) -> ServiceResult<String> {
        let id = content_id(bytes);
        let path = self.path(kind, &id);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(id)
    }

    pub fn get_bytes(&self, kind: Kind, id: &str) -> ServiceResult<Vec<u8>> {
        let p = self.existing(kind, id)?;
        fs::read(&p).map_err(|e| ServiceError::io(&p, e))
    }

    pub fn put_scene(&self, scene: &GaussianScene) -> ServiceResult<String> {
        self.put_bytes(Kind::Scene, &canonical_ply(scene)?)
    }

    /// Validate uploaded PLY bytes and store the canonical re-encoding.
    pub fn put_scene_bytes(&self, bytes: &[u8]) -> ServiceResult<String> {
        let scene = read_ply(bytes)?;
        self.put_scene(&scene)
    }

    pub fn get_scene(&self, id: &str) -> ServiceResult<GaussianScene> {
        Ok(read_ply(self.get_bytes(Kind::Scene, id)?.as_slice())?)
    }

    pub fn put_variation(&self, v: &Variation, meta: &VariationMeta) -> ServiceResult<String> {
        let id = self.put_bytes(Kind::Variation, &variation_to_bytes(v))?;
        let mp = self.root.join(Kind::Variation.dir()).join(format!("{id}.json"));
        if !mp.exists() {
            write_atomic(&mp, &serde_json::to_vec_pretty(meta)?)?;
        }
        Ok(id)
    }

    pub fn get_variation(&self, id: &str) -> ServiceResult<Variation> {
        Ok(variation_from_bytes(&self.get_bytes(Kind::Variation, id)?)?)
    }

    pub fn variation_meta(&self, id: &str) -> ServiceResult<Option<VariationMeta>> {
        self.existing(Kind::Variation, id)?;
        let mp = self.root.join(Kind::Variation.dir()).join(format!("{id}.json"));
        match fs::read(&mp) {
            Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ServiceError::io(&mp, e)),
        }
    }

    pub fn put_weights(&self, p: &Predictor) -> ServiceResult<String> {
        let mut bytes = Vec::new();
        write_checkpoint(p, &mut bytes)?;
        self.put_bytes(Kind::Weights, &bytes)
    }

    pub fn put_weights_bytes(&self, bytes: &[u8]) -> ServiceResult<String> {
        read_checkpoint(bytes)?;
        self.put_bytes(Kind::Weights, bytes)
    }

    pub fn get_weights(&self, id: &str) -> ServiceResult<Predictor> {
        Ok(read_checkpoint(self.get_bytes(Kind::Weights, id)?.as_slice())?)
    }

    pub fn list(&self, kind: Kind) -> ServiceResult<Vec<String>> {
        let dir = self.root.join(kind.dir());
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| ServiceError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                let id = if kind.ext().is_empty() {
                    name
                } else {
                    name.strip_suffix(&format!(".{}", kind.ext()))?.to_string()
                };
                valid_id(&id).then_some(id)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Directory for a dataset id, which must exist.
    pub fn dataset_dir(&self, id: &str) -> ServiceResult<PathBuf> {
        self.existing(Kind::Dataset, id)
    }

    /// Move a finished dataset directory into place under the id of its
    /// manifest bytes.
    pub fn adopt_dataset(&self, staging: &Path) -> ServiceResult<String> {
        let mp = staging.join("manifest.json");
        let bytes = fs::read(&mp).map_err(|e| ServiceError::io(&mp, e))?;
        let id = content_id(&bytes);
        let dest = self.path(Kind::Dataset, &id);
        if dest.exists() {
            fs::remove_dir_all(staging).map_err(|e| ServiceError::io(staging, e))?;
        } else {
            fs::rename(staging, &dest).map_err(|e| ServiceError::io(&dest, e))?;
        }
        Ok(id)
    }

    pub fn staging_dir(&self, name: &str) -> ServiceResult<PathBuf> {
        let d = self.root.join(Kind::Dataset.dir()).join(format!(".staging-{name}"));
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| ServiceError::io(&d, e))?;
        }
        fs::create_dir_all(&d).map_err(|e| ServiceError::io(&d, e))?;
        Ok(d)
    }
}

/// PLY bytes that decode and re-encode to themselves. The log/logit/SH
/// encoding is not exactly invertible in f32, so a scene is re-encoded
/// until the bytes settle; applying a zero variation to a stored scene
/// then reproduces its id.
pub fn canonical_ply(scene: &GaussianScene) -> ServiceResult<Vec<u8>> {
    let mut bytes = Vec::new();
    write_ply(scene, &mut bytes)?;
    for _ in 0..8 {
        let mut next = Vec::new();
        write_ply(&read_ply(bytes.as_slice())?, &mut next)?;
        if next == bytes {
            break;
        }
        bytes = next;
    }
    Ok(bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> ServiceResult<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| ServiceError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}
