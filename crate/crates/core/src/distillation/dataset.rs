use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distillation::oracle::{FlowMode, OracleRegistry};
use crate::distillation::toy::CameraOrbit;
use crate::error::{Error, Result};
use crate::gaussians::{load_ply, save_ply, GaussianScene};
use crate::predictor::draw_noise;
use crate::rasterizer::{Camera, Image, RenderSettings};

pub const MANIFEST_VERSION: u32 = 1;

/// Shape of the noise the oracle reads, fixed for a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseShape {
    pub n: usize,
    pub d_eps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub orbit: CameraOrbit,
    pub samples_per_pair: usize,
    pub seed: u64,
    pub noise: NoiseShape,
    #[serde(default)]
    pub flow: FlowMode,
    #[serde(default)]
    pub background: [f32; 3],
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            orbit: CameraOrbit::default(),
            samples_per_pair: 10,
            seed: 0,
            noise: NoiseShape { n: 32, d_eps: 16 },
            flow: FlowMode::Deterministic,
            background: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub scene: usize,
    pub scene_ref: String,
    pub camera: Camera,
    pub instruction: String,
    pub eps_seed: u64,
    pub target: Image,
    pub flow_mode: FlowMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub scene: String,
    pub instruction: String,
    pub oracle: String,
    pub generated: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub dir: String,
    pub scene: usize,
    pub instruction: String,
    pub oracle: String,
    pub eps_seed: u64,
    pub flow_mode: FlowMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub scene: String,
    pub instruction: String,
    pub eps_seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: CollectConfig,
    pub scenes: Vec<String>,
    pub pairs: Vec<PairRecord>,
    pub triplets: Vec<TripletRecord>,
    pub skipped: Vec<SkipRecord>,
}

/// Accept/reject hook over `(triplet, running index)`.
pub type TripletFilter<'a> = &'a dyn Fn(&Triplet, usize) -> bool;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn scene_file(name: &str) -> String {
    format!("scenes/{name}.ply")
}

/// Render oracle targets for every (scene, instruction) pair and store them
/// under `out`. Cameras and noise seeds come from one ChaCha8 stream seeded
/// with `config.seed`, so re-running reproduces the directory byte for byte.
pub fn collect_triplets(
    scenes: &[(String, GaussianScene)],
    instructions: &[String],
    registry: &OracleRegistry,
    config: &CollectConfig,
    filter: Option<TripletFilter>,
    out: impl AsRef<Path>,
) -> Result<Manifest> {
    let out = out.as_ref();
    if config.samples_per_pair == 0 {
        return Err(Error::Config("samples_per_pair must be ≥ 1".into()));
    }
    for instruction in instructions {
        registry.resolve(instruction)?;
    }
    fs::create_dir_all(out.join("scenes")).map_err(|e| Error::io(out, e))?;
    fs::create_dir_all(out.join("triplets")).map_err(|e| Error::io(out, e))?;
    // Targets are rendered from the stored copies, which is what training reads.
    let mut stored = Vec::with_capacity(scenes.len());
    for (name, scene) in scenes {
        let path = out.join(scene_file(name));
        save_ply(scene, &path)?;
        stored.push((name.clone(), load_ply(&path)?));
    }
    let settings = RenderSettings::with_background(config.background);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        scenes: scenes.iter().map(|(n, _)| n.clone()).collect(),
        pairs: Vec::new(),
        triplets: Vec::new(),
        skipped: Vec::new(),
    };
    let mut running = 0;
    for (si, (name, scene)) in stored.iter().enumerate() {
        for instruction in instructions {
            let oracle = registry.resolve(instruction)?.name.clone();
            let mut pair = PairRecord {
                scene: name.clone(),
                instruction: instruction.clone(),
                oracle: oracle.clone(),
                generated: 0,
                kept: 0,
            };
            for _ in 0..config.samples_per_pair {
                let camera = config.orbit.sample(&mut rng)?;
                let eps_seed: u64 = rng.gen();
                let extra_seed: u64 = rng.gen();
                let eps = draw_noise(eps_seed, config.noise.n, config.noise.d_eps);
                let target = match registry.edit(scene, &camera, instruction, &eps, config.flow, extra_seed, &settings) {
                    Ok(t) => t,
                    Err(e) => {
                        log::warn!("skipping {name} / {instruction:?} / seed {eps_seed}: {e}");
                        manifest.skipped.push(SkipRecord {
                            scene: name.clone(),
                            instruction: instruction.clone(),
                            eps_seed,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                let triplet = Triplet {
                    scene: si,
                    scene_ref: name.clone(),
                    camera,
                    instruction: instruction.clone(),
                    eps_seed,
                    target,
                    flow_mode: config.flow,
                };
                pair.generated += 1;
                let index = running;
                running += 1;
                if let Some(f) = filter {
                    if !f(&triplet, index) {
                        continue;
                    }
                }
                let dir = format!("triplets/{:06}", manifest.triplets.len());
                store_triplet(&out.join(&dir), &triplet)?;
                manifest.triplets.push(TripletRecord {
                    dir,
                    scene: si,
                    instruction: instruction.clone(),
                    oracle: oracle.clone(),
                    eps_seed,
                    flow_mode: config.flow,
                });
                pair.kept += 1;
            }
            manifest.pairs.push(pair);
        }
    }
    write(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct SeedRecord {
    scene: String,
    instruction: String,
    eps_seed: u64,
    flow_mode: FlowMode,
}

fn store_triplet(dir: &Path, t: &Triplet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    t.camera.save_json(dir.join("camera.json"))?;
    t.target.save_png(dir.join("target.png"))?;
    t.target.save_raw(dir.join("target.f32"))?;
    let seed = SeedRecord {
        scene: t.scene_ref.clone(),
        instruction: t.instruction.clone(),
        eps_seed: t.eps_seed,
        flow_mode: t.flow_mode,
    };
    write(&dir.join("seed.json"), &serde_json::to_vec_pretty(&seed)?)
}

/// A collected dataset loaded back into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub scenes: Vec<GaussianScene>,
    pub triplets: Vec<Triplet>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
        }
        let scenes = manifest
            .scenes
            .iter()
            .map(|n| load_ply(root.join(scene_file(n))))
            .collect::<Result<Vec<_>>>()?;
        let triplets = manifest
            .triplets
            .iter()
            .map(|r| {
                let dir = root.join(&r.dir);
                let camera = Camera::load_json(dir.join("camera.json"))?;
                let target = Image::load_raw(dir.join("target.f32"), camera.width, camera.height)?;
                let scene_ref = manifest
                    .scenes
                    .get(r.scene)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("{}: scene index {} out of range", r.dir, r.scene)))?;
                Ok(Triplet {
                    scene: r.scene,
                    scene_ref,
                    camera,
                    instruction: r.instruction.clone(),
                    eps_seed: r.eps_seed,
                    target,
                    flow_mode: r.flow_mode,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root,
            manifest,
            scenes,
            triplets,
        })
    }

    pub fn from_parts(scenes: Vec<GaussianScene>, triplets: Vec<Triplet>, manifest: Manifest) -> Self {
        Self {
            root: PathBuf::new(),
            manifest,
            scenes,
            triplets,
        }
    }

    pub fn noise_shape(&self) -> NoiseShape {
        self.manifest.config.noise
    }
}
