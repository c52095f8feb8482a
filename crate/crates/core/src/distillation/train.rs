use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distillation::dataset::{Dataset, Triplet};
use crate::distillation::oracle::{apply_action, FlowMode, OracleRegistry};
use crate::distillation::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::gaussians::{overlay, overlay_traced, GaussianScene, Variation, ATTRIBUTES};
use crate::numerics::{AdamW, AdamWConfig, Bound, Graph, Tensor, Var};
use crate::predictor::{attribute_matrix, draw_noise, DecodeMode, Predictor, MU_WIDTH};
use crate::rasterizer::{render_backward, render_with, Camera, Image, RenderOutput, RenderSettings};
use crate::tokenizer::TokenBatch;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Din,
    Sds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdsConfig {
    pub schedule: NoiseSchedule,
    /// Timestep fraction of `T` used in the first epoch.
    pub t_start: f64,
    /// Timestep fraction of `T` used in the last epoch.
    pub t_end: f64,
    /// Constant `w(t)`.
    pub weight: f32,
    /// Area-downsampling factor from image to latent.
    pub latent_factor: u32,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            t_start: 0.8,
            t_end: 0.1,
            weight: 1.0,
            latent_factor: 4,
        }
    }
}

impl SdsConfig {
    /// Linearly decaying timestep for `epoch` of `epochs`.
    pub fn timestep(&self, epoch: usize, epochs: usize) -> usize {
        let f = if epochs <= 1 {
            self.t_start
        } else {
            self.t_start + (self.t_end - self.t_start) * epoch as f64 / (epochs - 1) as f64
        };
        let steps = self.schedule.steps();
        ((f * steps as f64).round() as usize).clamp(1, steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adamw: AdamWConfig,
    /// Learning rate halves every this many epochs; 0 disables.
    pub lr_halving_epochs: usize,
    pub loss: LossKind,
    pub mode: DecodeMode,
    /// Shuffling and SDS noise.
    pub seed: u64,
    pub background: [f32; 3],
    #[serde(default)]
    pub sds: SdsConfig,
    /// Accepted for manifest compatibility; analytic oracles have no guidance.
    #[serde(default)]
    pub guidance_scale: f32,
    #[serde(default)]
    pub condition_scale: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            epochs: 10,
            adamw: AdamWConfig::default(),
            lr_halving_epochs: 100,
            loss: LossKind::Din,
            mode: DecodeMode::Iterative,
            seed: 0,
            background: [0.0; 3],
            sds: SdsConfig::default(),
            guidance_scale: 6.5,
            condition_scale: 3.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.adamw.lr >= 0.0) || !(self.adamw.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        let halvings = if self.lr_halving_epochs == 0 { 0 } else { epoch / self.lr_halving_epochs };
        self.adamw.lr * 0.5f32.powi(halvings as i32)
    }

    fn settings(&self) -> RenderSettings {
        RenderSettings::with_background(self.background)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, before each sample's update.
    pub loss: f64,
    pub lr: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Per-batch losses in training order.
    pub batches: Vec<f64>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.lr);
        }
        s
    }
}

/// Tokens, attribute rows and content id per scene; fixed during training.
struct SceneCache {
    tokens: TokenBatch,
    attrs: Tensor,
    id: u64,
}

fn cache_scenes(predictor: &Predictor, scenes: &[GaussianScene]) -> Result<Vec<SceneCache>> {
    scenes
        .iter()
        .map(|s| {
            Ok(SceneCache {
                tokens: predictor.tokenize(s)?,
                attrs: attribute_matrix(s),
                id: s.content_id(),
            })
        })
        .collect()
}

/// One sample's forward pass up to the rendered image, with what the
/// backward pass needs.
struct SampleForward {
    delta: crate::predictor::DeltaVars,
    out: RenderOutput,
    trace: crate::gaussians::OverlayTrace,
}

#[allow(clippy::too_many_arguments)]
fn forward_sample(
    predictor: &Predictor,
    g: &mut Graph,
    p: &Bound,
    cache: &SceneCache,
    scene: &GaussianScene,
    camera: &Camera,
    instruction: &str,
    eps_seed: u64,
    mode: DecodeMode,
    settings: &RenderSettings,
) -> Result<SampleForward> {
    let rows = predictor.config.vocabulary.encode(instruction)?;
    let eps = predictor.noise(eps_seed);
    let field = predictor.field_graph(g, p, &cache.tokens, &eps, &rows)?;
    let attrs = g.constant(cache.attrs.clone());
    let delta = predictor.decode_graph(g, p, attrs, field, mode)?;
    let n = scene.len();
    let (mu, rest) = (g.value(delta.mu), g.value(delta.rest));
    let mut data = Vec::with_capacity(n * ATTRIBUTES);
    for i in 0..n {
        data.extend_from_slice(mu.row(i));
        data.extend_from_slice(rest.row(i));
    }
    let v = Variation::from_rows(cache.id, &data)?;
    let (edited, trace) = overlay_traced(scene, &v)?;
    let out = render_with(&edited, camera, settings);
    Ok(SampleForward { delta, out, trace })
}

/// Seeds for the decoder outputs from an image-space gradient.
fn seeds_from_image_grad(f: &SampleForward, image_grad: &[f32]) -> Result<Vec<(Var, Tensor)>> {
    let sg = render_backward(&f.out, image_grad)?;
    let rows = f.trace.backward(&sg);
    let n = rows.len() / ATTRIBUTES;
    let mut gmu = Vec::with_capacity(n * MU_WIDTH);
    let mut grest = Vec::with_capacity(n * (ATTRIBUTES - MU_WIDTH));
    for r in rows.chunks_exact(ATTRIBUTES) {
        gmu.extend_from_slice(&r[..MU_WIDTH]);
        grest.extend_from_slice(&r[MU_WIDTH..]);
    }
    Ok(vec![
        (f.delta.mu, Tensor::new([n, MU_WIDTH], gmu)?),
        (f.delta.rest, Tensor::new([n, ATTRIBUTES - MU_WIDTH], grest)?),
    ])
}

fn mse_and_grad(x: &[f64], target: &Image, scale: f64) -> Result<(f64, Vec<f32>)> {
    let t = target.data();
    if t.len() != x.len() {
        return Err(Error::dim("din_loss", format!("render has {} values, target {}", x.len(), t.len())));
    }
    let inv = 1.0 / x.len() as f64;
    let mut loss = 0.0;
    let grad = x
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let d = a - b as f64;
            loss += d * d;
            (2.0 * d * inv * scale) as f32
        })
        .collect();
    Ok((loss * inv, grad))
}

fn check_noise(predictor: &Predictor, dataset: &Dataset) -> Result<()> {
    let shape = dataset.noise_shape();
    if shape.n != predictor.config.tokenizer.n || shape.d_eps != predictor.config.d_eps {
        return Err(Error::Config(format!(
            "dataset noise is [{}, {}], predictor expects [{}, {}]",
            shape.n, shape.d_eps, predictor.config.tokenizer.n, predictor.config.d_eps
        )));
    }
    Ok(())
}

/// Mean L_din over `indices` and its gradient for every parameter.
pub fn din_loss_and_gradients(
    predictor: &Predictor,
    dataset: &Dataset,
    indices: &[usize],
    mode: DecodeMode,
    settings: &RenderSettings,
) -> Result<(f64, Vec<Tensor>)> {
    let caches = cache_scenes(predictor, &dataset.scenes)?;
    din_batch(predictor, dataset, &caches, indices, mode, settings)
}

fn din_batch(
    predictor: &Predictor,
    dataset: &Dataset,
    caches: &[SceneCache],
    indices: &[usize],
    mode: DecodeMode,
    settings: &RenderSettings,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = predictor.store.bind(&mut g, true);
    let scale = 1.0 / indices.len() as f64;
    let mut seeds = Vec::new();
    let mut total = 0.0;
    for &i in indices {
        let t = &dataset.triplets[i];
        let f = forward_sample(
            predictor,
            &mut g,
            &p,
            &caches[t.scene],
            &dataset.scenes[t.scene],
            &t.camera,
            &t.instruction,
            t.eps_seed,
            mode,
            settings,
        )?;
        let (loss, grad) = mse_and_grad(f.out.pixels_f64(), &t.target, scale)?;
        total += loss * scale;
        seeds.extend(seeds_from_image_grad(&f, &grad)?);
    }
    let grads = g.backward_with(seeds)?;
    Ok((total, predictor.store.collect_grads(&p, &grads)))
}

/// Render of the predicted edit for one triplet.
pub fn predicted_render(predictor: &Predictor, scene: &GaussianScene, triplet: &Triplet, mode: DecodeMode, settings: &RenderSettings) -> Result<Image> {
    let v = predictor.predict(scene, &triplet.instruction, triplet.eps_seed, mode)?;
    Ok(render_with(&overlay(scene, &v)?, &triplet.camera, settings).image)
}

/// Mean L_din through the inference path (no graph).
pub fn din_loss(predictor: &Predictor, dataset: &Dataset, indices: &[usize], mode: DecodeMode, settings: &RenderSettings) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        let t = &dataset.triplets[i];
        let scene = &dataset.scenes[t.scene];
        let v = predictor.predict(scene, &t.instruction, t.eps_seed, mode)?;
        let out = render_with(&overlay(scene, &v)?, &t.camera, settings);
        total += mse_and_grad(out.pixels_f64(), &t.target, 0.0)?.0;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Callback after every epoch; returning `false` stops training.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord, &Predictor) -> bool;

/// Minimise the mean squared error between renders of the predicted edits
/// and the oracle targets.
pub fn train_din(predictor: &mut Predictor, dataset: &Dataset, config: &TrainConfig, mut hook: Option<EpochHook>) -> Result<TrainReport> {
    config.validate()?;
    if dataset.triplets.is_empty() {
        return Err(Error::Input("dataset has no triplets".into()));
    }
    check_noise(predictor, dataset)?;
    let settings = config.settings();
    let caches = cache_scenes(predictor, &dataset.scenes)?;
    let names = predictor.store.names().to_vec();
    let mut opt = AdamW::new(config.adamw, predictor.store.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.triplets.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        opt.set_lr(lr);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = din_batch(predictor, dataset, &caches, batch, config.mode, &settings)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("epoch {epoch} batch {b} (triplets {batch:?})")));
            }
            opt.step(predictor.store.tensors_mut(), &grads, &names)?;
            sum += loss * batch.len() as f64;
            report.batches.push(loss);
        }
        let record = EpochRecord {
            epoch,
            loss: sum / dataset.triplets.len() as f64,
            lr,
        };
        log::info!("epoch {epoch}: loss {:.6} lr {lr}", record.loss);
        report.epochs.push(record.clone());
        if let Some(h) = hook.as_mut() {
            if !h(&record, predictor) {
                break;
            }
        }
    }
    Ok(report)
}

/// One SDS sample: a scene, view, instruction and predictor noise seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsSample {
    pub scene: usize,
    pub camera: Camera,
    pub instruction: String,
    pub eps_seed: u64,
}

/// Teacher noise prediction `ε_φ(z_t; t, y, R(X^s))` for sample `index`.
pub trait SdsTeacher {
    fn predict_noise(&self, index: usize, z_t: &[f32], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f32>>;
}

/// `ε_φ = (z_t − √ᾱ_t·target)/√(1 − ᾱ_t)` against fixed latent targets.
#[derive(Clone, Debug)]
pub struct ExactNoiseTeacher {
    pub targets: Vec<Image>,
}

impl ExactNoiseTeacher {
    /// Targets from the oracle editors, downsampled to latent resolution.
    pub fn from_oracle(
        registry: &OracleRegistry,
        scenes: &[GaussianScene],
        samples: &[SdsSample],
        noise: (usize, usize),
        factor: u32,
        settings: &RenderSettings,
    ) -> Result<Self> {
        let targets = samples
            .iter()
            .map(|s| {
                let eps = draw_noise(s.eps_seed, noise.0, noise.1);
                let editor = registry.resolve(&s.instruction)?;
                let theta = OracleRegistry::theta(&eps, FlowMode::Deterministic, 0);
                apply_action(&editor.action, &scenes[s.scene], &s.camera, theta, settings)?.downsample(factor)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { targets })
    }
}

impl SdsTeacher for ExactNoiseTeacher {
    fn predict_noise(&self, index: usize, z_t: &[f32], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f32>> {
        let target = self.targets[index].data();
        if target.len() != z_t.len() {
            return Err(Error::dim("exact_noise_teacher", "latent size mismatch"));
        }
        let a = schedule.alpha_bar(t);
        let (sa, s1a) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(z_t.iter().zip(target).map(|(&z, &x)| ((z as f64 - sa * x as f64) / s1a) as f32).collect())
    }
}

/// Per-epoch mean squared latent distance between renders and the teacher
/// targets, recorded alongside the SDS report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SdsReport {
    pub train: TrainReport,
    pub timesteps: Vec<usize>,
}

/// Score distillation: inject `w(t)(ε_φ − ε)` at the downsampled render.
/// The teacher is treated as constant. The recorded epoch loss is the mean
/// squared latent distance `‖z − target‖²/len` when the teacher exposes
/// targets, otherwise the mean squared noise residual.
pub fn train_sds(
    predictor: &mut Predictor,
    scenes: &[GaussianScene],
    samples: &[SdsSample],
    teacher: &dyn SdsTeacher,
    latent_targets: Option<&[Image]>,
    config: &TrainConfig,
    mut hook: Option<EpochHook>,
) -> Result<SdsReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Input("no SDS samples".into()));
    }
    let settings = config.settings();
    let sds = &config.sds;
    let factor = sds.latent_factor;
    let caches = cache_scenes(predictor, scenes)?;
    let names = predictor.store.names().to_vec();
    let mut opt = AdamW::new(config.adamw, predictor.store.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = SdsReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        opt.set_lr(lr);
        let t = sds.timestep(epoch, config.epochs);
        let a = sds.schedule.alpha_bar(t);
        let (sa, s1a) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut g = Graph::new();
            let p = predictor.store.bind(&mut g, true);
            let mut seeds = Vec::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &samples[i];
                let f = forward_sample(
                    predictor,
                    &mut g,
                    &p,
                    &caches[s.scene],
                    &scenes[s.scene],
                    &s.camera,
                    &s.instruction,
                    s.eps_seed,
                    config.mode,
                    &settings,
                )?;
                let z = f.out.image.downsample(factor)?;
                let noise = Tensor::randn([z.data().len()], 1.0, &mut rng);
                let z_t: Vec<f32> = z.data().iter().zip(noise.data()).map(|(&v, &e)| sa * v + s1a * e).collect();
                let eps_phi = teacher.predict_noise(i, &z_t, t, &sds.schedule)?;
                let grad_z: Vec<f32> = eps_phi
                    .iter()
                    .zip(noise.data())
                    .map(|(&p, &e)| sds.weight * (p - e) / batch.len() as f32)
                    .collect();
                batch_loss += match latent_targets {
                    Some(tg) => z.mse(&tg[i])?,
                    None => grad_z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / grad_z.len() as f64,
                };
                // Area downsampling spreads each latent gradient evenly.
                let (w, h) = (f.out.image.width(), f.out.image.height());
                let lw = w / factor;
                let inv = 1.0 / (factor * factor) as f32;
                let mut image_grad = vec![0f32; (w * h * 3) as usize];
                for y in 0..h {
                    for x in 0..w {
                        let l = (((y / factor) * lw + x / factor) * 3) as usize;
                        let o = ((y * w + x) * 3) as usize;
                        for c in 0..3 {
                            image_grad[o + c] = grad_z[l + c] * inv;
                        }
                    }
                }
                seeds.extend(seeds_from_image_grad(&f, &image_grad)?);
            }
            let grads = g.backward_with(seeds)?;
            let grads = predictor.store.collect_grads(&p, &grads);
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("epoch {epoch} batch {b} (samples {batch:?})")));
            }
            opt.step(predictor.store.tensors_mut(), &grads, &names)?;
            sum += batch_loss;
            report.train.batches.push(batch_loss / batch.len() as f64);
        }
        let record = EpochRecord {
            epoch,
            loss: sum / samples.len() as f64,
            lr,
        };
        report.train.epochs.push(record.clone());
        report.timesteps.push(t);
        if let Some(h) = hook.as_mut() {
            if !h(&record, predictor) {
                break;
            }
        }
    }
    Ok(report)
}

/// Mean MSE and mean PSNR of predicted renders against triplet targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub psnr: f64,
}

pub fn evaluate(predictor: &Predictor, dataset: &Dataset, indices: &[usize], mode: DecodeMode, background: [f32; 3]) -> Result<EvalReport> {
    let settings = RenderSettings::with_background(background);
    let (mut mse, mut psnr) = (0.0, 0.0);
    for &i in indices {
        let t = &dataset.triplets[i];
        let img = predicted_render(predictor, &dataset.scenes[t.scene], t, mode, &settings)?;
        let m = img.mse(&t.target)?;
        mse += m;
        psnr += crate::metrics::psnr_from_mse(m);
    }
    let n = indices.len().max(1) as f64;
    Ok(EvalReport { mse: mse / n, psnr: psnr / n })
}

