use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distillation::dataset::{CollectConfig, Dataset, Manifest, NoiseShape, Triplet, MANIFEST_VERSION};
use crate::distillation::oracle::{FlowMode, OracleRegistry};
use crate::distillation::train::{din_loss, din_loss_and_gradients};
use crate::error::{Error, Result};
use crate::gaussians::{overlay, overlay_traced, GaussianScene, Primitive, Variation, ATTRIBUTES};
use crate::numerics::{GradCheck, GradCheckReport, Tensor};
use crate::predictor::{draw_noise, DecodeMode, Predictor, PredictorConfig};
use crate::rasterizer::{render_backward, render_with, threshold_margin, Camera, RenderSettings};
use crate::tokenizer::TokenizerConfig;

/// Per-parameter comparison of the reverse-mode L_din gradient with central
/// differences through the inference path, on up to `coords` randomly
/// chosen entries of each parameter. The relative-error floor is taken
/// against the largest gradient over all parameters, so parameters whose
/// gradient is zero by symmetry are judged on absolute error.
#[allow(clippy::too_many_arguments)]
pub fn check_din_gradients(
    predictor: &Predictor,
    dataset: &Dataset,
    indices: &[usize],
    mode: DecodeMode,
    settings: &RenderSettings,
    check: &GradCheck,
    coords: usize,
    seed: u64,
) -> Result<Vec<(String, GradCheckReport)>> {
    let (_, grads) = din_loss_and_gradients(predictor, dataset, indices, mode, settings)?;
    let global = grads.iter().map(Tensor::max_abs).fold(0f32, f32::max) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = predictor.clone();
    let mut out = Vec::new();
    for (pi, name) in predictor.store.names().iter().enumerate() {
        let base = &predictor.store.tensors()[pi];
        let mut picked: Vec<usize> = (0..base.numel()).collect();
        picked.shuffle(&mut rng);
        picked.truncate(coords);
        picked.sort_unstable();
        let point = Tensor::new([picked.len()], picked.iter().map(|&i| base.data()[i]).collect())?;
        let analytic = Tensor::new([picked.len()], picked.iter().map(|&i| grads[pi].data()[i]).collect())?;
        let report = check.run_scaled(
            |x| {
                let t = &mut probe.store.tensors_mut()[pi];
                for (k, &i) in picked.iter().enumerate() {
                    t.data_mut()[i] = x.data()[k];
                }
                let loss = din_loss(&probe, dataset, indices, mode, settings);
                let t = &mut probe.store.tensors_mut()[pi];
                for &i in &picked {
                    t.data_mut()[i] = base.data()[i];
                }
                loss
            },
            &analytic,
            &point,
            global,
        )?;
        out.push((name.clone(), report));
    }
    Ok(out)
}

/// A 1-block predictor with random decoder heads and a small dataset whose
/// renders stay clear of the opacity thresholds and depth ties, so L_din is
/// smooth in every weight.
#[derive(Clone, Debug)]
pub struct DinCheckFixture {
    pub predictor: Predictor,
    pub dataset: Dataset,
    pub settings: RenderSettings,
}

fn snap(v: f32) -> f32 {
    (v * 64.0).round() / 64.0
}

pub fn din_check_fixture(seed: u64) -> Result<DinCheckFixture> {
    let config = PredictorConfig {
        tokenizer: TokenizerConfig { n: 4, k: 2, d_model: 16, seed, ..TokenizerConfig::default() },
        d_text: 8,
        d_eps: 4,
        field_blocks: 1,
        field_heads: 2,
        decoder_blocks: 1,
        decoder_width: 8,
        decoder_heads: 1,
        init_seed: seed,
        ..PredictorConfig::default()
    };
    let mut predictor = Predictor::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for head in [predictor.net.f1.head, predictor.net.f2.head, predictor.net.direct.head] {
        let shape = predictor.store.get(head.w).shape().to_vec();
        *predictor.store.get_mut(head.w) = Tensor::randn(shape, 0.02, &mut rng);
        *predictor.store.get_mut(head.b) = Tensor::randn([head.outputs], 0.02, &mut rng);
    }
    let settings = RenderSettings::with_background([0.2, 0.4, 0.1]);
    let camera = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 12, 12)?;
    let prims = (0..4).map(|k| Primitive {
        mu: [
            snap(rng.gen_range(-0.3..0.3)),
            snap(rng.gen_range(-0.3..0.3)),
            snap(-0.9 + 0.6 * k as f32 + rng.gen_range(-0.1..0.1)),
        ],
        scale: std::array::from_fn(|_| snap(rng.gen_range(1.3..2.0))),
        opacity: snap(rng.gen_range(0.3..0.7)),
        color: std::array::from_fn(|_| snap(rng.gen_range(0.1..0.9))),
        rot: std::array::from_fn(|_| if rng.gen_bool(0.5) { 0.5 } else { -0.5 }),
    });
    let scene = GaussianScene::from_primitives(prims)?;
    let registry = OracleRegistry::builtin();
    let noise = NoiseShape { n: 4, d_eps: 4 };
    let mut triplets = Vec::new();
    for (i, instruction) in ["make it golden", "lift the top"].iter().enumerate() {
        let eps_seed = seed * 10 + i as u64;
        let eps = draw_noise(eps_seed, noise.n, noise.d_eps);
        let target = registry.edit(&scene, &camera, instruction, &eps, FlowMode::Deterministic, 0, &settings)?;
        for mode in [DecodeMode::Iterative, DecodeMode::Direct] {
            let v = predictor.predict(&scene, instruction, eps_seed, mode)?;
            let edited = overlay(&scene, &v)?;
            let margin = threshold_margin(&edited, &camera, &settings);
            if margin < 1.1 {
                return Err(Error::Config(format!("gradient-check fixture {seed} is too close to a threshold ({margin:.3})")));
            }
        }
        triplets.push(Triplet {
            scene: 0,
            scene_ref: "fixture".into(),
            camera: camera.clone(),
            instruction: instruction.to_string(),
            eps_seed,
            target,
            flow_mode: FlowMode::Deterministic,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: CollectConfig { noise, ..CollectConfig::default() },
        scenes: vec!["fixture".into()],
        pairs: Vec::new(),
        triplets: Vec::new(),
        skipped: Vec::new(),
    };
    Ok(DinCheckFixture {
        predictor,
        dataset: Dataset::from_parts(vec![scene], triplets, manifest),
        settings,
    })
}

/// Finite-difference step for the rasterizer check; attributes sit on a
/// 2⁻⁸ grid so `x ± step` is exact in f32.
pub const RENDER_CHECK_STEP: f64 = 1.0 / 1024.0;

fn snap256(v: f32) -> f32 {
    (v * 256.0).round() / 256.0
}

/// Gradient of a random linear image functional with respect to every
/// attribute of three large overlapping primitives, against central
/// differences of the f64 render.
pub fn check_render_gradients(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 16, 16)?;
    let settings = RenderSettings::with_background([0.2, 0.4, 0.1]);
    // Redraw until every pixel sits well inside every footprint.
    let mut scene = None;
    for _ in 0..64 {
        let prims: Vec<Primitive> = (0..3)
            .map(|k| Primitive {
                mu: [
                    snap256(rng.gen_range(-0.3..0.3)),
                    snap256(rng.gen_range(-0.3..0.3)),
                    snap256(-0.6 + 0.6 * k as f32 + rng.gen_range(-0.1..0.1)),
                ],
                scale: std::array::from_fn(|_| snap256(rng.gen_range(1.3..2.0))),
                opacity: snap256(rng.gen_range(0.3..0.9)),
                color: std::array::from_fn(|_| snap256(rng.gen_range(0.1..0.9))),
                rot: std::array::from_fn(|_| if rng.gen_bool(0.5) { 0.5 } else { -0.5 }),
            })
            .collect();
        let candidate = GaussianScene::from_primitives(prims)?;
        if threshold_margin(&candidate, &camera, &settings) >= 1.5 {
            scene = Some(candidate);
            break;
        }
    }
    let scene = scene.ok_or_else(|| Error::Config(format!("no render check fixture clears the threshold for seed {seed}")))?;
    let pixels = (camera.width * camera.height * 3) as usize;
    let weights: Vec<f32> = (0..pixels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let id = scene.content_id();
    let loss = |delta: &Tensor| -> Result<f64> {
        let v = Variation::from_rows(id, delta.data())?;
        let out = render_with(&overlay(&scene, &v)?, &camera, &settings);
        Ok(out.pixels_f64().iter().zip(&weights).map(|(&p, &w)| p * w as f64).sum())
    };
    let (edited, trace) = overlay_traced(&scene, &Variation::zeros_for(&scene))?;
    let out = render_with(&edited, &camera, &settings);
    let grads = trace.backward(&render_backward(&out, &weights)?);
    let analytic = Tensor::new([scene.len() * ATTRIBUTES], grads)?;
    GradCheck::with_step(RENDER_CHECK_STEP).run(loss, &analytic, &Tensor::zeros([scene.len() * ATTRIBUTES]))
}

/// One named gradient check and its worst relative error.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckLine {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Rasterizer and end-to-end L_din checks over `seeds`, both decode modes.
pub fn run_gradient_checks(seeds: &[u64], tolerance: f64) -> Result<Vec<GradCheckLine>> {
    let mut lines = Vec::new();
    for &seed in seeds {
        let r = check_render_gradients(seed)?;
        lines.push(GradCheckLine {
            name: format!("render/seed{seed}"),
            max_relative_error: r.max_relative_error,
            passed: r.passes(tolerance),
        });
    }
    let check = GradCheck { step: 3e-3, relative_floor: 1e-2 };
    for &seed in seeds {
        let fx = din_check_fixture(seed)?;
        let all: Vec<usize> = (0..fx.dataset.triplets.len()).collect();
        for mode in [DecodeMode::Iterative, DecodeMode::Direct] {
            let reports = check_din_gradients(&fx.predictor, &fx.dataset, &all, mode, &fx.settings, &check, 3, seed)?;
            let worst = reports.iter().map(|(_, r)| r.max_relative_error).fold(0.0, f64::max);
            lines.push(GradCheckLine {
                name: format!("din/{}/seed{seed}", if mode == DecodeMode::Iterative { "iterative" } else { "direct" }),
                max_relative_error: worst,
                passed: worst <= tolerance,
            });
        }
    }
    Ok(lines)
}
