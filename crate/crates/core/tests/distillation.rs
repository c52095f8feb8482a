mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::rng;
use rand::Rng;
use varfield::distillation::*;
use varfield::gaussians::{GaussianScene, Primitive};
use varfield::numerics::{GradCheck, Tensor};
use varfield::predictor::{draw_noise, eps0, DecodeMode, Predictor, PredictorConfig};
use varfield::rasterizer::{render, render_with, Camera, Image, RenderSettings};
use varfield::tokenizer::TokenizerConfig;
use varfield::Error;

fn toy_predictor(c: &mut dyn FnMut(usize) -> f64) -> impl Fn(&[f64], usize, &[f64]) -> Vec<f64> {
    let w: Vec<f64> = (0..8).map(|i| c(i)).collect();
    move |x: &[f64], t: usize, cond: &[f64]| {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (w[i % 8] * v + 0.1 * t as f64).tanh() + cond.get(i % cond.len().max(1)).copied().unwrap_or(0.0))
            .collect()
    }
}

#[test]
fn ddim_chain_is_deterministic_and_matches_single_steps() {
    let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
    let mut r = rng(1);
    let pred = toy_predictor(&mut |_| r.gen_range(-1.0..1.0));
    let x_t: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = ddim_sample(&x_t, &pred, &[0.2], &schedule).unwrap();
    let b = ddim_sample(&x_t, &pred, &[0.2], &schedule).unwrap();
    assert_eq!(a, b);
    let mut x = x_t.clone();
    for t in (1..=20).rev() {
        x = ddim_step(&x, t, &pred, &[0.2], &schedule).unwrap();
    }
    assert_eq!(x, a);
}

#[test]
fn ddim_step_reference_arithmetic() {
    let schedule = NoiseSchedule::from_betas(vec![0.1, 0.3]).unwrap();
    let eps = |x: &[f64], _: usize, _: &[f64]| x.iter().map(|v| 0.5 * v).collect::<Vec<_>>();
    let x = [0.8];
    let (a, p) = (0.9f64 * 0.7, 0.9f64);
    let e = 0.4;
    let want = p.sqrt() * (0.8 - (1.0 - a).sqrt() * e) / a.sqrt() + (1.0 - p).sqrt() * e;
    let got = ddim_step(&x, 2, &eps, &[], &schedule).unwrap();
    assert!((got[0] - want).abs() < 1e-15);
}

#[test]
fn inversion_replay_round_trip() {
    let mut r = rng(2);
    for case in 0..20 {
        let steps = r.gen_range(2..60);
        let schedule = NoiseSchedule::linear(steps, r.gen_range(1e-5..1e-3), r.gen_range(0.01..0.05)).unwrap();
        let pred = toy_predictor(&mut |_| r.gen_range(-1.5..1.5));
        let x0: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
        let cond = [r.gen_range(-0.3..0.3)];
        let inv = ddpm_invert(&x0, &pred, &cond, &schedule, case).unwrap();
        assert_eq!(inv.noises.len(), steps);
        assert_eq!(inv.latents.len(), steps + 1);
        let back = ddpm_edit_replay(inv.x_t(), &inv.noises, &pred, &cond, &schedule).unwrap();
        let err = x0.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-4, "case {case}: {err}");
    }
}

#[test]
fn single_step_schedule_is_exact() {
    let schedule = NoiseSchedule::from_betas(vec![0.3]).unwrap();
    let pred = |x: &[f64], _: usize, c: &[f64]| x.iter().map(|v| v * c[0]).collect::<Vec<_>>();
    let x0 = [0.25, -0.5, 1.0];
    let inv = ddpm_invert(&x0, &pred, &[0.7], &schedule, 9).unwrap();
    let back = ddpm_edit_replay(inv.x_t(), &inv.noises, &pred, &[0.7], &schedule).unwrap();
    assert_eq!(back, x0);
}

#[test]
fn replay_follows_the_new_condition() {
    let schedule = NoiseSchedule::default();
    let pred = |x: &[f64], _: usize, c: &[f64]| x.iter().map(|v| 0.3 * v + c[0]).collect::<Vec<_>>();
    let x0 = vec![0.1; 8];
    let inv = ddpm_invert(&x0, &pred, &[0.0], &schedule, 3).unwrap();
    let h = 1e-4;
    let up = ddpm_edit_replay(inv.x_t(), &inv.noises, &pred, &[h], &schedule).unwrap();
    let down = ddpm_edit_replay(inv.x_t(), &inv.noises, &pred, &[-h], &schedule).unwrap();
    // Raising ε_φ by a constant lowers every replayed value.
    assert!(up.iter().zip(&down).all(|(u, d)| u < d));
    assert!(up != x0);
}

#[test]
fn replay_rejects_missing_levels() {
    let schedule = NoiseSchedule::linear(5, 1e-4, 0.02).unwrap();
    let pred = |x: &[f64], _: usize, _: &[f64]| vec![0.0; x.len()];
    let inv = ddpm_invert(&[0.5, 0.5], &pred, &[], &schedule, 0).unwrap();
    let err = ddpm_edit_replay(inv.x_t(), &inv.noises[..4], &pred, &[], &schedule).unwrap_err();
    assert!(matches!(err, Error::Input(ref m) if m.contains("level 5")), "{err}");
}

fn small_scene() -> GaussianScene {
    toy_scene(120, 5)
}

fn cam(az: f32) -> Camera {
    Camera::orbit([0.0; 3], 3.2, az, 10.0, 45.0, 32, 32).unwrap()
}

#[test]
fn registry_resolution() {
    let reg = OracleRegistry::builtin();
    assert_eq!(reg.resolve("Make it GOLDEN!").unwrap().name, "gold_tint");
    assert_eq!(reg.resolve("turn it black and white").unwrap().name, "desaturate");
    assert_eq!(reg.resolve("fade out the left side").unwrap().name, "fade_left");
    assert!(matches!(reg.resolve("make it shiny"), Err(Error::UnknownInstruction { .. })));
    match reg.resolve("make it red and gold") {
        Err(Error::AmbiguousInstruction { editors, .. }) => assert_eq!(editors.len(), 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn desaturate_is_gray() {
    let reg = OracleRegistry::builtin();
    let eps = draw_noise(4, 8, 4);
    let img = reg
        .edit(&small_scene(), &cam(30.0), "make it grayscale", &eps, FlowMode::Deterministic, 0, &RenderSettings::default())
        .unwrap();
    for px in img.data().chunks_exact(3) {
        assert_eq!(px[0], px[1]);
        assert_eq!(px[1], px[2]);
    }
}

/// Recolour every primitive directly, then render.
fn recolored(scene: &GaussianScene, m: &[[f64; 3]; 3], b: &[f64; 3]) -> GaussianScene {
    GaussianScene::from_primitives(scene.primitives().map(|mut p| {
        let c = p.color.map(f64::from);
        p.color = std::array::from_fn(|r| ((0..3).map(|k| m[r][k] * c[k]).sum::<f64>() + b[r]) as f32);
        p
    }))
    .unwrap()
}

#[test]
fn image_space_edits_equal_primitive_recolouring() {
    let scene = small_scene();
    let settings = RenderSettings::with_background([0.2, 0.4, 0.9]);
    for (action, theta) in [
        (EditAction::GoldTint, 0.3),
        (EditAction::Desaturate, 0.0),
        (EditAction::Recolor { color: [0.0, 0.0, 1.0] }, -1.2),
    ] {
        let (m, b) = action.color_map(theta).unwrap();
        let oracle = apply_action(&action, &scene, &cam(70.0), theta, &settings).unwrap();
        let direct = render_with(&recolored(&scene, &m, &b), &cam(70.0), &settings).image;
        let diff = oracle.data().iter().zip(direct.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(diff < 1e-5, "{action:?}: {diff}");
    }
}

#[test]
fn lift_renders_the_moved_scene() {
    let scene = small_scene();
    let c = scene.centroid();
    let theta = 0.0;
    let lifted = GaussianScene::from_primitives(scene.primitives().map(|mut p: Primitive| {
        if p.mu[1] > c[1] {
            p.mu[1] = (p.mu[1] as f64 + 0.3f32 as f64 * 0.5) as f32;
        }
        p
    }))
    .unwrap();
    let img = apply_action(&EditAction::Lift { base: 0.3 }, &scene, &cam(10.0), theta, &RenderSettings::default()).unwrap();
    assert_eq!(img.data(), render(&lifted, &cam(10.0), [0.0; 3]).image.data());
}

#[test]
fn theta_tracks_eps0_only_in_deterministic_mode() {
    let eps = draw_noise(11, 8, 4);
    assert_eq!(OracleRegistry::theta(&eps, FlowMode::Deterministic, 1), eps0(&eps) as f64);
    let a = OracleRegistry::theta(&eps, FlowMode::Degenerate, 1);
    let b = OracleRegistry::theta(&eps, FlowMode::Degenerate, 2);
    assert!(a != b && (a - eps0(&eps) as f64).abs() <= 1.0);
}

fn collect_cfg() -> CollectConfig {
    CollectConfig {
        orbit: CameraOrbit { width: 16, height: 16, ..CameraOrbit::default() },
        samples_per_pair: 3,
        seed: 42,
        noise: NoiseShape { n: 8, d_eps: 4 },
        ..CollectConfig::default()
    }
}

fn two_scenes() -> Vec<(String, GaussianScene)> {
    vec![("a".into(), toy_scene(60, 1)), ("b".into(), toy_scene(80, 2))]
}

fn instructions() -> Vec<String> {
    vec!["make it golden".into(), "lift the top".into()]
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn collection_layout_and_reproducibility() {
    let reg = OracleRegistry::builtin();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = collect_triplets(&two_scenes(), &instructions(), &reg, &collect_cfg(), None, d1.path()).unwrap();
    assert_eq!(m.triplets.len(), 12);
    assert_eq!(m.pairs.len(), 4);
    assert!(m.skipped.is_empty());
    collect_triplets(&two_scenes(), &instructions(), &reg, &collect_cfg(), None, d2.path()).unwrap();
    let (t1, t2) = (tree(d1.path()), tree(d2.path()));
    assert_eq!(t1, t2);
    for f in ["manifest.json", "scenes/a.ply", "triplets/000011/camera.json", "triplets/000011/target.png", "triplets/000011/target.f32", "triplets/000011/seed.json"] {
        assert!(t1.contains_key(f), "{f}");
    }

    let ds = Dataset::load(d1.path()).unwrap();
    assert_eq!(ds.triplets.len(), 12);
    for t in &ds.triplets {
        let eps = draw_noise(t.eps_seed, 8, 4);
        let again = reg
            .edit(&ds.scenes[t.scene], &t.camera, &t.instruction, &eps, FlowMode::Deterministic, 0, &RenderSettings::default())
            .unwrap();
        assert_eq!(again.data(), t.target.data());
    }
}

#[test]
fn collection_filter_and_errors() {
    let reg = OracleRegistry::builtin();
    let d = tempfile::tempdir().unwrap();
    let keep_even = |_: &Triplet, i: usize| i % 2 == 0;
    let m = collect_triplets(&two_scenes(), &instructions(), &reg, &collect_cfg(), Some(&keep_even), d.path()).unwrap();
    assert_eq!(m.triplets.len(), 6);
    assert_eq!(m.pairs.iter().map(|p| p.generated).sum::<usize>(), 12);
    assert_eq!(m.triplets[5].dir, "triplets/000005");

    let bad = vec!["make it sparkle".to_string()];
    let err = collect_triplets(&two_scenes(), &bad, &reg, &collect_cfg(), None, d.path()).unwrap_err();
    assert!(matches!(err, Error::UnknownInstruction { .. }));
}

fn tiny_predictor() -> Predictor {
    Predictor::new(PredictorConfig {
        tokenizer: TokenizerConfig { n: 8, k: 4, d_model: 16, ..TokenizerConfig::default() },
        d_text: 8,
        d_eps: 4,
        field_blocks: 1,
        field_heads: 2,
        decoder_blocks: 1,
        decoder_width: 8,
        decoder_heads: 1,
        ..PredictorConfig::default()
    })
    .unwrap()
}

fn tiny_dataset(dir: &Path) -> Dataset {
    let cfg = CollectConfig { samples_per_pair: 2, ..collect_cfg() };
    collect_triplets(&two_scenes(), &instructions(), &OracleRegistry::builtin(), &cfg, None, dir).unwrap();
    Dataset::load(dir).unwrap()
}

fn perturb_heads(p: &mut Predictor, seed: u64) {
    let mut r = rng(seed);
    for head in [p.net.f1.head, p.net.f2.head, p.net.direct.head] {
        let w = p.store.get(head.w).shape().to_vec();
        *p.store.get_mut(head.w) = Tensor::randn(w, 0.05, &mut r);
    }
}

#[test]
fn zero_init_loss_is_source_render_error() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let p = tiny_predictor();
    let all: Vec<usize> = (0..ds.triplets.len()).collect();
    let settings = RenderSettings::default();
    let want: f64 = ds
        .triplets
        .iter()
        .map(|t| render(&ds.scenes[t.scene], &t.camera, [0.0; 3]).image.mse(&t.target).unwrap())
        .sum::<f64>()
        / all.len() as f64;
    let (loss, grads) = din_loss_and_gradients(&p, &ds, &all, DecodeMode::Iterative, &settings).unwrap();
    assert!((loss - want).abs() <= 1e-6 * want, "{loss} vs {want}");
    assert_eq!(grads.len(), p.store.len());
    let inference = din_loss(&p, &ds, &all, DecodeMode::Iterative, &settings).unwrap();
    assert!((inference - want).abs() <= 1e-6 * want);
}

#[test]
fn graph_and_inference_losses_agree() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let mut p = tiny_predictor();
    perturb_heads(&mut p, 3);
    let idx = [0, 3, 5];
    for mode in [DecodeMode::Iterative, DecodeMode::Direct] {
        let (a, _) = din_loss_and_gradients(&p, &ds, &idx, mode, &RenderSettings::default()).unwrap();
        let b = din_loss(&p, &ds, &idx, mode, &RenderSettings::default()).unwrap();
        assert!((a - b).abs() <= 1e-5 * b, "{mode:?}: {a} vs {b}");
    }
}

#[test]
fn din_gradients_match_finite_differences() {
    let check = GradCheck { step: 3e-3, relative_floor: 1e-2 };
    for seed in 0..2 {
        let f = din_check_fixture(seed).unwrap();
        for mode in [DecodeMode::Iterative, DecodeMode::Direct] {
            let reports = check_din_gradients(&f.predictor, &f.dataset, &[0, 1], mode, &f.settings, &check, 3, seed).unwrap();
            assert_eq!(reports.len(), f.predictor.store.len());
            for (name, r) in &reports {
                assert!(r.passes(1e-3), "seed {seed} {mode:?} {name}: {:.2e} at {}", r.max_relative_error, r.worst_coordinate);
            }
        }
    }
}

#[test]
fn zero_learning_rate_leaves_weights() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let mut p = tiny_predictor();
    let before = p.store.clone();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        adamw: varfield::numerics::AdamWConfig { lr: 0.0, ..Default::default() },
        ..TrainConfig::default()
    };
    let report = train_din(&mut p, &ds, &cfg, None).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(report.batches.len(), 6);
    assert_eq!(p.store.tensors(), before.tensors());
    assert!((report.epochs[0].loss - report.epochs[1].loss).abs() < 1e-12);
    assert!(report.to_csv().starts_with("epoch,loss,lr\n0,"));
}

#[test]
fn training_reduces_loss() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let mut p = tiny_predictor();
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 2,
        adamw: varfield::numerics::AdamWConfig { lr: 3e-3, ..Default::default() },
        ..TrainConfig::default()
    };
    let mut seen = 0;
    let mut hook = |_: &EpochRecord, _: &Predictor| {
        seen += 1;
        true
    };
    let report = train_din(&mut p, &ds, &cfg, Some(&mut hook)).unwrap();
    assert_eq!(seen, 12);
    let l = report.losses();
    assert!(l[11] < 0.7 * l[0], "{l:?}");
    let eval = evaluate(&p, &ds, &(0..8).collect::<Vec<_>>(), DecodeMode::Iterative, [0.0; 3]).unwrap();
    assert!(eval.psnr > 0.0 && eval.mse > 0.0);
}

#[test]
fn hook_can_stop_training_and_lr_halves() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let mut p = tiny_predictor();
    let cfg = TrainConfig { epochs: 5, lr_halving_epochs: 1, ..TrainConfig::default() };
    let mut stop = |r: &EpochRecord, _: &Predictor| r.epoch < 1;
    let report = train_din(&mut p, &ds, &cfg, Some(&mut stop)).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(report.epochs[1].lr, cfg.adamw.lr / 2.0);
}

#[test]
fn noise_shape_mismatch_is_config_error() {
    let d = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(d.path());
    let mut p = Predictor::new(PredictorConfig { d_eps: 6, ..tiny_predictor().config }).unwrap();
    let err = train_din(&mut p, &ds, &TrainConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn exact_teacher_recovers_the_noise() {
    let schedule = NoiseSchedule::default();
    let target = Image::new(2, 1, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7]).unwrap();
    let teacher = ExactNoiseTeacher { targets: vec![target.clone()] };
    let noise = [0.3f32, -1.2, 0.8, 0.0, 2.0, -0.5];
    let t = 30;
    let a = schedule.alpha_bar(t);
    let z: Vec<f32> = target
        .data()
        .iter()
        .zip(noise)
        .map(|(&x, e)| (a.sqrt() * x as f64 + (1.0 - a).sqrt() * e as f64) as f32)
        .collect();
    let got = teacher.predict_noise(0, &z, t, &schedule).unwrap();
    for (g, e) in got.iter().zip(noise) {
        assert!((g - e).abs() < 1e-5);
    }
}

#[test]
fn sds_timesteps_decay() {
    let sds = SdsConfig::default();
    assert_eq!(sds.timestep(0, 10), 40);
    assert_eq!(sds.timestep(9, 10), 5);
    assert!((1..10).all(|e| sds.timestep(e, 10) <= sds.timestep(e - 1, 10)));
}

#[test]
fn sds_moves_renders_towards_the_teacher() {
    let scene = toy_scene(150, 8);
    let samples: Vec<SdsSample> = (0..2)
        .map(|i| SdsSample { scene: 0, camera: cam(40.0 * i as f32), instruction: "make it golden".into(), eps_seed: 5 })
        .collect();
    let settings = RenderSettings::default();
    let teacher = ExactNoiseTeacher::from_oracle(&OracleRegistry::builtin(), &[scene.clone()], &samples, (8, 4), 4, &settings).unwrap();
    let mut p = tiny_predictor();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 2,
        loss: LossKind::Sds,
        adamw: varfield::numerics::AdamWConfig { lr: 3e-3, ..Default::default() },
        ..TrainConfig::default()
    };
    let report = train_sds(&mut p, &[scene], &samples, &teacher, Some(&teacher.targets), &cfg, None).unwrap();
    let l = report.train.losses();
    assert_eq!(report.timesteps.len(), 15);
    assert!(l[14] < l[0], "{l:?}");
}
