//! Pilot for the toy distillation run: collect, train, report PSNR per epoch.
//! Knobs via env: SCENES, SAMPLES, EPOCHS, LR, D_MODEL, N, K, BATCH, MODE.

use std::time::Instant;

use varfield::distillation::*;
use varfield::numerics::AdamWConfig;
use varfield::predictor::{DecodeMode, Predictor, PredictorConfig};
use varfield::tokenizer::TokenizerConfig;

fn env<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> varfield::Result<()> {
    let scenes_n: usize = env("SCENES", 20);
    let samples: usize = env("SAMPLES", 10);
    let epochs: usize = env("EPOCHS", 20);
    let d_model: usize = env("D_MODEL", 64);
    let mode: DecodeMode = env("MODE", "iterative".to_string()).parse()?;
    let instructions: Vec<String> = env("INSTR", "make it golden|turn it black and white|lift the top".to_string())
        .split('|')
        .map(String::from)
        .collect();
    let scenes: Vec<(String, varfield::gaussians::GaussianScene)> = (0..scenes_n)
        .map(|i| (format!("toy{i:02}"), toy_scene(200 + (i * 800) / scenes_n.max(1), i as u64)))
        .collect();
    let n: usize = env("N", 16);
    let collect = CollectConfig {
        samples_per_pair: samples,
        noise: NoiseShape { n, d_eps: 8 },
        orbit: CameraOrbit { width: env("RES", 64), height: env("RES", 64), ..CameraOrbit::default() },
        ..CollectConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| varfield::Error::io("tmp", e))?;
    let t0 = Instant::now();
    collect_triplets(&scenes, &instructions, &OracleRegistry::builtin(), &collect, None, dir.path())?;
    let ds = Dataset::load(dir.path())?;
    println!("collected {} triplets in {:.1}s", ds.triplets.len(), t0.elapsed().as_secs_f64());
    let mut p = Predictor::new(PredictorConfig {
        tokenizer: TokenizerConfig { n, k: env("K", 32), d_model, ..TokenizerConfig::default() },
        d_text: 32,
        d_eps: 8,
        field_blocks: env("BLOCKS", 2),
        field_heads: 4,
        decoder_blocks: 1,
        decoder_width: env("DW", 32),
        decoder_heads: 1,
        ..PredictorConfig::default()
    })?;
    let all: Vec<usize> = (0..ds.triplets.len()).collect();
    let base = evaluate(&p, &ds, &all, mode, [0.0; 3])?;
    println!("zero-init psnr {:.2}", base.psnr);
    let cfg = TrainConfig {
        epochs,
        batch_size: env("BATCH", 8),
        adamw: AdamWConfig { lr: env("LR", 1e-3), ..AdamWConfig::default() },
        lr_halving_epochs: env("HALVE", 10),
        mode,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let every: usize = env("EVAL_EVERY", 5);
    let mut hook = |r: &EpochRecord, p: &Predictor| {
        let extra = if (r.epoch + 1) % every == 0 {
            let e = evaluate(p, &ds, &all, mode, [0.0; 3]).unwrap();
            format!(" psnr {:.2}", e.psnr)
        } else {
            String::new()
        };
        println!("epoch {:3} loss {:.6} lr {:.1e} t {:.0}s{extra}", r.epoch, r.loss, r.lr, t1.elapsed().as_secs_f64());
        true
    };
    train_din(&mut p, &ds, &cfg, Some(&mut hook))?;
    Ok(())
}
