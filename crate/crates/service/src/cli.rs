//! `varfield` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use varfield::distillation::{
    collect_triplets, run_gradient_checks, toy_scene, train_din, train_sds, CollectConfig, Dataset, EpochRecord,
    ExactNoiseTeacher, LossKind, OracleRegistry, SdsSample, TrainConfig, TrainReport,
};
use varfield::gaussians::{load_ply, load_variation, overlay, save_ply, save_variation, scale_variation, variation_to_bytes, GaussianScene};
use varfield::metrics::{chamfer_fscore, mse_psnr, runtime_linearity, MetricReport};
use varfield::predictor::{load_checkpoint, save_checkpoint, DecodeMode, Predictor, PredictorConfig};
use varfield::rasterizer::{render, Camera, Image};
use varfield::visualize::{viz_layer, viz_panel, VizConfig, VizLayer};

use crate::api::AppState;
use crate::error::{ServiceError, ServiceResult};
use crate::store::{content_id, Store};
use crate::framing_camera;

#[derive(Parser, Debug)]
#[command(name = "varfield", version, about = "Feed-forward Gaussian splat editing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render oracle edits into a triplet dataset.
    GenData(GenData),
    /// Distil a predictor from a dataset.
    Train(Train),
    /// Predict a variation for one scene and instruction.
    Edit(Edit),
    /// Render a scene (optionally with a variation applied) to PNG.
    Render(RenderCmd),
    /// Visualise a variation as a layer or a 3×2 panel.
    Viz(Viz),
    /// Overlay a (scaled) variation onto a scene.
    Apply(Apply),
    /// Run the HTTP service.
    Serve(Serve),
    /// Finite-difference checks of the rasterizer and L_din gradients.
    Gradcheck(Gradcheck),
    /// Fit predict latency against primitive count.
    Bench(Bench),
    /// PSNR between images or Chamfer/F-score between scenes.
    Metrics(Metrics),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Source scenes (PLY).
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    /// Add this many synthetic toy scenes.
    #[arg(long, default_value_t = 0)]
    pub toy: usize,
    #[arg(long, default_value_t = 200)]
    pub toy_primitives: usize,
    #[arg(long = "instruction", required = true)]
    pub instructions: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Collect config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON with optional `predictor` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from these weights instead of a fresh predictor.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub mode: Option<DecodeMode>,
    /// Write the per-epoch loss curve as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Edit {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub instruction: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint; fresh weights from `--config` (or defaults) otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Predictor config JSON for fresh weights.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "iterative")]
    pub mode: DecodeMode,
    #[arg(long)]
    pub out_variation: Option<PathBuf>,
    #[arg(long)]
    pub out_scene: Option<PathBuf>,
    /// Camera JSON; prints PSNR between the source and edited renders.
    #[arg(long)]
    pub camera: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderCmd {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    #[arg(long)]
    pub variation: Option<PathBuf>,
    #[arg(long, default_value = "0,0,0")]
    pub bg: String,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Viz {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub variation: PathBuf,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// position, opacity, scale, color, rotation or panel.
    #[arg(long, default_value = "panel")]
    pub layer: String,
    #[arg(long, default_value_t = 2.0)]
    pub radius: f32,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Apply {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub variation: PathBuf,
    /// Intensity multiplier applied to every delta.
    #[arg(long, default_value_t = 1.0)]
    pub weight: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Serve {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Store root; `VARFIELD_STORE` or ./varfield-store otherwise.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Gradcheck {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct Bench {
    #[arg(long, value_delimiter = ',', default_value = "5000,10000,20000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Predictor config JSON for fresh weights.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "make it golden")]
    pub instruction: String,
}

#[derive(Args, Debug)]
pub struct Metrics {
    /// Two images (PNG) for MSE/PSNR.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub images: Option<Vec<PathBuf>>,
    /// Two scenes (PLY) for Chamfer distance and F-score over centres.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub scenes: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
}

/// Parse `argv` and run. Usage errors exit with 2, failures with 1.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> ServiceResult<T> {
    let bytes = std::fs::read(path).map_err(|e| ServiceError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| ServiceError::bad(format!("{}: {e}", path.display())))
}

fn camera_or_framing(path: &Option<PathBuf>, scene: &GaussianScene, size: u32) -> ServiceResult<Camera> {
    Ok(match path {
        Some(p) => Camera::load_json(p)?,
        None => framing_camera(scene, size, size)?,
    })
}

fn parse_bg(s: &str) -> ServiceResult<[f32; 3]> {
    let v: Vec<f32> = s
        .split(',')
        .map(|p| p.trim().parse::<f32>())
        .collect::<Result<_, _>>()
        .map_err(|e| ServiceError::bad(format!("--bg {s:?}: {e}")))?;
    <[f32; 3]>::try_from(v).map_err(|_| ServiceError::bad(format!("--bg {s:?} needs three values")))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    predictor: PredictorConfig,
    train: TrainConfig,
}

fn run(command: Command) -> ServiceResult<ExitCode> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Edit(a) => edit(a),
        Command::Render(a) => {
            let mut scene = load_ply(&a.scene)?;
            if let Some(v) = &a.variation {
                scene = overlay(&scene, &load_variation(v)?)?;
            }
            let cam = camera_or_framing(&a.camera, &scene, a.size)?;
            render(&scene, &cam, parse_bg(&a.bg)?).image.save_png(&a.out)?;
            println!("{}", a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Viz(a) => {
            let scene = load_ply(&a.scene)?;
            let v = load_variation(&a.variation)?;
            let mut cfg = VizConfig::new(camera_or_framing(&a.camera, &scene, a.size)?);
            cfg.radius = a.radius;
            if a.layer == "panel" {
                viz_panel(&scene, &v, &cfg)?.save_png(&a.out)?;
            } else {
                let layer: VizLayer = a.layer.parse().map_err(|e: varfield::Error| ServiceError::bad(e.to_string()))?;
                viz_layer(&scene, &v, layer, &cfg)?.save_png(&a.out)?;
            }
            println!("{}", a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Apply(a) => {
            let scene = load_ply(&a.scene)?;
            let v = scale_variation(&load_variation(&a.variation)?, a.weight);
            save_ply(&overlay(&scene, &v)?, &a.out)?;
            println!("{}", a.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(a) => serve(a),
        Command::Gradcheck(a) => {
            let lines = run_gradient_checks(&a.seeds, a.tolerance)?;
            let mut ok = true;
            for l in &lines {
                println!("{:<24} {:.3e} {}", l.name, l.max_relative_error, if l.passed { "pass" } else { "FAIL" });
                ok &= l.passed;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Bench(a) => bench(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn gen_data(a: GenData) -> ServiceResult<ExitCode> {
    let mut config: CollectConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CollectConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let mut scenes = Vec::new();
    for p in &a.scenes {
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
        scenes.push((name, load_ply(p)?));
    }
    for i in 0..a.toy {
        scenes.push((format!("toy{i:03}"), toy_scene(a.toy_primitives, config.seed.wrapping_add(i as u64))));
    }
    if scenes.is_empty() {
        return Err(ServiceError::bad("no scenes: pass --scene or --toy"));
    }
    let manifest = collect_triplets(&scenes, &a.instructions, &OracleRegistry::builtin(), &config, None, &a.out)?;
    println!(
        "{} triplets from {} scenes ({} skipped) in {}",
        manifest.triplets.len(),
        manifest.scenes.len(),
        manifest.skipped.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn print_epoch(rec: &EpochRecord, _: &Predictor) -> bool {
    println!("epoch {:>4} loss {:.6} lr {:.2e}", rec.epoch, rec.loss, rec.lr);
    true
}

fn train(a: Train) -> ServiceResult<ExitCode> {
    let file: TrainFile = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let mut cfg = file.train;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    match a.loss.as_deref() {
        None => {}
        Some("din") => cfg.loss = LossKind::Din,
        Some("sds") => cfg.loss = LossKind::Sds,
        Some(other) => return Err(ServiceError::bad(format!("--loss {other:?} (din|sds)"))),
    }
    let dataset = Dataset::load(&a.data)?;
    let mut predictor = match &a.weights {
        Some(w) => load_checkpoint(w)?,
        None => Predictor::new(file.predictor)?,
    };
    let mut hook = print_epoch;
    let report: TrainReport = match cfg.loss {
        LossKind::Din => train_din(&mut predictor, &dataset, &cfg, Some(&mut hook))?,
        LossKind::Sds => {
            let samples: Vec<SdsSample> = dataset
                .triplets
                .iter()
                .map(|t| SdsSample {
                    scene: t.scene,
                    camera: t.camera.clone(),
                    instruction: t.instruction.clone(),
                    eps_seed: t.eps_seed,
                })
                .collect();
            let settings = varfield::rasterizer::RenderSettings::with_background(cfg.background);
            let noise = (predictor.config.tokenizer.n, predictor.config.d_eps);
            let teacher = ExactNoiseTeacher::from_oracle(
                &OracleRegistry::builtin(),
                &dataset.scenes,
                &samples,
                noise,
                cfg.sds.latent_factor,
                &settings,
            )?;
            let targets = teacher.targets.clone();
            train_sds(&mut predictor, &dataset.scenes, &samples, &teacher, Some(&targets), &cfg, Some(&mut hook))?.train
        }
    };
    save_checkpoint(&predictor, &a.out)?;
    if let Some(log) = &a.log {
        std::fs::write(log, report.to_csv()).map_err(|e| ServiceError::io(log, e))?;
    }
    println!("{}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn edit(a: Edit) -> ServiceResult<ExitCode> {
    let scene = load_ply(&a.scene)?;
    let predictor = match (&a.weights, &a.config) {
        (Some(w), _) => load_checkpoint(w)?,
        (None, Some(c)) => Predictor::new(read_json(c)?)?,
        (None, None) => Predictor::new(PredictorConfig::default())?,
    };
    let v = predictor.predict(&scene, &a.instruction, a.seed, a.mode)?;
    println!("variation {}", content_id(&variation_to_bytes(&v)));
    let edited = overlay(&scene, &v)?;
    if let Some(p) = &a.out_variation {
        save_variation(&v, p)?;
    }
    if let Some(p) = &a.out_scene {
        save_ply(&edited, p)?;
    }
    if let Some(c) = &a.camera {
        let cam = Camera::load_json(c)?;
        let before = render(&scene, &cam, [0.0; 3]).image;
        let after = render(&edited, &cam, [0.0; 3]).image;
        let (_, psnr) = mse_psnr(&before, &after)?;
        println!("psnr_before_after {psnr:.2}");
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: Serve) -> ServiceResult<ExitCode> {
    let store = match a.store {
        Some(root) => Store::open(root)?,
        None => Store::from_env()?,
    };
    let state = AppState::new(store)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServiceError::bad(format!("runtime: {e}")))?;
    rt.block_on(crate::api::serve(state, &a.bind, |addr| {
        println!("listening on http://{addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn bench(a: Bench) -> ServiceResult<ExitCode> {
    let predictor = match (&a.weights, &a.config) {
        (Some(w), _) => load_checkpoint(w)?,
        (None, Some(c)) => Predictor::new(read_json(c)?)?,
        (None, None) => Predictor::new(PredictorConfig::default())?,
    };
    let report = runtime_linearity(
        &a.sizes,
        a.repeats,
        |n| Ok(toy_scene(n, a.seed)),
        |scene| predictor.predict(scene, &a.instruction, a.seed, DecodeMode::Iterative).map(|_| ()),
    )?;
    for (n, s) in report.sizes.iter().zip(&report.seconds) {
        println!("n {n:>7} seconds {s:.4}");
    }
    println!(
        "slope {:.3e} s/primitive intercept {:.4} s r2 {:.4}",
        report.fit.slope, report.fit.intercept, report.fit.r2
    );
    Ok(ExitCode::SUCCESS)
}

fn load_image(p: &Path) -> ServiceResult<Image> {
    Ok(Image::load_png(p)?)
}

fn metrics(a: Metrics) -> ServiceResult<ExitCode> {
    if a.images.is_none() && a.scenes.is_none() {
        return Err(ServiceError::bad("pass --images A B and/or --scenes A B"));
    }
    println!("{}", MetricReport::csv_header());
    if let Some(paths) = &a.images {
        let (x, y) = (load_image(&paths[0])?, load_image(&paths[1])?);
        let (mse, psnr) = mse_psnr(&x, &y)?;
        let inputs = format!("{} {}", paths[0].display(), paths[1].display());
        println!("{}", MetricReport::new("mse", mse, "exact", &inputs)?.csv_row());
        println!("{}", MetricReport::new("psnr", psnr, "exact", &inputs)?.csv_row());
    }
    if let Some(paths) = &a.scenes {
        let r = chamfer_fscore(&load_ply(&paths[0])?, &load_ply(&paths[1])?, a.tau)?;
        let inputs = format!("{} {}", paths[0].display(), paths[1].display());
        println!("{}", MetricReport::new("chamfer", r.chamfer, "exact", &inputs)?.csv_row());
        let tol = format!("tau={}", a.tau);
        println!("{}", MetricReport::new("precision", r.precision, &tol, &inputs)?.csv_row());
        println!("{}", MetricReport::new("recall", r.recall, &tol, &inputs)?.csv_row());
        println!("{}", MetricReport::new("fscore", r.fscore, &tol, &inputs)?.csv_row());
    }
    Ok(ExitCode::SUCCESS)
}
