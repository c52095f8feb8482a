//! Background training jobs: one worker thread, records flushed to the
//! store on every state change.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use serde::{Deserialize, Serialize};
use varfield::distillation::{
    collect_triplets, train_din, train_sds, CameraOrbit, CollectConfig, Dataset, EpochRecord, ExactNoiseTeacher,
    OracleRegistry, SdsSample, TrainConfig,
};
use varfield::predictor::{Predictor, PredictorConfig};
use varfield::rasterizer::RenderSettings;

use crate::error::{ServiceError, ServiceResult};
use crate::store::{content_id, write_atomic, Kind, Store};

/// Losses kept in a job record.
pub const LOSS_TAIL: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Collect,
    TrainDin,
    TrainSds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_final(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    pub loss_tail: Vec<f64>,
    pub error: Option<String>,
    pub config: serde_json::Value,
    /// Store ids produced by the job.
    pub result: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectJob {
    /// Store ids of the source scenes.
    pub scenes: Vec<String>,
    pub instructions: Vec<String>,
    #[serde(default)]
    pub collect: CollectConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDinJob {
    pub dataset_id: String,
    /// Start from these weights; otherwise fresh weights from `predictor`.
    pub weights_id: Option<String>,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSdsJob {
    pub scenes: Vec<String>,
    pub instructions: Vec<String>,
    #[serde(default = "one")]
    pub samples_per_pair: usize,
    #[serde(default)]
    pub orbit: CameraOrbit,
    #[serde(default)]
    pub seed: u64,
    pub weights_id: Option<String>,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn one() -> usize {
    1
}

/// Parsed job request.
#[derive(Clone, Debug)]
pub enum JobSpec {
    Collect(CollectJob),
    TrainDin(TrainDinJob),
    TrainSds(TrainSdsJob),
}

impl JobSpec {
    pub fn parse(kind: JobKind, config: &serde_json::Value) -> ServiceResult<Self> {
        let bad = |e: serde_json::Error| ServiceError::bad(format!("{kind:?} config: {e}"));
        Ok(match kind {
            JobKind::Collect => JobSpec::Collect(serde_json::from_value(config.clone()).map_err(bad)?),
            JobKind::TrainDin => JobSpec::TrainDin(serde_json::from_value(config.clone()).map_err(bad)?),
            JobKind::TrainSds => JobSpec::TrainSds(serde_json::from_value(config.clone()).map_err(bad)?),
        })
    }

    /// Reject references to missing blobs and invalid configs before queueing.
    fn check(&self, store: &Store) -> ServiceResult<()> {
        let need = |kind, id: &str| {
            if store.contains(kind, id) {
                Ok(())
            } else {
                Err(ServiceError::NotFound(format!("{} {id}", kind.dir())))
            }
        };
        let registry = OracleRegistry::builtin();
        match self {
            JobSpec::Collect(c) => {
                c.scenes.iter().try_for_each(|s| need(Kind::Scene, s))?;
                for i in &c.instructions {
                    registry.resolve(i)?;
                }
            }
            JobSpec::TrainDin(c) => {
                need(Kind::Dataset, &c.dataset_id)?;
                if let Some(w) = &c.weights_id {
                    need(Kind::Weights, w)?;
                } else {
                    c.predictor.validate()?;
                }
                c.train.validate()?;
            }
            JobSpec::TrainSds(c) => {
                c.scenes.iter().try_for_each(|s| need(Kind::Scene, s))?;
                for i in &c.instructions {
                    registry.resolve(i)?;
                }
                if let Some(w) = &c.weights_id {
                    need(Kind::Weights, w)?;
                } else {
                    c.predictor.validate()?;
                }
                c.train.validate()?;
            }
        }
        Ok(())
    }
}

struct Shared {
    store: Store,
    records: RwLock<HashMap<String, JobRecord>>,
    /// Serialises record writes so the file always holds the latest state.
    flush: Mutex<()>,
}

impl Shared {
    fn snapshot(&self, id: &str) -> Option<JobRecord> {
        self.records.read().expect("job table").get(id).cloned()
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) -> ServiceResult<()> {
        let _guard = self.flush.lock().expect("job flush");
        let record = {
            let mut table = self.records.write().expect("job table");
            let r = table.get_mut(id).expect("known job");
            let before = r.status;
            f(r);
            debug_assert!(r.status >= before, "job status went backwards");
            r.clone()
        };
        write_atomic(&self.store.path(Kind::Job, id), &serde_json::to_vec_pretty(&record)?)
    }
}

/// Single-worker job queue. Cloning shares the queue.
#[derive(Clone)]
pub struct JobQueue {
    shared: Arc<Shared>,
    tx: Arc<Mutex<Sender<String>>>,
}

impl JobQueue {
    /// Load existing records and start the worker. Jobs left queued or
    /// running by a previous process are marked failed.
    pub fn start(store: Store) -> ServiceResult<Self> {
        let mut records = HashMap::new();
        for id in store.list(Kind::Job)? {
            let bytes = store.get_bytes(Kind::Job, &id)?;
            let record: JobRecord = serde_json::from_slice(&bytes)?;
            records.insert(id, record);
        }
        let shared = Arc::new(Shared {
            store,
            records: RwLock::new(records),
            flush: Mutex::new(()),
        });
        let stale: Vec<String> = shared
            .records
            .read()
            .expect("job table")
            .values()
            .filter(|r| !r.status.is_final())
            .map(|r| r.id.clone())
            .collect();
        for id in stale {
            log::warn!("job {id} was interrupted by a restart");
            shared.update(&id, |r| {
                r.status = JobStatus::Failed;
                r.error = Some("interrupted by service restart".into());
            })?;
        }
        let (tx, rx) = channel::<String>();
        let worker = shared.clone();
        thread::Builder::new()
            .name("varfield-jobs".into())
            .spawn(move || {
                for id in rx {
                    run_job(&worker, &id);
                }
            })
            .map_err(|e| ServiceError::bad(format!("cannot start job worker: {e}")))?;
        Ok(Self { shared, tx: Arc::new(Mutex::new(tx)) })
    }

    /// Queue a job. The id is the digest of kind and config; an identical
    /// request returns the existing job unless that one failed, in which
    /// case a new attempt gets a new id.
    pub fn submit(&self, kind: JobKind, config: serde_json::Value) -> ServiceResult<JobRecord> {
        let spec = JobSpec::parse(kind, &config)?;
        spec.check(&self.shared.store)?;
        let body = serde_json::to_vec(&serde_json::json!({ "kind": kind, "config": config }))?;
        let mut attempt = 0u32;
        let id = loop {
            let mut bytes = body.clone();
            if attempt > 0 {
                bytes.extend_from_slice(format!("#{attempt}").as_bytes());
            }
            let id = content_id(&bytes);
            match self.shared.snapshot(&id) {
                Some(r) if r.status == JobStatus::Failed => attempt += 1,
                Some(r) => return Ok(r),
                None => break id,
            }
        };
        let record = JobRecord {
            id: id.clone(),
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            loss_tail: Vec::new(),
            error: None,
            config,
            result: None,
        };
        {
            let _guard = self.shared.flush.lock().expect("job flush");
            write_atomic(&self.shared.store.path(Kind::Job, &id), &serde_json::to_vec_pretty(&record)?)?;
            self.shared.records.write().expect("job table").insert(id.clone(), record.clone());
        }
        self.tx
            .lock()
            .expect("job sender")
            .send(id)
            .map_err(|_| ServiceError::bad("job worker has stopped"))?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> ServiceResult<JobRecord> {
        self.shared.snapshot(id).ok_or_else(|| ServiceError::NotFound(format!("job {id}")))
    }

    pub fn list(&self) -> Vec<JobRecord> {
        let mut all: Vec<JobRecord> = self.shared.records.read().expect("job table").values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }
}

fn run_job(shared: &Shared, id: &str) {
    let Some(record) = shared.snapshot(id) else { return };
    if record.status != JobStatus::Queued {
        return;
    }
    if let Err(e) = shared.update(id, |r| r.status = JobStatus::Running) {
        log::error!("job {id}: {e}");
        return;
    }
    log::info!("job {id} ({:?}) started", record.kind);
    let outcome = JobSpec::parse(record.kind, &record.config).and_then(|spec| execute(shared, id, spec));
    let flushed = match outcome {
        Ok(result) => shared.update(id, |r| {
            r.status = JobStatus::Done;
            r.progress = 1.0;
            r.result = Some(result);
        }),
        Err(e) => {
            log::warn!("job {id} failed: {e}");
            shared.update(id, |r| {
                r.status = JobStatus::Failed;
                r.error = Some(e.to_string());
            })
        }
    };
    if let Err(e) = flushed {
        log::error!("job {id}: {e}");
    }
}

fn initial_predictor(store: &Store, weights: &Option<String>, config: &PredictorConfig) -> ServiceResult<Predictor> {
    match weights {
        Some(w) => store.get_weights(w),
        None => Ok(Predictor::new(config.clone())?),
    }
}

fn execute(shared: &Shared, id: &str, spec: JobSpec) -> ServiceResult<serde_json::Value> {
    let store = &shared.store;
    match spec {
        JobSpec::Collect(c) => {
            let scenes = c
                .scenes
                .iter()
                .map(|s| Ok((s.clone(), store.get_scene(s)?)))
                .collect::<ServiceResult<Vec<_>>>()?;
            let staging = store.staging_dir(id)?;
            let manifest =
                collect_triplets(&scenes, &c.instructions, &OracleRegistry::builtin(), &c.collect, None, &staging)?;
            let dataset_id = store.adopt_dataset(&staging)?;
            Ok(serde_json::json!({
                "dataset_id": dataset_id,
                "triplets": manifest.triplets.len(),
                "skipped": manifest.skipped.len(),
            }))
        }
        JobSpec::TrainDin(c) => {
            let dataset = Dataset::load(store.dataset_dir(&c.dataset_id)?)?;
            let mut predictor = initial_predictor(store, &c.weights_id, &c.predictor)?;
            let epochs = c.train.epochs.max(1);
            let mut hook = progress_hook(shared, id, epochs);
            let report = train_din(&mut predictor, &dataset, &c.train, Some(&mut hook))?;
            let weights_id = store.put_weights(&predictor)?;
            Ok(serde_json::json!({ "weights_id": weights_id, "losses": report.losses() }))
        }
        JobSpec::TrainSds(c) => {
            let scenes = c.scenes.iter().map(|s| store.get_scene(s)).collect::<ServiceResult<Vec<_>>>()?;
            let mut predictor = initial_predictor(store, &c.weights_id, &c.predictor)?;
            let samples = sds_samples(scenes.len(), &c)?;
            let settings = RenderSettings::with_background(c.train.background);
            let noise = (predictor.config.tokenizer.n, predictor.config.d_eps);
            let teacher = ExactNoiseTeacher::from_oracle(
                &OracleRegistry::builtin(),
                &scenes,
                &samples,
                noise,
                c.train.sds.latent_factor,
                &settings,
            )?;
            let epochs = c.train.epochs.max(1);
            let mut hook = progress_hook(shared, id, epochs);
            let targets = teacher.targets.clone();
            let report = train_sds(&mut predictor, &scenes, &samples, &teacher, Some(&targets), &c.train, Some(&mut hook))?;
            let weights_id = store.put_weights(&predictor)?;
            Ok(serde_json::json!({
                "weights_id": weights_id,
                "losses": report.train.losses(),
                "timesteps": report.timesteps,
            }))
        }
    }
}

fn sds_samples(scene_count: usize, c: &TrainSdsJob) -> ServiceResult<Vec<SdsSample>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.seed);
    let mut samples = Vec::new();
    for scene in 0..scene_count {
        for instruction in &c.instructions {
            for _ in 0..c.samples_per_pair.max(1) {
                samples.push(SdsSample {
                    scene,
                    camera: c.orbit.sample(&mut rng)?,
                    instruction: instruction.clone(),
                    eps_seed: rand::Rng::gen(&mut rng),
                });
            }
        }
    }
    Ok(samples)
}

fn progress_hook<'a>(shared: &'a Shared, id: &'a str, epochs: usize) -> impl FnMut(&EpochRecord, &Predictor) -> bool + 'a {
    move |rec: &EpochRecord, _: &Predictor| {
        let flushed = shared.update(id, |r| {
            r.progress = (rec.epoch + 1) as f64 / epochs as f64;
            r.loss_tail.push(rec.loss);
            if r.loss_tail.len() > LOSS_TAIL {
                r.loss_tail.remove(0);
            }
        });
        if let Err(e) = flushed {
            log::error!("job {id}: {e}");
        }
        true
    }
}
