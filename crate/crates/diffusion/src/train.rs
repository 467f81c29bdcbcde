use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use imtrans_core::corpus::{CorpusError, CorpusManifest, MANIFEST_FILE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data::{Batch, TrainItem};
use crate::graph::Graph;
use crate::model::{CondLatents, LpWeighting, Model, ModelConfig, ModelError};
use crate::params::{Adam, AdamConfig, ParamStore};
use crate::sample::gaussian;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss at step {step}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    NonFinite { step: usize, last_good: Option<PathBuf> },
    #[error("training log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    #[default]
    Constant,
    /// Half-cosine from the base rate to zero over the run.
    Cosine,
}

impl LrDecay {
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrDecay::Constant => base,
            LrDecay::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay: LrDecay,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    /// Stop after this many optimizer steps, running as many epochs as needed.
    pub max_steps: Option<usize>,
    pub lp_weighting: LpWeighting,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Write a checkpoint every this many epochs; 0 disables per-epoch files.
    pub checkpoint_every: usize,
    pub vae: VaeTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            lr_decay: LrDecay::Constant,
            batch_size: 6,
            epochs: 15,
            lambda: 0.01,
            seed: 0,
            schedule: ScheduleConfig::default(),
            max_steps: None,
            lp_weighting: LpWeighting::default(),
            clip_norm: 1.0,
            checkpoint_every: 1,
            vae: VaeTrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if self.batch_size == 0 || self.vae.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return bad("epochs must be >= 1");
        }
        if !(self.vae.learning_rate > 0.0) {
            return bad("vae learning_rate must be > 0");
        }
        NoiseSchedule::new(&self.schedule).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum LogRecord {
    Vae {
        step: usize,
        loss: f64,
        recon: f64,
        kl: f64,
        lr: f64,
        wallclock: f64,
    },
    Diffusion {
        step: usize,
        epoch: usize,
        l_d: f64,
        l_p: Option<f64>,
        loss: f64,
        lr: f64,
        wallclock: f64,
    },
}

/// Collects log records and optionally appends them to a JSONL file.
pub struct TrainLog {
    records: Vec<LogRecord>,
    file: Option<(PathBuf, BufWriter<File>)>,
    start: Instant,
}

impl TrainLog {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            file: None,
            start: Instant::now(),
        }
    }

    pub fn append_to(path: &Path) -> Result<Self, TrainError> {
        let err = |source| TrainError::Log {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        Ok(Self {
            records: Vec::new(),
            file: Some((path.to_path_buf(), BufWriter::new(f))),
            start: Instant::now(),
        })
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn push(&mut self, rec: LogRecord) -> Result<(), TrainError> {
        if let Some((path, w)) = &mut self.file {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| TrainError::Log {
                    path: path.display().to_string(),
                    source,
                })?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }
}

/// VAE encodings of every item, computed once with the frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    pub targets: Vec<Tensor<f32>>,
    pub conds: Vec<CondLatents<f32>>,
}

impl LatentCache {
    pub fn build(model: &Model, ps: &ParamStore<f32>, items: &[TrainItem<f32>]) -> Self {
        Self {
            targets: items.iter().map(|i| model.encode_tensor(ps, &i.target)).collect(),
            conds: items.iter().map(|i| model.encode_conditions(ps, &i.cond)).collect(),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> (Tensor<f32>, CondLatents<f32>) {
        (
            Tensor::stack(&idx.iter().map(|&i| &self.targets[i]).collect::<Vec<_>>()),
            CondLatents::stack(&idx.iter().map(|&i| &self.conds[i]).collect::<Vec<_>>()),
        )
    }
}

/// Loads every manifest entry under `root` as a training item.
pub fn load_corpus_items(root: &Path) -> Result<Vec<TrainItem<f32>>, TrainError> {
    let manifest = CorpusManifest::read(&root.join(MANIFEST_FILE))?;
    manifest
        .entries
        .iter()
        .map(|e| Ok(TrainItem::from_pair(&manifest.load_pair(root, e)?)))
        .collect()
}

/// Hash of everything that determines a training run.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig, items: &[TrainItem<f32>]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model).expect("config serializes"));
    h.update(serde_json::to_vec(train).expect("config serializes"));
    for it in items {
        h.update(it.pair_id.to_le_bytes());
        for v in it.target.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits the VAE (MSE + KL) on `images` (each 1×3×H×W). Returns the mean
/// reconstruction error of the last 10% of steps.
pub fn pretrain_vae(
    model: &Model,
    ps: &mut ParamStore<f32>,
    images: &[&Tensor<f32>],
    config: &VaeTrainConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<f64, TrainError> {
    if images.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyBatch));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6500);
    let mut opt = Adam::new(AdamConfig::with_lr(config.learning_rate), ps);
    let (c, h, w) = model.config.latent_dims();
    let tail = (config.steps / 10).max(1);
    let mut tail_sum = 0.0;
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size.min(images.len()))
            .map(|_| rng.gen_range(0..images.len()))
            .collect();
        let x = Tensor::stack(&idx.iter().map(|&i| images[i]).collect::<Vec<_>>());
        let noise: Tensor<f32> = gaussian(&[idx.len(), c, h, w], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let nv = g.constant(noise);
        let (total, rec, kl) = model.vae.loss(&mut g, ps, xv, nv);
        let loss = g.value(total).item() as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step, last_good: None });
        }
        let grads = g.backward(total);
        opt.step(ps, &grads);
        let recon = g.value(rec).item() as f64;
        if step + tail >= config.steps {
            tail_sum += recon;
        }
        log.push(LogRecord::Vae {
            step,
            loss,
            recon,
            kl: g.value(kl).item() as f64,
            lr: config.learning_rate,
            wallclock: log.elapsed(),
        })?;
    }
    Ok(tail_sum / tail.min(config.steps.max(1)) as f64)
}

/// Sets the latent scale so encoded targets have unit standard deviation.
pub fn calibrate_latent_scale(model: &mut Model, ps: &ParamStore<f32>, images: &[&Tensor<f32>]) {
    model.latent_scale = 1.0;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for x in images {
        for &v in model.encode_tensor(ps, x).data() {
            sum += v as f64;
            sq += (v as f64) * (v as f64);
            n += 1;
        }
    }
    if n == 0 {
        return;
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    if std > 1e-6 {
        model.latent_scale = 1.0 / std;
    }
}

/// Per-step draws: one uniform timestep per item and standard-normal noise.
pub fn draw_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    latent: (usize, usize, usize),
    steps: usize,
) -> (Vec<usize>, Tensor<f32>) {
    let t = (0..n).map(|_| rng.gen_range(0..steps)).collect();
    let (c, h, w) = latent;
    (t, gaussian(&[n, c, h, w], rng))
}

/// Mean L_d over all items with `draws` fixed (t, ε) draws per item.
pub fn evaluate_l_d(
    model: &Model,
    ps: &ParamStore<f32>,
    items: &[TrainItem<f32>],
    cache: &LatentCache,
    schedule: &NoiseSchedule,
    draws: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..items.len()).collect();
    let batch = Batch::collate(&items.iter().collect::<Vec<_>>());
    let (target, cond) = cache.gather(&idx);
    for _ in 0..draws {
        let (t, eps) = draw_noise(&mut rng, items.len(), model.config.latent_dims(), schedule.steps());
        let mut g = Graph::new();
        let lv = model.loss(
            &mut g,
            ps,
            &batch,
            &target,
            Some(&cond),
            &t,
            &eps,
            schedule,
            0.0,
            LpWeighting::Uniform,
        )?;
        total += g.value(lv.l_d).item() as f64;
    }
    Ok(total / draws.max(1) as f64)
}

pub struct TrainOutcome {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub config_hash: String,
    pub log: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, schedule: &ScheduleConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            schedule: schedule.clone(),
            config_hash: self.config_hash.clone(),
            params: self.params.clone(),
        }
    }

    pub fn diffusion_losses(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|r| match r {
                LogRecord::Diffusion { l_d, .. } => Some(*l_d),
                _ => None,
            })
            .collect()
    }
}

/// Diffusion training with a frozen, already-fitted VAE.
pub fn train_diffusion(
    model: Model,
    mut ps: ParamStore<f32>,
    items: &[TrainItem<f32>],
    config: &TrainConfig,
    config_hash: String,
    out_dir: Option<&Path>,
    log: &mut TrainLog,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if items.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyBatch));
    }
    let schedule = NoiseSchedule::new(&config.schedule).map_err(ModelError::from)?;
    ps.set_frozen("vae.", true);
    let cache = LatentCache::build(&model, &ps, items);
    let mut opt = Adam::new(
        AdamConfig {
            clip_norm: config.clip_norm,
            ..AdamConfig::with_lr(config.learning_rate)
        },
        &ps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let per_epoch = items.len().div_ceil(config.batch_size);
    let total_steps = config.max_steps.unwrap_or(config.epochs * per_epoch);
    let mut checkpoints = Vec::new();
    let snapshot = |model: &Model, ps: &ParamStore<f32>| Checkpoint {
        model: model.clone(),
        schedule: config.schedule.clone(),
        config_hash: config_hash.clone(),
        params: ps.clone(),
    };
    let mut step = 0;
    let mut epoch = 0;
    while step < total_steps {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= total_steps {
                break;
            }
            opt.config.lr = config.lr_decay.rate(config.learning_rate, step, total_steps);
            let batch = Batch::collate(&chunk.iter().map(|&i| &items[i]).collect::<Vec<_>>());
            let (target, cond) = cache.gather(chunk);
            let (t, eps) = draw_noise(&mut rng, chunk.len(), model.config.latent_dims(), schedule.steps());
            let mut g = Graph::new();
            let lv = model.loss(
                &mut g,
                &ps,
                &batch,
                &target,
                Some(&cond),
                &t,
                &eps,
                &schedule,
                config.lambda,
                config.lp_weighting,
            )?;
            let loss = g.value(lv.total).item() as f64;
            if !loss.is_finite() {
                let last_good = match out_dir {
                    Some(dir) => {
                        let p = dir.join("last-good.ckpt");
                        snapshot(&model, &ps).save(&p)?;
                        Some(p)
                    }
                    None => checkpoints.last().cloned(),
                };
                return Err(TrainError::NonFinite { step, last_good });
            }
            let grads = g.backward(lv.total);
            opt.step(&mut ps, &grads);
            log.push(LogRecord::Diffusion {
                step,
                epoch,
                l_d: g.value(lv.l_d).item() as f64,
                l_p: lv.l_p.map(|v| g.value(v).item() as f64),
                loss,
                lr: opt.config.lr,
                wallclock: log.elapsed(),
            })?;
            step += 1;
        }
        epoch += 1;
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                let p = dir.join(format!("epoch-{epoch:04}.ckpt"));
                snapshot(&model, &ps).save(&p)?;
                checkpoints.push(p);
            }
        }
    }
    ps.set_frozen("vae.", false);
    Ok(TrainOutcome {
        model,
        params: ps,
        config_hash,
        log: log.records().to_vec(),
        checkpoints,
        steps: step,
    })
}

/// Builds the model, fits the VAE on every image the encoder will see and
/// calibrates the latent scale.
pub fn prepare_model(
    items: &[TrainItem<f32>],
    model_config: ModelConfig,
    config: &TrainConfig,
    log: &mut TrainLog,
) -> Result<(Model, ParamStore<f32>), TrainError> {
    config.validate()?;
    if items.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyBatch));
    }
    let canvas = model_config.canvas;
    if let Some(bad) = items.iter().find(|i| i.cond.canvas() != canvas) {
        return Err(TrainError::Model(ModelError::Shape(format!(
            "pair {} is {:?}, model canvas is {:?}",
            bad.pair_id,
            bad.cond.canvas(),
            canvas
        ))));
    }
    let (mut model, mut ps) = Model::new::<f32>(model_config)?;
    let images: Vec<&Tensor<f32>> = items
        .iter()
        .flat_map(|i| [&i.target, &i.cond.style, &i.cond.background, &i.cond.masked])
        .collect();
    let recon = pretrain_vae(&model, &mut ps, &images, &config.vae, config.seed, log)?;
    log::info!("vae pretraining done: reconstruction mse {recon:.5}");
    let targets: Vec<&Tensor<f32>> = items.iter().map(|i| &i.target).collect();
    calibrate_latent_scale(&mut model, &ps, &targets);
    log::info!("latent scale {:.4}", model.latent_scale);
    Ok((model, ps))
}

/// [`prepare_model`] followed by [`train_diffusion`]. With `out_dir` the
/// log goes to `train_log.jsonl` and the final model to `final.ckpt`.
pub fn train(
    items: &[TrainItem<f32>],
    model_config: ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let hash = config_hash(&model_config, config, items);
    let mut log = match out_dir {
        Some(dir) => TrainLog::append_to(&dir.join("train_log.jsonl"))?,
        None => TrainLog::in_memory(),
    };
    let (model, ps) = prepare_model(items, model_config, config, &mut log)?;
    let outcome = train_diffusion(model, ps, items, config, hash, out_dir, &mut log)?;
    if let Some(dir) = out_dir {
        outcome.checkpoint(&config.schedule).save(&dir.join("final.ckpt"))?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.epochs, c.lambda), (2e-5, 6, 15, 0.01));
        assert!(c.validate().is_ok());
        assert!(TrainConfig {
            lambda: -1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }

    #[test]
    fn log_lines_are_tagged() {
        let r = LogRecord::Diffusion {
            step: 3,
            epoch: 0,
            l_d: 0.5,
            l_p: Some(2.0),
            loss: 0.52,
            lr: 2e-5,
            wallclock: 1.0,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.starts_with(r#"{"phase":"diffusion","step":3"#), "{s}");
        assert_eq!(serde_json::from_str::<LogRecord>(&s).unwrap(), r);
    }
}
