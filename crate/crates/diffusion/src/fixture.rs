//! The eight-pair 32×32 overfit fixture.

use imtrans_core::corpus::{builtin_texts, corpus_pair, BackgroundPool, CorpusConfig, CorpusError, LangPair};
use imtrans_core::font::FontSet;
use imtrans_core::ImagePair;

use imtrans_core::eval::masked_l1_distance;

use crate::checkpoint::Checkpoint;
use crate::data::TrainItem;
use crate::model::ModelConfig;
use crate::sample::sample;
use crate::schedule::NoiseSchedule;
use crate::train::{
    evaluate_l_d, prepare_model, train_diffusion, LatentCache, LrDecay, TrainConfig, TrainError, TrainLog,
    VaeTrainConfig,
};

pub const PAIRS: u64 = 8;
pub const CANVAS: (usize, usize) = (32, 32);
pub const SEED: u64 = 3;
pub const STEPS: usize = 500;

pub fn corpus_config() -> CorpusConfig {
    CorpusConfig {
        count: PAIRS,
        global_seed: SEED,
        canvas: CANVAS,
        langs: LangPair::new("en", "zh"),
        workers: 1,
    }
}

pub fn background_pool() -> BackgroundPool {
    BackgroundPool::procedural(4, 96, SEED)
}

pub fn pairs(fonts: &FontSet) -> Result<Vec<ImagePair>, CorpusError> {
    let cfg = corpus_config();
    let texts = builtin_texts(&cfg.langs).expect("built-in en-zh list");
    let pool = background_pool();
    (0..PAIRS).map(|i| corpus_pair(fonts, &texts, &pool, &cfg, i)).collect()
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        canvas: CANVAS,
        ..Default::default()
    }
}

/// Full-batch steps with a raised, cosine-decayed learning rate.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        lr_decay: LrDecay::Cosine,
        batch_size: PAIRS as usize,
        max_steps: Some(STEPS),
        checkpoint_every: 0,
        vae: VaeTrainConfig {
            learning_rate: 2e-3,
            steps: 600,
            batch_size: 8,
        },
        ..Default::default()
    }
}

/// Seed used when sampling the trained fixture.
pub const SAMPLE_SEED: u64 = 5;
/// Noise draws per item when estimating L_d before and after training.
const EVAL_DRAWS: usize = 20;
const EVAL_SEED: u64 = 99;

pub struct OverfitRun {
    pub pairs: Vec<ImagePair>,
    /// L_d on the fixture with a fixed noise set, before and after training.
    pub initial_l_d: f64,
    pub final_l_d: f64,
    pub steps: usize,
    /// Per item: L1 inside the text box between a sample and the target.
    pub masked_l1: Vec<f64>,
    /// Whether sampling twice with the same seed gave identical images.
    pub repeatable: bool,
    pub checkpoint: Checkpoint,
}

impl OverfitRun {
    pub fn mean_masked_l1(&self) -> f64 {
        self.masked_l1.iter().sum::<f64>() / self.masked_l1.len().max(1) as f64
    }
}

/// Trains on the fixture in memory and samples every item.
pub fn run_overfit(fonts: &FontSet) -> Result<OverfitRun, TrainError> {
    let pairs = pairs(fonts)?;
    let items: Vec<TrainItem<f32>> = pairs.iter().map(TrainItem::from_pair).collect();
    let cfg = train_config();
    let sched = NoiseSchedule::new(&cfg.schedule).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut log = TrainLog::in_memory();
    let (model, ps) = prepare_model(&items, model_config(), &cfg, &mut log)?;
    let cache = LatentCache::build(&model, &ps, &items);
    let initial_l_d = evaluate_l_d(&model, &ps, &items, &cache, &sched, EVAL_DRAWS, EVAL_SEED)?;
    let out = train_diffusion(model, ps, &items, &cfg, "fixture".into(), None, &mut log)?;
    let final_l_d = evaluate_l_d(&out.model, &out.params, &items, &cache, &sched, EVAL_DRAWS, EVAL_SEED)?;
    let mut masked_l1 = Vec::new();
    let mut repeatable = true;
    for (p, item) in pairs.iter().zip(&items) {
        let s = sample(&out.model, &out.params, &sched, &item.cond, SAMPLE_SEED, None)?;
        repeatable &= s == sample(&out.model, &out.params, &sched, &item.cond, SAMPLE_SEED, None)?;
        masked_l1
            .push(masked_l1_distance(&s[0], &p.target, &p.position).map_err(|e| TrainError::Config(e.to_string()))?);
    }
    Ok(OverfitRun {
        pairs,
        initial_l_d,
        final_l_d,
        steps: out.steps,
        masked_l1,
        repeatable,
        checkpoint: out.checkpoint(&cfg.schedule),
    })
}
