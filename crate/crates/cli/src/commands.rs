use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use imtrans_backfill::{
    translate_image, BackfillError, CommandErase, DiffusionGenerator, EraseBackend, NaiveErase, Pipeline,
    PipelineConfig, TranslateReport,
};
use imtrans_core::corpus::{
    builtin_texts, generate_corpus, read_parallel_texts, BackgroundPool, CorpusConfig, CorpusManifest, MANIFEST_FILE,
};
use imtrans_core::eval::{
    aggregate_rubric, evaluate_corpus, output_file_name, parse_rubric_rows, ComparisonTable, EvalReport,
};
use imtrans_core::font::FontSet;
use imtrans_core::stage1::{
    EdgeDetector, GroundTruthProvider, MockBackend, RegionProvider, RemoteBackend, TextRegion, TranslatorBackend,
};
use imtrans_core::Raster;
use imtrans_diffusion::data::TrainItem;
use imtrans_diffusion::train::load_corpus_items;
use imtrans_diffusion::{Checkpoint, NoiseSchedule, TrainError};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_langs, AppConfig, BackendKind};
use crate::error::{config, runtime, CliError};
use crate::{EvalArgs, GenCorpusArgs, InspectArgs, Outcome, SampleArgs, TrainArgs, TranslateArgs};

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    config: &'a AppConfig,
}

/// Writes `<dir>/<command>.run.json` with the effective configuration.
fn write_run_record(dir: &Path, command: &str, cfg: &AppConfig) -> Result<(), CliError> {
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&rec).map_err(runtime)?;
    write_atomic(&dir.join(format!("{command}.run.json")), json.as_bytes())
}

/// Writes through a temporary file in the same directory, so readers never
/// see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| runtime(format!("writing {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        runtime(format!("renaming {}: {e}", path.display()))
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("creating {}: {e}", dir.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(config(format!("{what} {} does not exist", path.display())))
    }
}

fn load_fonts(cfg: &AppConfig) -> Result<FontSet, CliError> {
    match &cfg.paths.fonts {
        None => Ok(FontSet::builtin()),
        Some(dir) => {
            require_dir(dir, "font directory")?;
            FontSet::from_dir(dir, cfg.paths.standard_font.as_deref()).map_err(|e| config(e.to_string()))
        }
    }
}

fn read_manifest(corpus: &Path) -> Result<CorpusManifest, CliError> {
    let path = corpus.join(MANIFEST_FILE);
    require_file(&path, "corpus manifest")?;
    CorpusManifest::read(&path).map_err(|e| config(e.to_string()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn gen_corpus(mut cfg: AppConfig, a: GenCorpusArgs) -> Result<Outcome, CliError> {
    if let Some(v) = a.count {
        cfg.corpus.count = v;
    }
    if let Some(v) = a.langs {
        cfg.corpus.langs = v;
    }
    if let Some(v) = a.canvas {
        cfg.corpus.canvas = v;
    }
    if let Some(v) = a.fonts {
        cfg.paths.fonts = Some(v);
    }
    if let Some(v) = a.backgrounds {
        cfg.paths.backgrounds = Some(v);
    }
    if let Some(v) = a.texts {
        cfg.paths.texts = Some(v);
    }
    if let Some(v) = a.out {
        cfg.paths.corpus = v;
    }
    cfg.validate()?;
    let langs = parse_langs(&cfg.corpus.langs)?;
    let fonts = load_fonts(&cfg)?;
    let texts = match &cfg.paths.texts {
        Some(p) => {
            require_file(p, "parallel text file")?;
            read_parallel_texts(p).map_err(|e| config(e.to_string()))?
        }
        None => {
            builtin_texts(&langs).ok_or_else(|| config(format!("no bundled texts for {langs}; set paths.texts")))?
        }
    };
    let pool = match &cfg.paths.backgrounds {
        Some(dir) => {
            require_dir(dir, "background directory")?;
            BackgroundPool::from_dir(dir).map_err(|e| config(e.to_string()))?
        }
        None => {
            let side = cfg.corpus.canvas.0.max(cfg.corpus.canvas.1) * 2;
            BackgroundPool::procedural(cfg.corpus.procedural_backgrounds.max(1), side, cfg.seed)
        }
    };
    let out = cfg.paths.corpus.clone();
    let ccfg = CorpusConfig {
        count: cfg.corpus.count,
        global_seed: cfg.seed,
        canvas: cfg.corpus.canvas,
        langs,
        workers: cfg.workers,
    };
    info!(
        "generating {} pairs into {} (config_hash={})",
        ccfg.count,
        out.display(),
        cfg.hash()
    );
    let start = Instant::now();
    let manifest = generate_corpus(&fonts, &texts, &pool, &ccfg, &out).map_err(runtime)?;
    let secs = start.elapsed().as_secs_f64();
    let rate = manifest.entries.len() as f64 / secs.max(1e-9);
    write_run_record(&out, "gen-corpus", &cfg)?;
    info!(
        "wrote {} pairs in {secs:.2}s ({rate:.1} pairs/s)",
        manifest.entries.len()
    );
    Ok(Outcome {
        path: out.join(MANIFEST_FILE),
        summary: Some(format!(
            "{} pairs in {secs:.2}s ({rate:.1} pairs/s)",
            manifest.entries.len()
        )),
    })
}

pub fn train(mut cfg: AppConfig, a: TrainArgs) -> Result<Outcome, CliError> {
    if let Some(v) = a.corpus {
        cfg.paths.corpus = v;
    }
    if let Some(v) = a.out {
        cfg.paths.checkpoints = v;
    }
    if let Some(v) = a.steps {
        cfg.train.max_steps = Some(v);
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.vae_steps {
        cfg.train.vae.steps = v;
    }
    let manifest = read_manifest(&cfg.paths.corpus)?;
    cfg.model.canvas = manifest.header.canvas;
    cfg.validate()?;
    if manifest.entries.is_empty() {
        return Err(config(format!("corpus {} has no pairs", cfg.paths.corpus.display())));
    }
    let items = load_corpus_items(&cfg.paths.corpus).map_err(runtime)?;
    let out = cfg.paths.checkpoints.clone();
    create_dir(&out)?;
    let log_path = out.join("train_log.jsonl");
    if log_path.exists() {
        fs::remove_file(&log_path).map_err(|e| runtime(format!("removing {}: {e}", log_path.display())))?;
    }
    info!(
        "training on {} pairs from {} (config_hash={})",
        items.len(),
        cfg.paths.corpus.display(),
        cfg.hash()
    );
    let outcome = imtrans_diffusion::train(&items, cfg.model.clone(), &cfg.train, Some(&out)).map_err(|e| match e {
        TrainError::Config(m) => config(m),
        e => runtime(e),
    })?;
    write_run_record(&out, "train", &cfg)?;
    let last = outcome.diffusion_losses().last().copied();
    Ok(Outcome {
        path: out.join("final.ckpt"),
        summary: Some(format!(
            "{} steps, final l_d {}, checkpoint hash {}",
            outcome.steps,
            last.map_or("n/a".into(), |v| format!("{v:.4}")),
            outcome.config_hash
        )),
    })
}

fn pair_seed(seed: u64, pair_id: u64) -> u64 {
    seed ^ pair_id.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn sample(mut cfg: AppConfig, a: SampleArgs) -> Result<Outcome, CliError> {
    if let Some(v) = a.checkpoint {
        cfg.sample.checkpoint = Some(v);
    }
    if let Some(v) = a.steps {
        cfg.sample.steps = Some(v);
    }
    if let Some(v) = a.corpus {
        cfg.paths.corpus = v;
    }
    if let Some(v) = a.out {
        cfg.paths.outputs = v;
    }
    cfg.validate()?;
    let manifest = read_manifest(&cfg.paths.corpus)?;
    let ckpt = load_checkpoint(&cfg.checkpoint_path())?;
    if ckpt.model.config.canvas != manifest.header.canvas {
        return Err(config(format!(
            "checkpoint canvas {:?} does not match corpus canvas {:?}",
            ckpt.model.config.canvas, manifest.header.canvas
        )));
    }
    let entries: Vec<_> = if a.pair_ids.is_empty() {
        manifest.entries.iter().collect()
    } else {
        a.pair_ids
            .iter()
            .map(|id| {
                manifest
                    .entries
                    .iter()
                    .find(|e| e.pair_id == *id)
                    .ok_or_else(|| config(format!("pair {id} is not in the manifest")))
            })
            .collect::<Result<_, _>>()?
    };
    let schedule = NoiseSchedule::new(&ckpt.schedule).map_err(|e| config(e.to_string()))?;
    let out = cfg.paths.outputs.clone();
    create_dir(&out)?;
    info!("sampling {} pairs (config_hash={})", entries.len(), cfg.hash());
    let steps = cfg.sample.steps;
    let written: Vec<PathBuf> = entries
        .par_iter()
        .map(|e| {
            let pair = manifest.load_pair(&cfg.paths.corpus, e).map_err(runtime)?;
            let item = TrainItem::<f32>::from_pair(&pair);
            let mut imgs = imtrans_diffusion::sample(
                &ckpt.model,
                &ckpt.params,
                &schedule,
                &item.cond,
                pair_seed(cfg.seed, e.pair_id),
                steps,
            )
            .map_err(runtime)?;
            let path = out.join(output_file_name(e.pair_id));
            write_atomic(&path, &imgs.remove(0).encode_png().map_err(runtime)?)?;
            Ok(path)
        })
        .collect::<Result<_, CliError>>()?;
    write_run_record(&out, "sample", &cfg)?;
    let path = if written.len() == 1 { written[0].clone() } else { out };
    Ok(Outcome {
        path,
        summary: Some(format!("{} images", written.len())),
    })
}

fn translator(cfg: &AppConfig) -> Result<Box<dyn TranslatorBackend>, CliError> {
    match cfg.translate.backend {
        BackendKind::Mock => {
            let mock = match &cfg.paths.mock_fixture {
                Some(p) => {
                    require_file(p, "mock fixture")?;
                    MockBackend::load(p).map_err(config)?
                }
                None => MockBackend::from_fixture(MockBackend::ambiguity_fixture()).map_err(config)?,
            };
            Ok(Box::new(mock))
        }
        BackendKind::Remote => {
            let rc = cfg
                .translate
                .remote
                .clone()
                .ok_or_else(|| config("translate.remote is required for the remote backend"))?;
            Ok(Box::new(RemoteBackend::new(rc).map_err(config)?))
        }
    }
}

fn eraser(cfg: &AppConfig) -> Result<Box<dyn EraseBackend>, CliError> {
    let e = &cfg.translate.erase;
    match e.mode.as_str() {
        "external" => {
            let program = e
                .program
                .clone()
                .ok_or_else(|| config("translate.erase.program is required for external erase"))?;
            Ok(Box::new(CommandErase {
                program,
                args: e.args.clone(),
            }))
        }
        _ => Ok(Box::new(NaiveErase::default())),
    }
}

pub fn translate(mut cfg: AppConfig, a: TranslateArgs) -> Result<Outcome, CliError> {
    if let Some(v) = a.langs {
        cfg.translate.langs = v;
    }
    if a.no_cot {
        cfg.translate.cot = false;
    }
    if let Some(v) = a.checkpoint {
        cfg.sample.checkpoint = Some(v);
    }
    if let Some(v) = a.steps {
        cfg.sample.steps = Some(v);
    }
    if let Some(v) = a.out {
        cfg.paths.outputs = v;
    }
    cfg.validate()?;
    let langs = parse_langs(&cfg.translate.langs)?;
    require_file(&a.image, "input image")?;
    let detector: Box<dyn RegionProvider> = match &a.regions {
        Some(p) => {
            require_file(p, "regions file")?;
            let text = fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
            let regions: Vec<TextRegion> =
                serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", p.display())))?;
            Box::new(GroundTruthProvider::new(regions))
        }
        None => Box::new(EdgeDetector::default()),
    };
    let stem = a
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_owned();
    let image_id = a.image_id.clone().unwrap_or_else(|| stem.clone());
    let pipeline = Pipeline {
        config: PipelineConfig {
            src_lang: langs.src.clone(),
            tgt_lang: langs.tgt.clone(),
            cot: cfg.translate.cot,
            pad_px: cfg.translate.pad_px,
            feather_px: cfg.translate.feather_px,
            seed: cfg.seed,
        },
        fonts: load_fonts(&cfg)?,
        detector,
        translator: translator(&cfg)?,
        eraser: eraser(&cfg)?,
        generator: Box::new(
            DiffusionGenerator::from_checkpoint(load_checkpoint(&cfg.checkpoint_path())?, cfg.sample.steps)
                .map_err(|e| config(e.to_string()))?,
        ),
    };
    let input = Raster::load(&a.image)
        .map_err(|e| runtime(format!("{}: {e}", a.image.display())))?
        .to_rgb();
    info!(
        "translating {} as {image_id:?} (config_hash={})",
        a.image.display(),
        cfg.hash()
    );
    let (output, report) = translate_image(&input, &image_id, &pipeline).map_err(|e| match e {
        BackfillError::Config(m) => config(m),
        e => runtime(e),
    })?;
    let out = cfg.paths.outputs.clone();
    create_dir(&out)?;
    let out_path = out.join(format!("{stem}.png"));
    if output == input {
        // nothing changed: keep the original bytes
        let bytes = fs::read(&a.image).map_err(|e| runtime(format!("{}: {e}", a.image.display())))?;
        write_atomic(&out_path, &bytes)?;
    } else {
        write_atomic(&out_path, &output.encode_png().map_err(runtime)?)?;
    }
    write_translate_report(&out.join(format!("{stem}.report.json")), &cfg, &report)?;
    write_run_record(&out, "translate", &cfg)?;
    Ok(Outcome {
        path: out_path,
        summary: Some(format!(
            "{} detected, {} translated, {} failed",
            report.detected, report.translated, report.failed
        )),
    })
}

fn write_translate_report(path: &Path, cfg: &AppConfig, report: &TranslateReport) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Doc<'a> {
        config_hash: String,
        seed: u64,
        #[serde(flatten)]
        report: &'a TranslateReport,
    }
    let json = serde_json::to_string_pretty(&Doc {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        report,
    })
    .map_err(runtime)?;
    write_atomic(path, json.as_bytes())
}

pub const REPORT_FILE: &str = "eval_report.json";
pub const TABLE_FILE: &str = "eval_table.md";

pub fn eval(cfg: AppConfig, a: EvalArgs) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let outputs = a.outputs.unwrap_or_else(|| cfg.paths.outputs.clone());
    let refs = a.refs.unwrap_or_else(|| cfg.paths.corpus.clone());
    require_dir(&outputs, "outputs directory")?;
    read_manifest(&refs)?;
    let mut report = evaluate_corpus(&outputs, &refs).map_err(runtime)?;
    if let Some(p) = &a.rubric {
        require_file(p, "rubric file")?;
        let text = fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
        let rows = parse_rubric_rows(&text).map_err(|e| config(format!("{}: {e}", p.display())))?;
        report.rubric = Some(aggregate_rubric(&rows).map_err(|e| config(format!("{}: {e}", p.display())))?);
    }
    if let Some(p) = &a.comet {
        require_file(p, "COMET score file")?;
        let text = fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
        report.comet = Some(
            text.trim()
                .parse()
                .map_err(|_| config(format!("{}: expected a number", p.display())))?,
        );
    }
    let out = a.out.unwrap_or(outputs);
    create_dir(&out)?;
    let mut table = ComparisonTable::published_baselines();
    table.add_reports(&a.system, std::slice::from_ref(&report));
    let report_path = out.join(REPORT_FILE);
    write_atomic(&report_path, report.to_json().as_bytes())?;
    write_atomic(&out.join(TABLE_FILE), table.to_markdown().as_bytes())?;
    write_run_record(&out, "eval", &cfg)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    Ok(Outcome {
        path: report_path,
        summary: Some(format!(
            "{} evaluated, {} failures, SSIM {}, L1 {}",
            report.evaluated,
            report.failures,
            fmt(report.mean_ssim),
            fmt(report.mean_l1)
        )),
    })
}

pub fn inspect(_cfg: AppConfig, a: InspectArgs) -> Result<Outcome, CliError> {
    let p = &a.path;
    if !p.exists() {
        return Err(config(format!("{} does not exist", p.display())));
    }
    let ext = p
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let summary = if p.is_dir() || ext == "jsonl" {
        let m = if p.is_dir() {
            read_manifest(p)?
        } else {
            CorpusManifest::read(p).map_err(|e| config(e.to_string()))?
        };
        serde_json::json!({
            "kind": "corpus",
            "pairs": m.entries.len(),
            "header": m.header,
        })
    } else if ext == "ckpt" {
        let c = load_checkpoint(p)?;
        serde_json::json!({
            "kind": "checkpoint",
            "config_hash": c.config_hash,
            "canvas": c.model.config.canvas,
            "schedule": c.schedule,
            "tensors": c.params.len(),
            "parameters": c.params.count(),
        })
    } else if ext == "png" {
        let r = Raster::load(p).map_err(runtime)?;
        serde_json::json!({ "kind": "image", "width": r.width(), "height": r.height(), "channels": r.channels() })
    } else if ext == "json" {
        let text = fs::read_to_string(p).map_err(runtime)?;
        match serde_json::from_str::<EvalReport>(&text) {
            Ok(r) => serde_json::json!({
                "kind": "eval_report",
                "direction": r.direction,
                "rows": r.rows.len(),
                "evaluated": r.evaluated,
                "failures": r.failures,
                "mean_ssim": r.mean_ssim,
                "mean_l1": r.mean_l1,
                "bleu": r.bleu.map(|b| b.score),
            }),
            Err(_) => {
                let v: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", p.display())))?;
                let keys: Vec<String> = v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default();
                serde_json::json!({ "kind": "json", "keys": keys })
            }
        }
    } else {
        return Err(config(format!("don't know how to inspect {}", p.display())));
    };
    Ok(Outcome {
        path: p.clone(),
        summary: Some(serde_json::to_string_pretty(&summary).map_err(runtime)?),
    })
}
