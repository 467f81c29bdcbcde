use std::time::Instant;

use imtrans_core::font::FontSet;
use imtrans_core::render::{make_masked_image, render_glyph, render_position_mask};
use imtrans_core::stage1::{
    detect_regions, translate_regions, RegionProvider, TextRegion, TranslateOptions, TranslatorBackend,
};
use imtrans_core::{Raster, TextBox};
use imtrans_diffusion::data::region_prompt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::composite;
use crate::crop::crop_region;
use crate::erase::{erase_text, EraseBackend};
use crate::generator::{RegionGenerator, RegionInputs};
use crate::BackfillError;

/// `Text "<y>" rendered on the image`, adapted to `tgt_lang`.
pub fn build_region_prompt(y: &str, tgt_lang: &str) -> Result<String, BackfillError> {
    if y.trim().is_empty() {
        return Err(BackfillError::EmptyTranslation);
    }
    Ok(region_prompt(y, tgt_lang))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub src_lang: String,
    pub tgt_lang: String,
    /// Chain-of-thought prompting in stage 1.
    pub cot: bool,
    pub pad_px: usize,
    pub feather_px: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            src_lang: "en".into(),
            tgt_lang: "zh".into(),
            cot: true,
            pad_px: 4,
            feather_px: 2,
            seed: 0,
        }
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub fonts: FontSet,
    pub detector: Box<dyn RegionProvider>,
    pub translator: Box<dyn TranslatorBackend>,
    pub eraser: Box<dyn EraseBackend>,
    pub generator: Box<dyn RegionGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RegionStatus {
    Ok,
    /// The region was left untranslated.
    Failed {
        stage: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    /// Position in reading order.
    pub index: usize,
    pub text_box: TextBox,
    pub source_text: String,
    pub translation: Option<String>,
    pub prompt: Option<String>,
    #[serde(flatten)]
    pub status: RegionStatus,
    pub erase_ms: f64,
    pub generate_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateReport {
    pub image_id: String,
    pub detected: usize,
    pub translated: usize,
    pub failed: usize,
    pub translate_ms: f64,
    pub total_ms: f64,
    pub regions: Vec<RegionReport>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn region_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `b` from a `from`-sized frame to a `to`-sized one, keeping at least
/// one pixel and staying inside the frame.
fn scale_box(b: &TextBox, from: (usize, usize), to: (usize, usize)) -> TextBox {
    let sx = to.0 as f64 / from.0 as f64;
    let sy = to.1 as f64 / from.1 as f64;
    let x0 = ((b.x as f64 * sx).floor() as i64).clamp(0, to.0 as i64 - 1);
    let y0 = ((b.y as f64 * sy).floor() as i64).clamp(0, to.1 as i64 - 1);
    let x1 = ((b.right() as f64 * sx).ceil() as i64).clamp(x0 + 1, to.0 as i64);
    let y1 = ((b.bottom() as f64 * sy).ceil() as i64).clamp(y0 + 1, to.1 as i64);
    TextBox::new(x0, y0, x1 - x0, y1 - y0)
}

fn box_mask(dims: (usize, usize), b: &TextBox) -> Raster {
    let mut m = Raster::new(dims.0, dims.1, 1);
    if let Some(c) = b.clip(dims.0, dims.1) {
        for y in c.y..c.bottom() {
            for x in c.x..c.right() {
                m.set(x as usize, y as usize, 0, 255);
            }
        }
    }
    m
}

struct Generated {
    patch: Raster,
    at: TextBox,
    prompt: String,
    erase_ms: f64,
    generate_ms: f64,
}

struct Failure {
    stage: &'static str,
    message: String,
    prompt: Option<String>,
}

fn fail(stage: &'static str) -> impl Fn(BackfillError) -> Failure {
    move |e| Failure {
        stage,
        message: e.to_string(),
        prompt: None,
    }
}

fn process_region(
    p: &Pipeline,
    image: &Raster,
    region: &TextRegion,
    y: &str,
    index: usize,
) -> Result<Generated, Failure> {
    let cfg = &p.config;
    let prompt = build_region_prompt(y, &cfg.tgt_lang).map_err(fail("prompt"))?;
    let crop = crop_region(image, &region.text_box, cfg.pad_px).map_err(fail("crop"))?;
    let t = Instant::now();
    let mask = box_mask(crop.image.dims(), &crop.inner_box);
    let erased = erase_text(&crop.image, &mask, p.eraser.as_ref()).map_err(fail("erase"))?;
    let erase_ms = ms(t);

    let t = Instant::now();
    let canvas = p.generator.canvas();
    let cbox = scale_box(&crop.inner_box, crop.image.dims(), canvas);
    let style = crop.image.resize_bilinear(canvas.0, canvas.1);
    let with_prompt = |e: BackfillError| Failure {
        stage: "generate",
        message: e.to_string(),
        prompt: Some(prompt.clone()),
    };
    let glyph = render_glyph(&p.fonts, y, &cbox, canvas).map_err(|e| with_prompt(e.into()))?;
    let position = render_position_mask(&cbox, canvas).map_err(|e| with_prompt(e.into()))?;
    let inputs = RegionInputs {
        masked: make_masked_image(&style, &cbox),
        background: erased.resize_bilinear(canvas.0, canvas.1),
        style,
        glyph,
        position,
        prompt: prompt.clone(),
    };
    let generated = p
        .generator
        .generate(&inputs, region_seed(cfg.seed, index))
        .map_err(with_prompt)?;
    let (cw, ch) = crop.image.dims();
    let back = generated.to_rgb().resize_bilinear(cw, ch);
    let patch = back.crop(&crop.inner_box).map_err(|e| with_prompt(e.into()))?;
    let at = TextBox::new(
        crop.paste_box.x + crop.inner_box.x,
        crop.paste_box.y + crop.inner_box.y,
        crop.inner_box.w,
        crop.inner_box.h,
    );
    Ok(Generated {
        patch,
        at,
        prompt,
        erase_ms,
        generate_ms: ms(t),
    })
}

/// Runs detection, stage-1 translation and per-region generation, then
/// composites the results in reading order. Region failures leave that
/// region untranslated; only configuration errors abort.
pub fn translate_image(
    image: &Raster,
    image_id: &str,
    p: &Pipeline,
) -> Result<(Raster, TranslateReport), BackfillError> {
    let start = Instant::now();
    let cfg = &p.config;
    if !p.translator.supports(&cfg.src_lang, &cfg.tgt_lang) {
        return Err(BackfillError::Config(format!(
            "translator {} does not support {}-{}",
            p.translator.id(),
            cfg.src_lang,
            cfg.tgt_lang
        )));
    }
    let canvas = p.generator.canvas();
    if canvas.0 == 0 || canvas.1 == 0 {
        return Err(BackfillError::Config(format!("generator canvas {canvas:?}")));
    }
    let mut regions = detect_regions(image, p.detector.as_ref());
    regions.sort_by(|a, b| TextBox::reading_order(&a.text_box, &b.text_box));
    let mut report = TranslateReport {
        image_id: image_id.to_owned(),
        detected: regions.len(),
        translated: 0,
        failed: 0,
        translate_ms: 0.0,
        total_ms: 0.0,
        regions: Vec::new(),
    };
    if regions.is_empty() {
        report.total_ms = ms(start);
        return Ok((image.clone(), report));
    }
    let rgb = image.to_rgb();
    let t = Instant::now();
    let opts = TranslateOptions {
        src_lang: cfg.src_lang.clone(),
        tgt_lang: cfg.tgt_lang.clone(),
        cot: cfg.cot,
    };
    let translations = translate_regions(&rgb, image_id, &regions, p.translator.as_ref(), &opts);
    report.translate_ms = ms(t);

    let results: Vec<Result<Generated, Failure>> = regions
        .par_iter()
        .zip(&translations)
        .enumerate()
        .map(|(i, (region, tr))| match tr {
            Ok(tr) => process_region(p, &rgb, region, &tr.translation, i),
            Err(e) => Err(Failure {
                stage: "translate",
                message: e.to_string(),
                prompt: None,
            }),
        })
        .collect();

    let mut out = rgb;
    for (i, ((region, tr), res)) in regions.iter().zip(&translations).zip(results).enumerate() {
        let translation = tr.as_ref().ok().map(|t| t.translation.clone());
        let mut rep = RegionReport {
            index: i,
            text_box: region.text_box,
            source_text: region.recognized_text.clone(),
            translation,
            prompt: None,
            status: RegionStatus::Ok,
            erase_ms: 0.0,
            generate_ms: 0.0,
        };
        let res = res.and_then(|g| match composite(&out, &g.patch, &g.at, cfg.feather_px) {
            Ok(next) => {
                out = next;
                Ok(g)
            }
            Err(e) => Err(Failure {
                stage: "composite",
                message: e.to_string(),
                prompt: Some(g.prompt),
            }),
        });
        match res {
            Ok(g) => {
                rep.prompt = Some(g.prompt);
                rep.erase_ms = g.erase_ms;
                rep.generate_ms = g.generate_ms;
                report.translated += 1;
            }
            Err(f) => {
                log::warn!("{image_id}: region {i} left untranslated ({}: {})", f.stage, f.message);
                rep.prompt = f.prompt;
                rep.status = RegionStatus::Failed {
                    stage: f.stage.to_owned(),
                    message: f.message,
                };
                report.failed += 1;
            }
        }
        report.regions.push(rep);
    }
    report.total_ms = ms(start);
    Ok((out, report))
}
