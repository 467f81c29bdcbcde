//! Style-consistent pseudo-parallel image pairs and on-disk corpora.
//!
//! Every pair is a pure function of its seed. Corpus pair seeds are derived
//! from `(global_seed, pair_index)` so output does not depend on how many
//! workers produce it.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::font::FontSet;
use crate::geom::TextBox;
use crate::raster::{Raster, RasterError};
use crate::render::{self, RenderError, MASK_ON};
use crate::style::{self, StyleError, StyleSpec};

pub const DEFAULT_CANVAS: (usize, usize) = (64, 64);
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PAIRS_DIR: &str = "pairs";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("pair {pair_id}: {source}")]
    Render {
        pair_id: u64,
        #[source]
        source: RenderError,
    },
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("invalid input: {0}")]
    Input(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CorpusError {
    let context = context.into();
    move |source| CorpusError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub src: String,
    pub tgt: String,
}

impl TextPair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

/// Language direction such as `en-zh`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangPair {
    pub src: String,
    pub tgt: String,
}

impl LangPair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

impl std::str::FromStr for LangPair {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('-') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok(LangPair::new(a.to_lowercase(), b.to_lowercase())),
            _ => Err(CorpusError::Input(format!(
                "language pair {s:?} is not of the form src-tgt"
            ))),
        }
    }
}

impl std::fmt::Display for LangPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

/// One synthetic training sample with all its condition channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    /// Source-language rendering (S).
    pub source: Raster,
    /// Target-language rendering (T).
    pub target: Raster,
    /// Text-free background shared by both (B).
    pub background: Raster,
    /// Target text in the standard face, single channel (l_g).
    pub glyph: Raster,
    /// Binary text-box mask, single channel (l_p).
    pub position: Raster,
    /// Source with the text box filled (l_m).
    pub masked: Raster,
    pub text_box: TextBox,
    pub style: StyleSpec,
    pub src_text: String,
    pub tgt_text: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub pair_id: u64,
    pub seed: u64,
}

/// Stable 64-bit hash of `(global_seed, index)`.
pub fn pair_seed(global_seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"pair-seed");
    h.update(global_seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("sha256 has 32 bytes"))
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const STYLE_STREAM: u64 = 1;
const LAYOUT_STREAM: u64 = 2;
const SOURCE_STREAM: u64 = 3;
const FIT_ATTEMPTS: usize = 32;

/// Chooses a box large enough for the longer of the two texts at the style's
/// size, capped so the dilated box stays on the canvas.
fn layout_box(
    fonts: &FontSet,
    texts: [&str; 2],
    style: &StyleSpec,
    dims: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> TextBox {
    let margin = style.outline_px as i64 + render::BLEED_PX;
    let max_w = (dims.0 as i64 - 2 * margin).max(1);
    let max_h = (dims.1 as i64 - 2 * margin).max(1);
    let face = fonts.face(style.font_id).expect("validated style");
    let shear = if style.italic { render::ITALIC_SHEAR } else { 0.0 };
    let (r_sin, r_cos) = style.rotation_deg.to_radians().sin_cos();
    let mut need_w = 1.0f32;
    let mut need_h = 1.0f32;
    for text in texts {
        let cov = face.render_line(text, style.size_px as f32, fonts.fallback());
        let (w, h) = (cov.width as f32, cov.height as f32);
        let w_sheared = w + shear * h;
        need_w = need_w.max(w_sheared * r_cos.abs() + h * r_sin.abs());
        need_h = need_h.max(w_sheared * r_sin.abs() + h * r_cos.abs());
    }
    let jitter_w = rng.gen_range(0..=(dims.0 as i64 / 8).max(1));
    let jitter_h = rng.gen_range(0..=(dims.1 as i64 / 8).max(1));
    let w = (need_w.ceil() as i64 + jitter_w).clamp(1, max_w);
    let h = (need_h.ceil() as i64 + jitter_h).clamp(1, max_h);
    let x = margin.min(dims.0 as i64 - w) + rng.gen_range(0..=(max_w - w).max(0));
    let y = margin.min(dims.1 as i64 - h) + rng.gen_range(0..=(max_h - h).max(0));
    TextBox::new(x.max(0), y.max(0), w, h)
}

/// Builds a pair: one style drawn from `seed` renders `src_text` into S and
/// `tgt_text` into T over the same box of the same background.
pub fn make_pair(
    fonts: &FontSet,
    src_text: &str,
    tgt_text: &str,
    background: &Raster,
    seed: u64,
) -> Result<ImagePair, CorpusError> {
    make_pair_with_id(fonts, src_text, tgt_text, background, seed, 0)
}

fn make_pair_with_id(
    fonts: &FontSet,
    src_text: &str,
    tgt_text: &str,
    background: &Raster,
    seed: u64,
    pair_id: u64,
) -> Result<ImagePair, CorpusError> {
    let tag = |source| CorpusError::Render { pair_id, source };
    if src_text.trim().is_empty() || tgt_text.trim().is_empty() {
        return Err(tag(RenderError::EmptyText));
    }
    let background = background.to_rgb();
    let dims = background.dims();
    let style = style::sample_style(fonts, sub_seed(seed, STYLE_STREAM), dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, LAYOUT_STREAM));
    let text_box = layout_box(fonts, [src_text, tgt_text], &style, dims, &mut rng);

    let (source, _) = render::render_text(fonts, src_text, &style, &background, &text_box).map_err(tag)?;
    let (target, _) = render::render_text(fonts, tgt_text, &style, &background, &text_box).map_err(tag)?;
    let glyph = render::render_glyph(fonts, tgt_text, &text_box, dims).map_err(tag)?;
    let position = render::render_position_mask(&text_box, dims).map_err(tag)?;
    let masked = render::make_masked_image(&source, &text_box);
    Ok(ImagePair {
        source,
        target,
        background,
        glyph,
        position,
        masked,
        text_box,
        style,
        src_text: src_text.to_owned(),
        tgt_text: tgt_text.to_owned(),
        src_lang: String::new(),
        tgt_lang: String::new(),
        pair_id,
        seed,
    })
}

/// Checks every structural invariant of a pair. Returns a description of
/// the first violation.
pub fn check_pair_invariants(fonts: &FontSet, pair: &ImagePair) -> Result<(), String> {
    let dims = pair.background.dims();
    for (name, r, ch) in [
        ("source", &pair.source, 3),
        ("target", &pair.target, 3),
        ("masked", &pair.masked, 3),
        ("glyph", &pair.glyph, 1),
        ("position", &pair.position, 1),
    ] {
        if r.dims() != dims || r.channels() != ch {
            return Err(format!("{name} has shape {r:?}, expected {}x{}x{ch}", dims.0, dims.1));
        }
    }
    let dil = render::dilated_box(&pair.text_box, &pair.style);
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            let bg = pair.background.pixel(x, y);
            if !dil.contains(x as i64, y as i64) {
                if pair.source.pixel(x, y) != bg {
                    return Err(format!("source differs from background at ({x},{y})"));
                }
                if pair.target.pixel(x, y) != bg {
                    return Err(format!("target differs from background at ({x},{y})"));
                }
            }
            let inside = pair.text_box.contains(x as i64, y as i64);
            let lp = pair.position.get(x, y, 0);
            if lp != if inside { MASK_ON } else { 0 } {
                return Err(format!("position mask is {lp} at ({x},{y})"));
            }
            if !inside && pair.glyph.get(x, y, 0) != 255 {
                return Err(format!("glyph ink outside box at ({x},{y})"));
            }
        }
    }
    if pair.masked != render::make_masked_image(&pair.source, &pair.text_box) {
        return Err("masked image is not the source with the box filled".into());
    }
    let expected_glyph =
        render::render_glyph(fonts, &pair.tgt_text, &pair.text_box, dims).map_err(|e| e.to_string())?;
    if pair.glyph != expected_glyph {
        return Err("glyph image does not match a standard-face render of the target text".into());
    }
    if !pair.glyph.data().iter().any(|&v| v < 128) {
        return Err("glyph image has no dark ink".into());
    }
    Ok(())
}

/// Images that background crops are drawn from.
#[derive(Debug, Clone)]
pub struct BackgroundPool {
    images: Vec<Raster>,
}

impl BackgroundPool {
    pub fn new(images: Vec<Raster>) -> Result<Self, CorpusError> {
        if images.is_empty() {
            return Err(CorpusError::Input("background pool is empty".into()));
        }
        Ok(Self {
            images: images.into_iter().map(|r| r.to_rgb()).collect(),
        })
    }

    /// Loads every PNG/JPEG in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(format!("reading background directory {}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            })
            .collect();
        paths.sort();
        let images = paths.iter().map(|p| Raster::load(p)).collect::<Result<Vec<_>, _>>()?;
        if images.is_empty() {
            return Err(CorpusError::Input(format!("no background images in {}", dir.display())));
        }
        Self::new(images)
    }

    /// Smooth synthetic backgrounds: a two-color gradient plus a few
    /// low-frequency sinusoids per image.
    pub fn procedural(count: usize, size: usize, seed: u64) -> Self {
        let images = (0..count as u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(seed ^ 0xB6, i));
                let a: [f32; 3] = [
                    rng.gen_range(0.0..255.0),
                    rng.gen_range(0.0..255.0),
                    rng.gen_range(0.0..255.0),
                ];
                let b: [f32; 3] = [
                    rng.gen_range(0.0..255.0),
                    rng.gen_range(0.0..255.0),
                    rng.gen_range(0.0..255.0),
                ];
                let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                let waves: Vec<(f32, f32, f32, f32)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(0.5..2.5),
                            rng.gen_range(0.5..2.5),
                            rng.gen_range(0.0..std::f32::consts::TAU),
                            rng.gen_range(5.0..25.0),
                        )
                    })
                    .collect();
                let mut img = Raster::new(size, size, 3);
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
                        let t = (((u - 0.5) * angle.cos() + (v - 0.5) * angle.sin()) + 0.5).clamp(0.0, 1.0);
                        let wave: f32 = waves
                            .iter()
                            .map(|&(fx, fy, ph, amp)| amp * (std::f32::consts::TAU * (fx * u + fy * v) + ph).sin())
                            .sum();
                        for c in 0..3 {
                            let val = a[c] * (1.0 - t) + b[c] * t + wave;
                            img.set(x, y, c, val.round().clamp(0.0, 255.0) as u8);
                        }
                    }
                }
                img
            })
            .collect();
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Random crop of a randomly chosen image; images smaller than the
    /// canvas are upscaled first.
    pub fn crop(&self, dims: (usize, usize), rng: &mut impl Rng) -> Raster {
        let img = &self.images[rng.gen_range(0..self.images.len())];
        let img = if img.width() < dims.0 || img.height() < dims.1 {
            let s = (dims.0 as f32 / img.width() as f32).max(dims.1 as f32 / img.height() as f32);
            img.resize_bilinear(
                ((img.width() as f32 * s).ceil() as usize).max(dims.0),
                ((img.height() as f32 * s).ceil() as usize).max(dims.1),
            )
        } else {
            img.clone()
        };
        let x = rng.gen_range(0..=img.width() - dims.0);
        let y = rng.gen_range(0..=img.height() - dims.1);
        img.crop(&TextBox::new(x as i64, y as i64, dims.0 as i64, dims.1 as i64))
            .expect("crop inside image")
    }
}

/// Parses `src<TAB>tgt` lines. Blank lines and `#` comments are skipped.
pub fn parse_parallel_texts(content: &str) -> Result<Vec<TextPair>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((s, t)) if !s.trim().is_empty() && !t.trim().is_empty() => out.push(TextPair::new(s.trim(), t.trim())),
            _ => return Err(CorpusError::Input(format!("line {}: expected `src<TAB>tgt`", n + 1))),
        }
    }
    if out.is_empty() {
        return Err(CorpusError::Input("no parallel texts".into()));
    }
    Ok(out)
}

pub fn read_parallel_texts(path: &Path) -> Result<Vec<TextPair>, CorpusError> {
    let content = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    parse_parallel_texts(&content)
}

const EN_ZH: &[(&str, &str)] = &[
    ("Bank", "河岸"),
    ("Transfer", "中转"),
    ("Hot", "辣的"),
    ("Exit", "出口"),
    ("Open", "营业"),
    ("Closed", "关闭"),
    ("Sale", "促销"),
    ("Coffee", "咖啡"),
    ("Tea", "茶"),
    ("Hotel", "酒店"),
    ("Station", "车站"),
    ("Park", "公园"),
    ("Book", "书"),
    ("Water", "水"),
    ("Home", "家"),
    ("Shop", "商店"),
    ("Food", "食物"),
    ("Menu", "菜单"),
    ("Taxi", "出租车"),
    ("Bus", "公交"),
    ("Ticket", "车票"),
    ("Stop", "停"),
    ("Push", "推"),
    ("Pull", "拉"),
    ("Danger", "危险"),
    ("Welcome", "欢迎"),
    ("Museum", "博物馆"),
    ("School", "学校"),
    ("Market", "市场"),
    ("Bakery", "面包店"),
    ("Noodles", "面条"),
    ("Rice", "米饭"),
    ("Fresh", "新鲜"),
    ("River", "河"),
    ("Moon", "月亮"),
    ("Star", "星星"),
];

const EN_FR: &[(&str, &str)] = &[
    ("Bank", "Banque"),
    ("Exit", "Sortie"),
    ("Open", "Ouvert"),
    ("Closed", "Fermé"),
    ("Sale", "Soldes"),
    ("Coffee", "Café"),
    ("Tea", "Thé"),
    ("Hotel", "Hôtel"),
    ("Station", "Gare"),
    ("Park", "Parc"),
    ("Book", "Livre"),
    ("Water", "Eau"),
    ("Home", "Maison"),
    ("Shop", "Magasin"),
    ("Menu", "Menu"),
    ("Ticket", "Billet"),
    ("Stop", "Arrêt"),
    ("Push", "Poussez"),
    ("Pull", "Tirez"),
    ("Danger", "Danger"),
    ("Hello", "Bonjour"),
    ("Museum", "Musée"),
    ("School", "École"),
    ("Market", "Marché"),
    ("Bread", "Pain"),
    ("Moon", "Lune"),
    ("Star", "Étoile"),
    ("River", "Rivière"),
    ("Hot", "Chaud"),
];

/// Small bundled word lists for `en-zh`, `en-fr` and their reverses.
pub fn builtin_texts(langs: &LangPair) -> Option<Vec<TextPair>> {
    let (table, reverse) = match (langs.src.as_str(), langs.tgt.as_str()) {
        ("en", "zh") => (EN_ZH, false),
        ("zh", "en") => (EN_ZH, true),
        ("en", "fr") => (EN_FR, false),
        ("fr", "en") => (EN_FR, true),
        _ => return None,
    };
    Some(
        table
            .iter()
            .map(|&(a, b)| {
                if reverse {
                    TextPair::new(b, a)
                } else {
                    TextPair::new(a, b)
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterPaths {
    pub source: String,
    pub target: String,
    pub background: String,
    pub glyph: String,
    pub position: String,
    pub masked: String,
}

impl RasterPaths {
    fn for_pair(pair_id: u64) -> Self {
        let p = |tag: &str| format!("{PAIRS_DIR}/{pair_id:06}_{tag}.png");
        Self {
            source: p("S"),
            target: p("T"),
            background: p("B"),
            glyph: p("lg"),
            position: p("lp"),
            masked: p("lm"),
        }
    }

    pub fn all(&self) -> [&str; 6] {
        [
            &self.source,
            &self.target,
            &self.background,
            &self.glyph,
            &self.position,
            &self.masked,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: u64,
    pub paths: RasterPaths,
    pub src_text: String,
    pub tgt_text: String,
    pub text_box: TextBox,
    pub style: StyleSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub global_seed: u64,
    pub langs: LangPair,
    pub count: u64,
    pub canvas: (usize, usize),
    pub fonts: Vec<String>,
    /// Hash of the generation configuration, recorded for reproducibility.
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Header(ManifestHeader),
    Pair(ManifestEntry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let f = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
        let mut w = BufWriter::new(f);
        let mut line = |l: &ManifestLine| -> Result<(), CorpusError> {
            let s = serde_json::to_string(l).map_err(|e| CorpusError::Manifest {
                path: path.to_owned(),
                reason: e.to_string(),
            })?;
            writeln!(w, "{s}").map_err(io_err(format!("writing {}", path.display())))
        };
        line(&ManifestLine::Header(self.header.clone()))?;
        for e in &self.entries {
            line(&ManifestLine::Pair(e.clone()))?;
        }
        w.flush().map_err(io_err(format!("writing {}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let f = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
        let mut header = None;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(format!("reading {}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| CorpusError::Manifest {
                path: path.to_owned(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            match parsed {
                ManifestLine::Header(h) if header.is_none() => header = Some(h),
                ManifestLine::Header(_) => {
                    return Err(CorpusError::Manifest {
                        path: path.to_owned(),
                        reason: "duplicate header".into(),
                    })
                }
                ManifestLine::Pair(e) => entries.push(e),
            }
        }
        let header = header.ok_or_else(|| CorpusError::Manifest {
            path: path.to_owned(),
            reason: "missing header".into(),
        })?;
        Ok(Self { header, entries })
    }

    /// Loads the rasters of one entry; `root` is the corpus directory.
    pub fn load_pair(&self, root: &Path, entry: &ManifestEntry) -> Result<ImagePair, CorpusError> {
        let load = |rel: &str, channels: usize| -> Result<Raster, CorpusError> {
            let p = root.join(rel);
            if !p.is_file() {
                return Err(CorpusError::Manifest {
                    path: root.join(MANIFEST_FILE),
                    reason: format!("pair {} is missing channel file {}", entry.pair_id, p.display()),
                });
            }
            let r = Raster::load(&p)?;
            Ok(if channels == 1 { r.to_gray() } else { r.to_rgb() })
        };
        Ok(ImagePair {
            source: load(&entry.paths.source, 3)?,
            target: load(&entry.paths.target, 3)?,
            background: load(&entry.paths.background, 3)?,
            glyph: load(&entry.paths.glyph, 1)?,
            position: load(&entry.paths.position, 1)?,
            masked: load(&entry.paths.masked, 3)?,
            text_box: entry.text_box,
            style: entry.style.clone(),
            src_text: entry.src_text.clone(),
            tgt_text: entry.tgt_text.clone(),
            src_lang: self.header.langs.src.clone(),
            tgt_lang: self.header.langs.tgt.clone(),
            pair_id: entry.pair_id,
            seed: entry.seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub count: u64,
    pub global_seed: u64,
    pub canvas: (usize, usize),
    pub langs: LangPair,
    /// Rayon threads; output is identical for any value.
    pub workers: usize,
}

impl CorpusConfig {
    pub fn hash(&self, fonts: &FontSet, texts: &[TextPair], pool: &BackgroundPool) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "{}|{}|{:?}|{}",
            self.count, self.global_seed, self.canvas, self.langs
        ));
        for n in fonts.names() {
            h.update(n.as_bytes());
        }
        for t in texts {
            h.update(t.src.as_bytes());
            h.update([0]);
            h.update(t.tgt.as_bytes());
            h.update([1]);
        }
        for img in &pool.images {
            h.update(img.data());
        }
        let d = h.finalize();
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Generates a single corpus pair exactly as [`generate_corpus`] would.
pub fn corpus_pair(
    fonts: &FontSet,
    texts: &[TextPair],
    pool: &BackgroundPool,
    cfg: &CorpusConfig,
    index: u64,
) -> Result<ImagePair, CorpusError> {
    let seed = pair_seed(cfg.global_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SOURCE_STREAM));
    let mut attempt = 0;
    let mut pair = loop {
        let text = &texts[rng.gen_range(0..texts.len())];
        let background = pool.crop(cfg.canvas, &mut rng);
        match make_pair_with_id(fonts, &text.src, &text.tgt, &background, seed, index) {
            // small canvases: redraw the text when it cannot fit
            Err(CorpusError::Render {
                source: RenderError::TooLarge { .. },
                ..
            }) if attempt + 1 < FIT_ATTEMPTS => attempt += 1,
            other => break other?,
        }
    };
    pair.src_lang = cfg.langs.src.clone();
    pair.tgt_lang = cfg.langs.tgt.clone();
    Ok(pair)
}

fn write_pair(out: &Path, pair: &ImagePair) -> Result<ManifestEntry, CorpusError> {
    let paths = RasterPaths::for_pair(pair.pair_id);
    let rasters = [
        &pair.source,
        &pair.target,
        &pair.background,
        &pair.glyph,
        &pair.position,
        &pair.masked,
    ];
    for (rel, r) in paths.all().into_iter().zip(rasters) {
        r.save_png(&out.join(rel))?;
    }
    Ok(ManifestEntry {
        pair_id: pair.pair_id,
        paths,
        src_text: pair.src_text.clone(),
        tgt_text: pair.tgt_text.clone(),
        text_box: pair.text_box,
        style: pair.style.clone(),
        seed: pair.seed,
    })
}

fn remove_partial(out: &Path, count: u64) {
    for id in 0..count {
        for rel in RasterPaths::for_pair(id).all() {
            let _ = fs::remove_file(out.join(rel));
        }
    }
    let _ = fs::remove_file(out.join(MANIFEST_FILE));
}

/// Writes `cfg.count` pairs and `manifest.jsonl` under `out`. On failure the
/// files written so far are removed.
pub fn generate_corpus(
    fonts: &FontSet,
    texts: &[TextPair],
    pool: &BackgroundPool,
    cfg: &CorpusConfig,
    out: &Path,
) -> Result<CorpusManifest, CorpusError> {
    if texts.is_empty() {
        return Err(CorpusError::Input("parallel text list is empty".into()));
    }
    if fonts.is_empty() {
        return Err(StyleError::NoFonts.into());
    }
    fs::create_dir_all(out.join(PAIRS_DIR)).map_err(io_err(format!("creating {}", out.display())))?;
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| CorpusError::Input(format!("thread pool: {e}")))?;
    let result: Result<Vec<ManifestEntry>, CorpusError> = threads.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let pair = corpus_pair(fonts, texts, pool, cfg, i)?;
                write_pair(out, &pair)
            })
            .collect()
    });
    let entries = match result {
        Ok(e) => e,
        Err(e) => {
            remove_partial(out, cfg.count);
            return Err(e);
        }
    };
    let manifest = CorpusManifest {
        header: ManifestHeader {
            global_seed: cfg.global_seed,
            langs: cfg.langs.clone(),
            count: cfg.count,
            canvas: cfg.canvas,
            fonts: fonts.names().map(str::to_owned).collect(),
            config_hash: cfg.hash(fonts, texts, pool),
        },
        entries,
    };
    if let Err(e) = manifest.write(&out.join(MANIFEST_FILE)) {
        remove_partial(out, cfg.count);
        return Err(e);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg() -> Raster {
        BackgroundPool::procedural(1, 64, 3).crop((64, 64), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn pair_satisfies_invariants() {
        let fonts = FontSet::builtin();
        let pair = make_pair(&fonts, "Bank", "河岸", &bg(), 42).unwrap();
        check_pair_invariants(&fonts, &pair).unwrap();
        assert_ne!(pair.source, pair.background);
        assert_ne!(pair.target, pair.background);
        assert_ne!(pair.source, pair.target);
    }

    #[test]
    fn pair_is_seed_deterministic() {
        let fonts = FontSet::builtin();
        let a = make_pair(&fonts, "Transfer", "中转", &bg(), 9).unwrap();
        let b = make_pair(&fonts, "Transfer", "中转", &bg(), 9).unwrap();
        assert_eq!(a, b);
        let c = make_pair(&fonts, "Transfer", "中转", &bg(), 10).unwrap();
        assert_ne!(a.source, c.source);
    }

    #[test]
    fn empty_text_is_error_tagged_with_pair() {
        let fonts = FontSet::builtin();
        let err = make_pair(&fonts, "", "x", &bg(), 1).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Render {
                pair_id: 0,
                source: RenderError::EmptyText
            }
        ));
    }

    #[test]
    fn pair_seed_is_stable() {
        assert_eq!(pair_seed(1, 0), pair_seed(1, 0));
        assert_ne!(pair_seed(1, 0), pair_seed(1, 1));
        assert_ne!(pair_seed(1, 0), pair_seed(2, 0));
    }

    #[test]
    fn parallel_text_parsing() {
        let t = parse_parallel_texts("# c\nBank\t河岸\n\nHot\t辣的\r\n").unwrap();
        assert_eq!(t, vec![TextPair::new("Bank", "河岸"), TextPair::new("Hot", "辣的")]);
        assert!(parse_parallel_texts("no tab here").is_err());
        assert!(parse_parallel_texts("\n").is_err());
    }

    #[test]
    fn lang_pair_parse() {
        let l: LangPair = "en-zh".parse().unwrap();
        assert_eq!(l, LangPair::new("en", "zh"));
        assert_eq!(l.to_string(), "en-zh");
        assert!("enzh".parse::<LangPair>().is_err());
        assert!(builtin_texts(&"zh-en".parse().unwrap()).unwrap()[0].src == "河岸");
    }

    #[test]
    fn small_canvas_crop_upscales() {
        let pool = BackgroundPool::new(vec![Raster::filled(8, 8, &[1, 2, 3])]).unwrap();
        let c = pool.crop((32, 16), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(c.dims(), (32, 16));
    }
}
