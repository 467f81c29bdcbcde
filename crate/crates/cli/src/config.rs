//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use imtrans_core::stage1::RemoteConfig;
use imtrans_core::LangPair;
use imtrans_diffusion::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Seed for corpus generation, sampling and translation.
    pub seed: u64,
    /// Rayon worker threads. Outputs do not depend on it.
    pub workers: usize,
    pub paths: PathsConfig,
    pub corpus: CorpusSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub translate: TranslateSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            paths: PathsConfig::default(),
            corpus: CorpusSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sample: SampleSection::default(),
            translate: TranslateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of .ttf/.otf files; the built-in stroke faces when unset.
    pub fonts: Option<PathBuf>,
    /// File stem of the face used for glyph images.
    pub standard_font: Option<String>,
    /// Directory of background photos; procedural backgrounds when unset.
    pub backgrounds: Option<PathBuf>,
    /// Tab-separated parallel texts; the bundled list when unset.
    pub texts: Option<PathBuf>,
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
    /// JSON fixture for the mock translator; the ambiguity fixture when unset.
    pub mock_fixture: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            fonts: None,
            standard_font: None,
            backgrounds: None,
            texts: None,
            corpus: "corpus".into(),
            checkpoints: "checkpoints".into(),
            outputs: "outputs".into(),
            mock_fixture: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub count: u64,
    pub langs: String,
    pub canvas: (usize, usize),
    /// Number of procedural backgrounds when no directory is given.
    pub procedural_backgrounds: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            count: 200,
            langs: "en-zh".into(),
            canvas: (64, 64),
            procedural_backgrounds: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// Checkpoint to sample from; `<checkpoints>/final.ckpt` when unset.
    pub checkpoint: Option<PathBuf>,
    /// DDIM steps; every schedule step when unset.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EraseSection {
    /// `naive` or `external`.
    pub mode: String,
    /// External program, called as `program args.. crop.png mask.png out.png`.
    pub program: Option<PathBuf>,
    pub args: Vec<String>,
}

impl Default for EraseSection {
    fn default() -> Self {
        Self {
            mode: "naive".into(),
            program: None,
            args: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateSection {
    pub langs: String,
    pub cot: bool,
    pub pad_px: usize,
    pub feather_px: usize,
    pub backend: BackendKind,
    pub remote: Option<RemoteConfig>,
    pub erase: EraseSection,
}

impl Default for TranslateSection {
    fn default() -> Self {
        Self {
            langs: "en-zh".into(),
            cot: true,
            pad_px: 4,
            feather_px: 2,
            backend: BackendKind::Mock,
            remote: None,
            erase: EraseSection::default(),
        }
    }
}

impl AppConfig {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text =
            std::fs::read_to_string(path).map_err(|e| config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(json.as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.workers == 0 {
            return Err(config("workers must be >= 1"));
        }
        let (w, h) = self.corpus.canvas;
        if w == 0 || h == 0 {
            return Err(config("corpus.canvas must be nonzero"));
        }
        parse_langs(&self.corpus.langs)?;
        parse_langs(&self.translate.langs)?;
        if !matches!(self.translate.erase.mode.as_str(), "naive" | "external") {
            return Err(config(format!(
                "translate.erase.mode must be naive or external, got {:?}",
                self.translate.erase.mode
            )));
        }
        self.train.validate().map_err(|e| config(e.to_string()))?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.sample
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.checkpoints.join("final.ckpt"))
    }
}

pub fn parse_langs(s: &str) -> Result<LangPair, CliError> {
    s.parse::<LangPair>().map_err(|e| config(e.to_string()))
}

/// `64x64` → (64, 64).
pub fn parse_canvas(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("canvas {s:?} must be nonzero"));
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = AppConfig::parse("seed = 7\n[corpus]\ncount = 5\n[train]\nbatch_size = 2\n[model.unet]\nbase = 8\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.corpus.count, 5);
        assert_eq!(c.corpus.langs, "en-zh");
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.train.lambda, 0.01);
        assert_eq!(c.model.unet.base, 8);
        assert_eq!(c.model.unet.mid, ModelConfig::default().unet.mid);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::parse("sed = 1").is_err());
        assert!(AppConfig::parse("[paths]\nfont = \"x\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = AppConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn canvas_parsing() {
        assert_eq!(parse_canvas("32x48"), Ok((32, 48)));
        assert!(parse_canvas("0x4").is_err());
        assert!(parse_canvas("32").is_err());
    }
}
