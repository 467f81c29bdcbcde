//! First stage: locate text, ask a multimodal translator for a
//! scene-consistent translation of each region.

pub mod backend;
pub mod prompt;
pub mod region;
pub mod translate;

use thiserror::Error;

pub use backend::{
    BackendError, BackendMode, BackendRequest, MockBackend, MockScene, RemoteBackend, RemoteConfig, TranslatorBackend,
};
pub use prompt::{build_cot_prompt, build_prompt, parse_cot_response};
pub use region::{detect_regions, EdgeDetector, GroundTruthProvider, RegionProvider, TextRegion};
pub use translate::{translate_region, translate_regions, TranslateOptions, TranslationResult};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TranslateError {
    #[error("unsupported language pair {src}->{tgt}")]
    Unsupported { src: String, tgt: String },
    #[error("could not parse model response ({reason}): {raw:?}")]
    Parse { raw: String, reason: String },
    #[error("backend failed on region {region} after {attempts} attempt(s): {message}")]
    Backend {
        region: usize,
        retriable: bool,
        attempts: u32,
        message: String,
    },
}
