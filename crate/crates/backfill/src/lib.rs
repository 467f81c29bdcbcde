//! Second-stage orchestration: crop each detected region, erase its text,
//! generate the translated text image and composite it back.

pub mod composite;
pub mod crop;
pub mod erase;
pub mod generator;
pub mod pipeline;

use imtrans_core::raster::RasterError;
use imtrans_core::render::RenderError;
use imtrans_core::TextBox;
use thiserror::Error;

pub use composite::composite;
pub use crop::{crop_region, Crop};
pub use erase::{erase_text, CommandErase, EraseBackend, EraseMode, NaiveErase};
pub use generator::{DiffusionGenerator, RegionGenerator, RegionInputs};
pub use pipeline::{
    build_region_prompt, translate_image, Pipeline, PipelineConfig, RegionReport, RegionStatus, TranslateReport,
};

#[derive(Debug, Error)]
pub enum BackfillError {
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error("box {0:?} is empty after clipping to the image")]
    DegenerateBox(TextBox),
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("empty translation; nothing to render")]
    EmptyTranslation,
    #[error("erase backend: {0}")]
    Erase(String),
    #[error("generator: {0}")]
    Generate(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Render(#[from] RenderError),
}
