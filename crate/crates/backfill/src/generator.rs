use imtrans_core::Raster;
use imtrans_diffusion::data::CondImages;
use imtrans_diffusion::{Checkpoint, Model, NoiseSchedule, ParamStore};

use crate::BackfillError;

/// Conditioning for one region, already resized to the generator canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInputs {
    /// S^p, the cropped region used as the style image.
    pub style: Raster,
    /// S^b, the crop with its text erased.
    pub background: Raster,
    pub glyph: Raster,
    pub position: Raster,
    pub masked: Raster,
    pub prompt: String,
}

/// Produces T^p for one region.
pub trait RegionGenerator: Send + Sync {
    /// (width, height) the inputs must have.
    fn canvas(&self) -> (usize, usize);
    fn generate(&self, inputs: &RegionInputs, seed: u64) -> Result<Raster, BackfillError>;
}

/// Deterministic DDIM sampling from a trained checkpoint.
pub struct DiffusionGenerator {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub schedule: NoiseSchedule,
    /// Sampler steps; `None` uses every schedule step.
    pub steps: Option<usize>,
}

impl DiffusionGenerator {
    pub fn from_checkpoint(ckpt: Checkpoint, steps: Option<usize>) -> Result<Self, BackfillError> {
        let schedule = NoiseSchedule::new(&ckpt.schedule).map_err(|e| BackfillError::Config(e.to_string()))?;
        Ok(Self {
            model: ckpt.model,
            params: ckpt.params,
            schedule,
            steps,
        })
    }
}

impl RegionGenerator for DiffusionGenerator {
    fn canvas(&self) -> (usize, usize) {
        self.model.config.canvas
    }

    fn generate(&self, inputs: &RegionInputs, seed: u64) -> Result<Raster, BackfillError> {
        let canvas = self.canvas();
        for (name, r) in [
            ("style", &inputs.style),
            ("background", &inputs.background),
            ("glyph", &inputs.glyph),
        ]
        .into_iter()
        .chain([("position", &inputs.position), ("masked", &inputs.masked)])
        {
            if r.dims() != canvas {
                return Err(BackfillError::Dims(format!(
                    "{name} is {:?}, generator canvas {canvas:?}",
                    r.dims()
                )));
            }
        }
        let cond = CondImages::<f32>::from_rasters(
            &inputs.style,
            &inputs.background,
            &inputs.glyph,
            &inputs.position,
            &inputs.masked,
            &inputs.prompt,
        );
        let mut out = imtrans_diffusion::sample(&self.model, &self.params, &self.schedule, &cond, seed, self.steps)
            .map_err(|e| BackfillError::Generate(e.to_string()))?;
        Ok(out.remove(0))
    }
}
