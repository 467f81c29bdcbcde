use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Batch, CondImages};
use crate::graph::{Graph, Var};
use crate::modules::{GlyphModule, StyleModule, UNet, UNetConfig};
use crate::params::ParamStore;
use crate::schedule::{q_sample, NoiseSchedule, ScheduleError};
use crate::tensor::{Scalar, Tensor};
use crate::vae::{Vae, VaeConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// (width, height) of the training canvas.
    pub canvas: (usize, usize),
    pub vae: VaeConfig,
    pub style_hidden: usize,
    pub glyph_map_hidden: usize,
    pub glyph_hidden: usize,
    pub unet: UNetConfig,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            canvas: (64, 64),
            vae: VaeConfig::default(),
            style_hidden: 32,
            glyph_map_hidden: 16,
            glyph_hidden: 32,
            unet: UNetConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let f = self.vae.factor() * 4;
        let (w, h) = self.canvas;
        if w == 0 || h == 0 || w % f != 0 || h % f != 0 {
            return Err(ModelError::Config(format!(
                "canvas {w}x{h} must be a positive multiple of {f}"
            )));
        }
        if self.vae.channels.is_empty() {
            return Err(ModelError::Config("vae needs at least one level".into()));
        }
        Ok(())
    }

    /// (channels, height, width) of the latent.
    pub fn latent_dims(&self) -> (usize, usize, usize) {
        let f = self.vae.factor();
        (self.vae.latent_channels, self.canvas.1 / f, self.canvas.0 / f)
    }
}

/// Parameter layout of the full model. Values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vae: Vae,
    pub style: StyleModule,
    pub glyph: GlyphModule,
    pub unet: UNet,
    /// Multiplier applied to VAE means so latents have roughly unit variance.
    pub latent_scale: f64,
}

/// Latents of the target image and of the VAE-encoded conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLatents<F> {
    pub style: Tensor<F>,
    pub background: Tensor<F>,
    pub masked: Tensor<F>,
}

impl<F: Scalar> CondLatents<F> {
    pub fn stack(items: &[&Self]) -> Self {
        let pick = |f: fn(&Self) -> &Tensor<F>| Tensor::stack(&items.iter().map(|i| f(i)).collect::<Vec<_>>());
        Self {
            style: pick(|i| &i.style),
            background: pick(|i| &i.background),
            masked: pick(|i| &i.masked),
        }
    }

    pub fn batch_slice(&self, start: usize, len: usize) -> Self {
        Self {
            style: self.style.batch_slice(start, len),
            background: self.background.batch_slice(start, len),
            masked: self.masked.batch_slice(start, len),
        }
    }
}

/// Graph handles of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l_d: Var,
    pub l_p: Option<Var>,
}

/// Per-item weighting of the glyph-region reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LpWeighting {
    Uniform,
    /// Weight ᾱ_t: x̂0 is only trusted where little noise was added.
    #[default]
    AlphaBar,
}

impl Model {
    pub fn new<F: Scalar>(config: ModelConfig) -> Result<(Self, ParamStore<F>), ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut ps = ParamStore::new();
        let vae = Vae::new(&mut ps, config.vae.clone(), &mut rng);
        let lc = config.vae.latent_channels;
        let levels = config.vae.channels.len();
        let style = StyleModule::new(&mut ps, lc, config.style_hidden, &mut rng);
        let glyph = GlyphModule::new(
            &mut ps,
            lc,
            levels,
            config.glyph_map_hidden,
            config.glyph_hidden,
            &mut rng,
        );
        let unet = UNet::new(&mut ps, 3 * lc, lc, config.unet.clone(), &mut rng);
        Ok((
            Self {
                config,
                vae,
                style,
                glyph,
                unet,
                latent_scale: 1.0,
            },
            ps,
        ))
    }

    /// D(x): scaled posterior mean.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> Var {
        let mu = self.vae.encode_mean(g, ps, x);
        g.scale(mu, F::of(self.latent_scale))
    }

    pub fn decode<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, z: Var) -> Var {
        let z = g.scale(z, F::of(1.0 / self.latent_scale));
        self.vae.decode(g, ps, z)
    }

    /// D(x) outside any training graph.
    pub fn encode_tensor<F: Scalar>(&self, ps: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let z = self.encode(&mut g, ps, v);
        g.value(z).clone()
    }

    pub fn decode_tensor<F: Scalar>(&self, ps: &ParamStore<F>, z: &Tensor<F>) -> Tensor<F> {
        let mut g = Graph::new();
        let v = g.constant(z.clone());
        let x = self.decode(&mut g, ps, v);
        g.value(x).clone()
    }

    pub fn encode_conditions<F: Scalar>(&self, ps: &ParamStore<F>, cond: &CondImages<F>) -> CondLatents<F> {
        CondLatents {
            style: self.encode_tensor(ps, &cond.style),
            background: self.encode_tensor(ps, &cond.background),
            masked: self.encode_tensor(ps, &cond.masked),
        }
    }

    /// Z_s = g(D(S) + D(B)).
    pub fn style_latent<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, d_s: Var, d_b: Var) -> Var {
        self.style.forward(g, ps, d_s, d_b)
    }

    /// Z_a = f(G(l_g) + P(l_p) + D(l_m)).
    pub fn glyph_latent<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, l_g: Var, l_p: Var, d_m: Var) -> Var {
        self.glyph.forward(g, ps, l_g, l_p, d_m)
    }

    /// Conditioning latents (Z_s, Z_a). With `latents` the VAE encodings are
    /// taken as constants; otherwise they are computed in the graph.
    pub fn conditioning<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        cond: &CondImages<F>,
        latents: Option<&CondLatents<F>>,
    ) -> (Var, Var) {
        let (d_s, d_b, d_m) = match latents {
            Some(l) => (
                g.constant(l.style.clone()),
                g.constant(l.background.clone()),
                g.constant(l.masked.clone()),
            ),
            None => {
                let s = g.constant(cond.style.clone());
                let b = g.constant(cond.background.clone());
                let m = g.constant(cond.masked.clone());
                (self.encode(g, ps, s), self.encode(g, ps, b), self.encode(g, ps, m))
            }
        };
        let z_s = self.style_latent(g, ps, d_s, d_b);
        let l_g = g.constant(cond.glyph.clone());
        let l_p = g.constant(cond.position.clone());
        let z_a = self.glyph_latent(g, ps, l_g, l_p, d_m);
        (z_s, z_a)
    }

    /// ε̂ = εθ(T_t, Z_s, Z_a, prompt, t).
    #[allow(clippy::too_many_arguments)]
    pub fn predict_noise<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        x_t: Var,
        z_s: Var,
        z_a: Var,
        t: &[usize],
        prompts: &[String],
    ) -> Var {
        let s = g.value(x_t).shape().to_vec();
        assert_eq!(g.value(z_s).shape(), &s[..], "Z_s not congruent with T_t");
        assert_eq!(g.value(z_a).shape(), &s[..], "Z_a not congruent with T_t");
        let x = g.concat(&[x_t, z_s, z_a]);
        let emb = self.unet.embed(g, ps, t, prompts);
        self.unet.forward(g, ps, x, emb)
    }

    /// L = L_d + λ·L_p for one batch with given timesteps and noise.
    ///
    /// L_d is the mean squared noise error. L_p is the squared error between
    /// the decoded x̂0 = (T_t − √(1−ᾱ)·ε̂)/√ᾱ and T inside l_p, divided by
    /// (mask pixels × channels). It is skipped when λ = 0.
    #[allow(clippy::too_many_arguments)]
    pub fn loss<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        batch: &Batch<F>,
        target_latent: &Tensor<F>,
        cond_latents: Option<&CondLatents<F>>,
        t: &[usize],
        eps: &Tensor<F>,
        schedule: &NoiseSchedule,
        lambda: f64,
        weighting: LpWeighting,
    ) -> Result<LossVars, ModelError> {
        let n = batch.len();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if t.len() != n {
            return Err(ModelError::Shape(format!("{} timesteps for {n} items", t.len())));
        }
        let x_t = q_sample(target_latent, t, eps, schedule)?;
        let (z_s, z_a) = self.conditioning(g, ps, &batch.cond, cond_latents);
        let x_t = g.constant(x_t);
        let eps_hat = self.predict_noise(g, ps, x_t, z_s, z_a, t, &batch.cond.prompts);
        let eps_v = g.constant(eps.clone());
        let l_d = g.mse(eps_hat, eps_v);
        if lambda == 0.0 {
            return Ok(LossVars {
                total: l_d,
                l_d,
                l_p: None,
            });
        }
        let abs: Vec<f64> = t.iter().map(|&s| schedule.alpha_bar(s)).collect::<Result<_, _>>()?;
        let neg_sigma: Vec<F> = abs.iter().map(|a| F::of(-(1.0 - a).sqrt())).collect();
        let inv_sqrt: Vec<F> = abs.iter().map(|a| F::of(1.0 / a.sqrt())).collect();
        let scaled = g.row_scale(eps_hat, neg_sigma);
        let diff = g.add(x_t, scaled);
        let x0 = g.row_scale(diff, inv_sqrt);
        let decoded = self.decode(g, ps, x0);
        let target = g.constant(batch.target.clone());
        let item_weights: Vec<f64> = match weighting {
            LpWeighting::Uniform => vec![1.0; n],
            LpWeighting::AlphaBar => abs.clone(),
        };
        let l_p = masked_sq_error(g, decoded, target, &batch.cond.position, &item_weights);
        let weighted = g.scale(l_p, F::of(lambda));
        let total = g.add(l_d, weighted);
        Ok(LossVars {
            total,
            l_d,
            l_p: Some(l_p),
        })
    }
}

/// Σ mask·wₙ·(pred − target)² / (mask pixels · channels) in the graph; the
/// mask (N×1×H×W) is broadcast over channels. An empty mask yields 0.
pub fn masked_sq_error<F: Scalar>(
    g: &mut Graph<F>,
    pred: Var,
    target: Var,
    mask: &Tensor<F>,
    item_weights: &[f64],
) -> Var {
    let (n, c, h, w) = g.value(pred).dims4();
    assert_eq!(mask.shape(), &[n, 1, h, w], "mask shape");
    let count = mask.sum().to_f64().unwrap_or(0.0);
    if count == 0.0 {
        log::warn!("glyph-region loss on an empty mask; contributing 0");
    }
    let mut weights = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        let m = &mask.data()[i * h * w..(i + 1) * h * w];
        for _ in 0..c {
            weights.extend(m.iter().map(|&v| v * F::of(item_weights[i])));
        }
    }
    let denom = F::of((count * c as f64).max(1.0));
    g.weighted_sq(pred, target, Some(weights), denom)
}

/// Tensor form of the glyph-region loss: Σ mask·(pred − target)² / (mask pixels · channels).
pub fn perceptual_loss<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>, mask: &Tensor<F>) -> Result<f64, ModelError> {
    if pred.shape() != target.shape() {
        return Err(ModelError::Shape(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (n, _, h, w) = pred.dims4();
    if mask.shape() != [n, 1, h, w] {
        return Err(ModelError::Shape(format!(
            "mask {:?} for {:?}",
            mask.shape(),
            pred.shape()
        )));
    }
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = masked_sq_error(&mut g, p, t, mask, &vec![1.0; n]);
    Ok(g.value(l).item().to_f64().unwrap_or(f64::NAN))
}

/// L = L_d + λ·L_p.
pub fn total_loss(l_d: f64, l_p: f64, lambda: f64) -> f64 {
    l_d + lambda * l_p
}

/// Mean squared difference between predicted and true noise.
pub fn noise_mse<F: Scalar>(eps_hat: &Tensor<F>, eps: &Tensor<F>) -> f64 {
    let s: f64 = eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(a, b)| (*a - *b).to_f64().unwrap().powi(2))
        .sum();
    s / eps.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_mse_hand_value() {
        let pred = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        let mut target = pred.clone();
        target.data_mut()[4 + 1] = 0.5; // channel 1, pixel 1
        let mask = Tensor::full(&[1, 1, 2, 2], 1.0);
        let l = perceptual_loss(&pred, &target, &mask).unwrap();
        assert!((l - 0.25 / 12.0).abs() < 1e-12);
        assert!((l - 0.02083).abs() < 1e-5);
        assert_eq!(perceptual_loss(&pred, &pred, &mask).unwrap(), 0.0);
        assert_eq!(
            perceptual_loss(&pred, &target, &Tensor::zeros(&[1, 1, 2, 2])).unwrap(),
            0.0
        );
    }

    #[test]
    fn total_loss_values() {
        assert_eq!(total_loss(0.5, 2.0, 0.0), 0.5);
        assert!((total_loss(0.5, 2.0, 0.01) - 0.52).abs() < 1e-15);
        assert!(total_loss(0.6, 2.0, 0.01) > total_loss(0.5, 2.0, 0.01));
        assert!(total_loss(0.5, 2.1, 0.01) > total_loss(0.5, 2.0, 0.01));
    }

    #[test]
    fn shapes_and_zero_output() {
        let cfg = ModelConfig {
            canvas: (32, 32),
            ..Default::default()
        };
        let (m, ps) = Model::new::<f32>(cfg).unwrap();
        let cond = CondImages {
            style: Tensor::zeros(&[2, 3, 32, 32]),
            background: Tensor::full(&[2, 3, 32, 32], 0.3),
            glyph: Tensor::zeros(&[2, 1, 32, 32]),
            position: Tensor::zeros(&[2, 1, 32, 32]),
            masked: Tensor::zeros(&[2, 3, 32, 32]),
            prompts: vec!["a".into(), "b".into()],
        };
        let mut g = Graph::new();
        let (zs, za) = m.conditioning(&mut g, &ps, &cond, None);
        assert_eq!(g.value(zs).shape(), &[2, 4, 4, 4]);
        assert_eq!(g.value(za).shape(), g.value(zs).shape());
        let x = g.constant(Tensor::full(&[2, 4, 4, 4], 0.7));
        let e = m.predict_noise(&mut g, &ps, x, zs, za, &[3, 50], &cond.prompts);
        assert_eq!(g.value(e).shape(), &[2, 4, 4, 4]);
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn canvas_must_divide() {
        let cfg = ModelConfig {
            canvas: (40, 32),
            ..Default::default()
        };
        assert!(Model::new::<f32>(cfg).is_err());
    }
}
