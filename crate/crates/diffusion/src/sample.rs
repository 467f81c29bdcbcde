use imtrans_core::Raster;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{tensor_to_raster, CondImages};
use crate::graph::Graph;
use crate::model::{Model, ModelError};
use crate::params::ParamStore;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Scalar, Tensor};

/// Standard-normal tensor from `rng`.
pub fn gaussian<F: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| F::of(StandardNormal.sample(rng))).collect())
}

/// Timesteps visited by a sampler using `count` of the schedule's steps,
/// descending, always ending at 0.
pub fn sampling_timesteps(schedule_steps: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, schedule_steps);
    let mut ts: Vec<usize> = (0..count).map(|i| i * schedule_steps / count).collect();
    ts.reverse();
    ts
}

/// One η = 0 DDIM update from step `t` to `prev` (`None` for the clean
/// sample), using ᾱ_t and ᾱ_prev only.
pub fn ddim_step<F: Scalar>(
    x_t: &Tensor<F>,
    eps: &Tensor<F>,
    schedule: &NoiseSchedule,
    t: usize,
    prev: Option<usize>,
) -> Result<Tensor<F>, ModelError> {
    if x_t.shape() != eps.shape() {
        return Err(ModelError::Shape(format!("{:?} vs {:?}", x_t.shape(), eps.shape())));
    }
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = match prev {
        Some(p) => schedule.alpha_bar(p)?,
        None => 1.0,
    };
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(x_t.zip(eps, |xi, ei| {
        let (xi, ei) = (xi.to_f64().unwrap(), ei.to_f64().unwrap());
        let x0 = (xi - sb * ei) / sa;
        F::of(pa * x0 + pb * ei)
    }))
}

/// Deterministic DDIM (η = 0) from pure noise, with the conditioning fixed
/// for every step. Returns the final latent.
pub fn sample_latent<F: Scalar>(
    model: &Model,
    ps: &ParamStore<F>,
    schedule: &NoiseSchedule,
    cond: &CondImages<F>,
    seed: u64,
    steps: Option<usize>,
) -> Result<Tensor<F>, ModelError> {
    let n = cond.len();
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if cond.canvas() != model.config.canvas {
        return Err(ModelError::Shape(format!(
            "inputs {:?} vs model canvas {:?}",
            cond.canvas(),
            model.config.canvas
        )));
    }
    let (c, h, w) = model.config.latent_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Tensor<F> = gaussian(&[n, c, h, w], &mut rng);
    let latents = model.encode_conditions(ps, cond);
    let ts = sampling_timesteps(schedule.steps(), steps.unwrap_or(schedule.steps()));
    for (k, &t) in ts.iter().enumerate() {
        let mut g = Graph::new();
        let (z_s, z_a) = model.conditioning(&mut g, ps, cond, Some(&latents));
        let xv = g.constant(x.clone());
        let e = model.predict_noise(&mut g, ps, xv, z_s, z_a, &vec![t; n], &cond.prompts);
        let eps = g.value(e);
        x = ddim_step(&x, eps, schedule, t, ts.get(k + 1).copied())?;
    }
    Ok(x)
}

/// [`sample_latent`] decoded through the VAE; one raster per item.
pub fn sample<F: Scalar>(
    model: &Model,
    ps: &ParamStore<F>,
    schedule: &NoiseSchedule,
    cond: &CondImages<F>,
    seed: u64,
    steps: Option<usize>,
) -> Result<Vec<Raster>, ModelError> {
    let z = sample_latent(model, ps, schedule, cond, seed, steps)?;
    let img = model.decode_tensor(ps, &z);
    Ok((0..cond.len()).map(|i| tensor_to_raster(&img, i)).collect())
}
