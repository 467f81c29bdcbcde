//! Central finite-difference checks of parameter gradients (64-bit).

use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Largest analytic gradient magnitude seen; guards against vacuous passes.
    pub max_abs_grad: f64,
}

/// |a − n| / max(|a|, |n|, floor).
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backprop gradients of `loss` against central differences for
/// up to `per_param` evenly spaced entries of every parameter whose name
/// starts with one of `prefixes`.
pub fn check_params<L>(ps: &ParamStore<f64>, prefixes: &[&str], per_param: usize, h: f64, loss: L) -> GradCheck
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Var,
{
    let mut g = Graph::new();
    let l = loss(&mut g, ps);
    let grads = g.backward(l);
    let eval = |p: &ParamStore<f64>| {
        let mut g = Graph::new();
        let v = loss(&mut g, p);
        g.value(v).item()
    };
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        max_abs_grad: 0.0,
    };
    let mut work = ps.clone();
    for id in 0..ps.len() {
        let name = ps.name(id);
        if !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let n = ps.get(id).len();
        let stride = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_param) {
            let analytic = grads.param(id).map(|t| t.data()[i]).unwrap_or(0.0);
            let orig = ps.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic, numeric, 1e-6);
            out.checked += 1;
            out.max_abs_grad = out.max_abs_grad.max(analytic.abs());
            if e > out.max_rel_err {
                out.max_rel_err = e;
                out.worst = Some((name.to_owned(), i));
            }
        }
    }
    out
}

/// Toy-shape checks of every trainable branch: 32×32 canvas, 4×4×2 latents,
/// narrow layers.
pub mod toy {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{check_params, GradCheck};
    use crate::data::{Batch, CondImages, TrainItem};
    use crate::model::{LpWeighting, Model, ModelConfig};
    use crate::modules::UNetConfig;
    use crate::params::{init_uniform, ParamStore};
    use crate::sample::gaussian;
    use crate::schedule::{NoiseSchedule, ScheduleConfig};
    use crate::tensor::Tensor;
    use crate::vae::VaeConfig;

    pub const H: f64 = 1e-5;
    pub const TOL: f64 = 1e-3;

    /// 32×32 canvas, 4×4×2 latents, narrow layers; the zero-initialized output
    /// conv is randomized so gradients reach every branch.
    pub fn toy() -> (Model, ParamStore<f64>) {
        let cfg = ModelConfig {
            canvas: (32, 32),
            vae: VaeConfig {
                latent_channels: 2,
                channels: vec![4, 4, 4],
                kl_weight: 0.1,
                ..Default::default()
            },
            style_hidden: 4,
            glyph_map_hidden: 4,
            glyph_hidden: 4,
            unet: UNetConfig {
                base: 8,
                mid: 8,
                emb_dim: 8,
                feature_dim: 8,
            },
            init_seed: 11,
        };
        let (mut m, mut ps) = Model::new::<f64>(cfg).unwrap();
        m.latent_scale = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for id in 0..ps.len() {
            if ps.name(id).starts_with("unet.out") {
                let shape = ps.get(id).shape().to_vec();
                *ps.get_mut(id) = init_uniform(&shape, 72, 1.0, &mut rng);
            }
        }
        (m, ps)
    }

    fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
    }

    pub fn toy_cond(n: usize) -> CondImages<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut position = Tensor::zeros(&[n, 1, 32, 32]);
        for i in 0..n {
            for y in 10..20 {
                for x in 6..26 {
                    position.data_mut()[i * 1024 + y * 32 + x] = 1.0;
                }
            }
        }
        CondImages {
            style: uniform(&[n, 3, 32, 32], -1.0, 1.0, &mut rng),
            background: uniform(&[n, 3, 32, 32], -1.0, 1.0, &mut rng),
            glyph: uniform(&[n, 1, 32, 32], 0.0, 1.0, &mut rng),
            position,
            masked: uniform(&[n, 3, 32, 32], -1.0, 1.0, &mut rng),
            prompts: (0..n)
                .map(|i| format!("Text \"河岸{i}\" rendered on the image"))
                .collect(),
        }
    }

    /// g in the style branch.
    pub fn style_fusion() -> GradCheck {
        let (m, ps) = toy();
        let cond = toy_cond(2);
        let r = check_params(&ps, &["style.g"], 6, H, |g, ps| {
            let s = g.constant(cond.style.clone());
            let b = g.constant(cond.background.clone());
            let ds = m.encode(g, ps, s);
            let db = m.encode(g, ps, b);
            let z = m.style_latent(g, ps, ds, db);
            let sq = g.mul(z, z);
            g.sum(sq)
        });
        r
    }

    /// f, G and P in the glyph branch.
    pub fn glyph_branch() -> GradCheck {
        let (m, ps) = toy();
        let cond = toy_cond(2);
        let r = check_params(&ps, &["glyph.f", "glyph.G", "glyph.P"], 5, H, |g, ps| {
            let lg = g.constant(cond.glyph.clone());
            let lp = g.constant(cond.position.clone());
            let lm = g.constant(cond.masked.clone());
            let dm = m.encode(g, ps, lm);
            let z = m.glyph_latent(g, ps, lg, lp, dm);
            let sq = g.mul(z, z);
            g.sum(sq)
        });
        r
    }

    fn full_loss_check(prefixes: &[&str], lambda: f64, cached: bool) -> GradCheck {
        let (m, ps) = toy();
        let cond = toy_cond(2);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let target = uniform(&[2, 3, 32, 32], -1.0, 1.0, &mut rng);
        let items: Vec<TrainItem<f64>> = (0..2)
            .map(|i| TrainItem {
                pair_id: i as u64,
                cond: CondImages {
                    style: cond.style.batch_slice(i, 1),
                    background: cond.background.batch_slice(i, 1),
                    glyph: cond.glyph.batch_slice(i, 1),
                    position: cond.position.batch_slice(i, 1),
                    masked: cond.masked.batch_slice(i, 1),
                    prompts: vec![cond.prompts[i].clone()],
                },
                target: target.batch_slice(i, 1),
            })
            .collect();
        let batch = Batch::collate(&items.iter().collect::<Vec<_>>());
        let sched = NoiseSchedule::new(&ScheduleConfig::default()).unwrap();
        let z0 = m.encode_tensor(&ps, &target);
        let latents = m.encode_conditions(&ps, &batch.cond);
        let eps: Tensor<f64> = gaussian(&[2, 2, 4, 4], &mut rng);
        let t = [5usize, 60];
        check_params(&ps, prefixes, 3, H, |g, ps| {
            let lat = cached.then_some(&latents);
            m.loss(g, ps, &batch, &z0, lat, &t, &eps, &sched, lambda, LpWeighting::AlphaBar)
                .unwrap()
                .total
        })
    }

    /// The noise predictor through L_d alone.
    pub fn denoiser() -> GradCheck {
        full_loss_check(&["unet."], 0.0, true)
    }

    /// Every parameter through L_d + 0.01·L_p, with the conditioning encoded
    /// inside the graph so the autoencoder is on the path.
    pub fn full_objective() -> GradCheck {
        full_loss_check(&["unet.", "style.", "glyph.", "vae."], 0.01, false)
    }

    /// The autoencoder's own reconstruction + KL loss.
    pub fn vae() -> GradCheck {
        let (m, ps) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = uniform(&[2, 3, 32, 32], -1.0, 1.0, &mut rng);
        let noise: Tensor<f64> = gaussian(&[2, 2, 4, 4], &mut rng);
        let r = check_params(&ps, &["vae."], 4, H, |g, ps| {
            let xv = g.constant(x.clone());
            let nv = g.constant(noise.clone());
            m.vae.loss(g, ps, xv, nv).0
        });
        r
    }

    /// All of the above, labelled.
    pub fn suite() -> Vec<(&'static str, GradCheck)> {
        vec![
            ("g", style_fusion()),
            ("f/G/P", glyph_branch()),
            ("eps_theta (L_d)", denoiser()),
            ("L = L_d + 0.01 L_p", full_objective()),
            ("vae", vae()),
        ]
    }
}
