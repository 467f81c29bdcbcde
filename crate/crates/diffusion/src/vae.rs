use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::layers::Conv2d;
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaeKind {
    /// Learned convolutional encoder/decoder.
    Conv,
    /// Fixed invertible pixel rearrangement; latent has `3·f²` channels.
    SpaceToDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub kind: VaeKind,
    pub in_channels: usize,
    pub latent_channels: usize,
    /// Channel width per downsampling level; the spatial factor is 2^len.
    pub channels: Vec<usize>,
    pub kl_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            kind: VaeKind::Conv,
            in_channels: 3,
            latent_channels: 4,
            channels: vec![16, 32, 32],
            kl_weight: 1e-6,
        }
    }
}

impl VaeConfig {
    pub fn space_to_depth(factor_log2: usize) -> Self {
        let f = 1 << factor_log2;
        Self {
            kind: VaeKind::SpaceToDepth,
            in_channels: 3,
            latent_channels: 3 * f * f,
            channels: vec![0; factor_log2],
            kl_weight: 0.0,
        }
    }

    pub fn factor(&self) -> usize {
        1 << self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub config: VaeConfig,
    enc_in: Option<Conv2d>,
    enc_down: Vec<Conv2d>,
    enc_out: Option<Conv2d>,
    dec_in: Option<Conv2d>,
    dec_up: Vec<Conv2d>,
    dec_out: Option<Conv2d>,
}

impl Vae {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, config: VaeConfig, rng: &mut ChaCha8Rng) -> Self {
        if config.kind == VaeKind::SpaceToDepth {
            return Self {
                config,
                enc_in: None,
                enc_down: vec![],
                enc_out: None,
                dec_in: None,
                dec_up: vec![],
                dec_out: None,
            };
        }
        let ch = &config.channels;
        let lc = config.latent_channels;
        let enc_in = Conv2d::new(ps, "vae.enc.in", config.in_channels, ch[0], 3, 1, rng);
        let mut enc_down = Vec::new();
        for i in 0..ch.len() {
            let next = ch[(i + 1).min(ch.len() - 1)];
            enc_down.push(Conv2d::new(ps, &format!("vae.enc.down{i}"), ch[i], next, 3, 2, rng));
        }
        let top = *ch.last().expect("at least one level");
        let enc_out = Conv2d::new(ps, "vae.enc.out", top, 2 * lc, 3, 1, rng);
        let dec_in = Conv2d::new(ps, "vae.dec.in", lc, top, 3, 1, rng);
        let mut dec_up = Vec::new();
        for i in (0..ch.len()).rev() {
            let from = ch[(i + 1).min(ch.len() - 1)];
            dec_up.push(Conv2d::new(ps, &format!("vae.dec.up{i}"), from, ch[i], 3, 1, rng));
        }
        let dec_out = Conv2d::new(ps, "vae.dec.out", ch[0], config.in_channels, 3, 1, rng);
        Self {
            config,
            enc_in: Some(enc_in),
            enc_down,
            enc_out: Some(enc_out),
            dec_in: Some(dec_in),
            dec_up,
            dec_out: Some(dec_out),
        }
    }

    pub fn factor(&self) -> usize {
        self.config.factor()
    }

    /// Posterior mean and log-variance. The space-to-depth variant returns
    /// an exact rearrangement and a zero log-variance.
    pub fn encode<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> (Var, Var) {
        if self.config.kind == VaeKind::SpaceToDepth {
            let z = g.space_to_depth(x, self.factor());
            let zero = g.scale(z, F::zero());
            return (z, zero);
        }
        let mut h = self.enc_in.expect("conv vae").forward(g, ps, x);
        h = g.silu(h);
        for c in &self.enc_down {
            h = c.forward(g, ps, h);
            h = g.silu(h);
        }
        let out = self.enc_out.expect("conv vae").forward(g, ps, h);
        let lc = self.config.latent_channels;
        let mu = g.slice_channels(out, 0, lc);
        let logvar = g.slice_channels(out, lc, lc);
        (mu, logvar)
    }

    pub fn encode_mean<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> Var {
        self.encode(g, ps, x).0
    }

    pub fn decode<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, z: Var) -> Var {
        if self.config.kind == VaeKind::SpaceToDepth {
            return g.depth_to_space(z, self.factor());
        }
        let mut h = self.dec_in.expect("conv vae").forward(g, ps, z);
        h = g.silu(h);
        for c in &self.dec_up {
            h = g.upsample2(h);
            h = c.forward(g, ps, h);
            h = g.silu(h);
        }
        self.dec_out.expect("conv vae").forward(g, ps, h)
    }

    /// Reconstruction MSE plus weighted KL, using the reparameterized sample
    /// `z = μ + exp(½·logvar)·noise`. Returns (total, reconstruction, KL + ½):
    /// the KL term omits its constant −½.
    pub fn loss<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var, noise: Var) -> (Var, Var, Var) {
        let (mu, logvar) = self.encode(g, ps, x);
        let half = g.scale(logvar, F::of(0.5));
        let std = g.exp(half);
        let eps = g.mul(std, noise);
        let z = g.add(mu, eps);
        let recon = self.decode(g, ps, z);
        let rec = g.mse(recon, x);
        let mu2 = g.mul(mu, mu);
        let var = g.exp(logvar);
        let a = g.add(mu2, var);
        let b = g.sub(a, logvar);
        let m = g.mean(b);
        let kl = g.scale(m, F::of(0.5));
        let weighted = g.scale(kl, F::of(self.config.kl_weight));
        let total = g.add(rec, weighted);
        (total, rec, kl)
    }
}
