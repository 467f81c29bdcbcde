//! Conditioning branches and the noise-prediction network.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::layers::{Conv2d, DownStack, Fusion, Linear};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Fixed hashed bag-of-characters embedding, L2-normalized.
pub fn prompt_features(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for c in text.chars() {
        let mut h = (c as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Sinusoidal timestep features.
pub fn timestep_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut v = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        v.push((t as f64 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        v.push((t as f64 * freq).cos());
    }
    v.resize(dim, 0.0);
    v
}

/// Z_s = g(D(S) + D(B)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleModule {
    pub g: Fusion,
}

impl StyleModule {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, latent: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            g: Fusion::new(ps, "style.g", latent, hidden, latent, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, d_s: Var, d_b: Var) -> Var {
        let sum = g.add(d_s, d_b);
        self.g.forward(g, ps, sum)
    }
}

/// Z_a = f(G(l_g) + P(l_p) + D(l_m)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphModule {
    pub glyph_map: DownStack,
    pub position_map: DownStack,
    pub f: Fusion,
}

impl GlyphModule {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        latent: usize,
        levels: usize,
        map_hidden: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            glyph_map: DownStack::new(ps, "glyph.G", 1, map_hidden, latent, levels, rng),
            position_map: DownStack::new(ps, "glyph.P", 1, map_hidden, latent, levels, rng),
            f: Fusion::new(ps, "glyph.f", latent, hidden, latent, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, l_g: Var, l_p: Var, d_m: Var) -> Var {
        let a = self.glyph_map.forward(g, ps, l_g);
        let b = self.position_map.forward(g, ps, l_p);
        let s = g.add(a, b);
        let s = g.add(s, d_m);
        self.f.forward(g, ps, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub base: usize,
    pub mid: usize,
    pub emb_dim: usize,
    pub feature_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base: 32,
            mid: 64,
            emb_dim: 64,
            feature_dim: 64,
        }
    }
}

/// Conv block with embedding scale-shift and a residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub emb: Linear,
    pub channels: usize,
}

impl ResBlock {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, name: &str, c: usize, emb_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), c, c, 3, 1, rng),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), c, c, 3, 1, rng),
            emb: Linear::new(ps, &format!("{name}.emb"), emb_dim, 2 * c, rng),
            channels: c,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var, emb: Var) -> Var {
        let h = self.conv1.forward(g, ps, x);
        let h = g.silu(h);
        let ss = self.emb.forward(g, ps, emb);
        let scale = g.slice_channels(ss, 0, self.channels);
        let shift = g.slice_channels(ss, self.channels, self.channels);
        let h = g.scale_shift(h, scale, shift);
        let h = g.silu(h);
        let h = self.conv2.forward(g, ps, h);
        g.add(x, h)
    }
}

/// Two-level U-shaped noise predictor; the output conv starts at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNet {
    pub config: UNetConfig,
    pub time1: Linear,
    pub time2: Linear,
    pub prompt: Linear,
    pub conv_in: Conv2d,
    pub res1: ResBlock,
    pub down1: Conv2d,
    pub res2: ResBlock,
    pub down2: Conv2d,
    pub mid: ResBlock,
    pub up2: Conv2d,
    pub res_up2: ResBlock,
    pub up1: Conv2d,
    pub res_up1: ResBlock,
    pub conv_out: Conv2d,
}

impl UNet {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        cin: usize,
        cout: usize,
        config: UNetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (c1, c2, e) = (config.base, config.mid, config.emb_dim);
        Self {
            time1: Linear::new(ps, "unet.time1", config.feature_dim, e, rng),
            time2: Linear::new(ps, "unet.time2", e, e, rng),
            prompt: Linear::new(ps, "unet.prompt", config.feature_dim, e, rng),
            conv_in: Conv2d::new(ps, "unet.in", cin, c1, 3, 1, rng),
            res1: ResBlock::new(ps, "unet.res1", c1, e, rng),
            down1: Conv2d::new(ps, "unet.down1", c1, c2, 3, 2, rng),
            res2: ResBlock::new(ps, "unet.res2", c2, e, rng),
            down2: Conv2d::new(ps, "unet.down2", c2, c2, 3, 2, rng),
            mid: ResBlock::new(ps, "unet.mid", c2, e, rng),
            up2: Conv2d::new(ps, "unet.up2", 2 * c2, c2, 3, 1, rng),
            res_up2: ResBlock::new(ps, "unet.res_up2", c2, e, rng),
            up1: Conv2d::new(ps, "unet.up1", c2 + c1, c1, 3, 1, rng),
            res_up1: ResBlock::new(ps, "unet.res_up1", c1, e, rng),
            conv_out: Conv2d::zeroed(ps, "unet.out", c1, cout, 3),
            config,
        }
    }

    /// Embedding of timesteps plus prompts, shape N×emb_dim.
    pub fn embed<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, t: &[usize], prompts: &[String]) -> Var {
        let d = self.config.feature_dim;
        let n = t.len();
        let tf: Vec<F> = t.iter().flat_map(|&s| timestep_features(s, d)).map(F::of).collect();
        let pf: Vec<F> = prompts.iter().flat_map(|p| prompt_features(p, d)).map(F::of).collect();
        let tv = g.constant(Tensor::from_vec(&[n, d], tf));
        let pv = g.constant(Tensor::from_vec(&[n, d], pf));
        let h = self.time1.forward(g, ps, tv);
        let h = g.silu(h);
        let h = self.time2.forward(g, ps, h);
        let p = self.prompt.forward(g, ps, pv);
        let e = g.add(h, p);
        g.silu(e)
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var, emb: Var) -> Var {
        let (_, _, h, w) = g.value(x).dims4();
        assert!(h % 4 == 0 && w % 4 == 0, "latent {h}x{w} must be divisible by 4");
        let h0 = self.conv_in.forward(g, ps, x);
        let s1 = self.res1.forward(g, ps, h0, emb);
        let d1 = self.down1.forward(g, ps, s1);
        let d1 = g.silu(d1);
        let s2 = self.res2.forward(g, ps, d1, emb);
        let d2 = self.down2.forward(g, ps, s2);
        let d2 = g.silu(d2);
        let m = self.mid.forward(g, ps, d2, emb);
        let u = g.upsample2(m);
        let u = g.concat(&[u, s2]);
        let u = self.up2.forward(g, ps, u);
        let u = g.silu(u);
        let u = self.res_up2.forward(g, ps, u, emb);
        let u = g.upsample2(u);
        let u = g.concat(&[u, s1]);
        let u = self.up1.forward(g, ps, u);
        let u = g.silu(u);
        let u = self.res_up1.forward(g, ps, u, emb);
        let u = g.silu(u);
        self.conv_out.forward(g, ps, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_features_are_unit_and_order_free() {
        let a = prompt_features("河岸", 64);
        let b = prompt_features("岸河", 64);
        assert_eq!(a, b);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, prompt_features("银行", 64));
        assert!(prompt_features("", 64).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn timestep_features_differ() {
        assert_ne!(timestep_features(3, 64), timestep_features(4, 64));
        assert_eq!(timestep_features(0, 8)[..4], [0.0; 4]);
    }
}
