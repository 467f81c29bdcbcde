use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Gradients;
use crate::tensor::{Scalar, Tensor};

/// Named parameter tensors. Ids are insertion indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    frozen: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            frozen: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        self.frozen.push(false);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor<F> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<F> {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_frozen(&self, id: usize) -> bool {
        self.frozen[id]
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (i, n) in self.names.iter().enumerate() {
            if n.starts_with(prefix) {
                self.frozen[i] = frozen;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            frozen: self.frozen.clone(),
            index: self.index.clone(),
        }
    }

    /// Replaces values from another store by name; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore<F>) -> Result<(), String> {
        for (i, name) in self.names.iter().enumerate() {
            let j = other.id(name).ok_or_else(|| format!("missing parameter {name}"))?;
            if other.get(j).shape() != self.tensors[i].shape() {
                return Err(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    other.get(j).shape(),
                    self.tensors[i].shape()
                ));
            }
            self.tensors[i] = other.get(j).clone();
        }
        Ok(())
    }
}

/// Uniform fan-in initialization, bound sqrt(3/fan_in)·gain.
pub fn init_uniform<F: Scalar>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| F::of(rng.gen_range(-bound..=bound))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros: Vec<Tensor<F>> = (0..params.len())
            .map(|i| Tensor::zeros(params.get(i).shape()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update; frozen and gradient-less parameters are skipped.
    /// Returns the global gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) -> f64 {
        self.t += 1;
        let c = self.config;
        let norm: f64 = grads
            .params()
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let lr_t = F::of(c.lr * (1.0 - c.beta2.powi(self.t as i32)).sqrt() / (1.0 - c.beta1.powi(self.t as i32)));
        let eps = F::of(c.eps);
        let clip = F::of(clip);
        for id in 0..params.len() {
            if params.is_frozen(id) {
                continue;
            }
            let Some(g) = grads.param(id) else { continue };
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
        norm
    }
}
