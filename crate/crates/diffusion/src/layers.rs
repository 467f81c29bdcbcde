use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{init_uniform, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// `k`×`k` convolution with "same" padding for stride 1.
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            init_uniform(&[cout, cin, k, k], cin * k * k, 1.0, rng),
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    /// Same as [`Conv2d::new`] but with all weights zero.
    pub fn zeroed<F: Scalar>(ps: &mut ParamStore<F>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[cout, cin, k, k]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self {
            w,
            b,
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = ps.add(format!("{name}.w"), init_uniform(&[cout, cin], cin, 1.0, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn zeroed<F: Scalar>(ps: &mut ParamStore<F>, name: &str, cin: usize, cout: usize) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[cout, cin]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Self { w, b }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> Var {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Strided conv stack mapping a canvas-resolution map down by `2^levels`,
/// SiLU between layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownStack {
    pub layers: Vec<Conv2d>,
}

impl DownStack {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        levels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut c = cin;
        for i in 0..levels {
            let next = if i + 1 == levels {
                hidden
            } else {
                hidden.min(8 << i).max(4)
            };
            layers.push(Conv2d::new(ps, &format!("{name}.{i}"), c, next, 3, 2, rng));
            c = next;
        }
        layers.push(Conv2d::new(ps, &format!("{name}.out"), c, cout, 3, 1, rng));
        Self { layers }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, ps, x);
            if i < last {
                x = g.silu(x);
            }
        }
        x
    }
}

/// Conv → SiLU → conv fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fusion {
    pub a: Conv2d,
    pub b: Conv2d,
}

impl Fusion {
    pub fn new<F: Scalar>(
        ps: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            a: Conv2d::new(ps, &format!("{name}.0"), cin, hidden, 3, 1, rng),
            b: Conv2d::new(ps, &format!("{name}.1"), hidden, cout, 3, 1, rng),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: Var) -> Var {
        let h = self.a.forward(g, ps, x);
        let h = g.silu(h);
        self.b.forward(g, ps, h)
    }
}
