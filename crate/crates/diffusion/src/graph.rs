//! Tape-based reverse-mode autodiff over [`Tensor`]s.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Param(usize),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        cols: Vec<Vec<F>>,
    },
    Upsample2(Var),
    SpaceToDepth(Var, usize),
    DepthToSpace(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ScaleShift {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Silu(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    RowScale {
        x: Var,
        coef: Vec<F>,
    },
    Sum(Var),
    Mean(Var),
    WeightedSq {
        a: Var,
        b: Var,
        weights: Option<Vec<F>>,
        denom: F,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients of a backward pass, by node and by parameter id.
pub struct Gradients<F> {
    nodes: Vec<Option<Tensor<F>>>,
    params: HashMap<usize, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn of(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: usize) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<usize, Tensor<F>> {
        &self.params
    }
}

/// Channel count and spatial size of an N × C × rest tensor.
fn nc_rest(shape: &[usize]) -> (usize, usize, usize) {
    let rest = shape[2..].iter().product::<usize>().max(1);
    (shape[0], shape[1], rest)
}

#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
) -> Vec<F> {
    let mut cols = vec![F::zero(); c * k * k * ho * wo];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = x[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    cols: &[F],
    dx: &mut [F],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
) {
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[(ci * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn silu<F: Scalar>(v: F) -> F {
    v / (F::one() + (-v).exp())
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<usize, Var>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is wanted (inputs in gradient checks).
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter leaf; frozen parameters carry no gradient. Repeated uses
    /// share one node.
    pub fn param(&mut self, store: &ParamStore<F>, id: usize) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), !store.is_frozen(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (co, ci, k, k2) = self.value(w).dims4();
        assert!(
            ci == c && k == k2,
            "conv weight {:?} vs input {:?}",
            self.value(w).shape(),
            self.value(x).shape()
        );
        assert!(
            h + 2 * pad >= k && wd + 2 * pad >= k,
            "input {h}x{wd} smaller than kernel {k}"
        );
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let keep_cols = self.nodes[w.0].needs_grad;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = b.map(|b| self.value(b).data());
        let per_in = c * h * wd;
        let per_out = co * ho * wo;
        let ckk = c * k * k;
        let results: Vec<(Vec<F>, Vec<F>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let cols = im2col(&xv[i * per_in..(i + 1) * per_in], c, h, wd, k, stride, pad, ho, wo);
                let mut out = vec![F::zero(); per_out];
                if let Some(bv) = bv {
                    for (o, &bias) in bv.iter().enumerate() {
                        out[o * ho * wo..(o + 1) * ho * wo].fill(bias);
                    }
                }
                F::gemm(
                    co,
                    ckk,
                    ho * wo,
                    wv,
                    false,
                    &cols,
                    false,
                    &mut out,
                    if bv.is_some() { F::one() } else { F::zero() },
                );
                (out, if keep_cols { cols } else { Vec::new() })
            })
            .collect();
        let mut data = Vec::with_capacity(n * per_out);
        let mut cols = Vec::with_capacity(n);
        for (o, c) in results {
            data.extend_from_slice(&o);
            cols.push(c);
        }
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.nodes[b.0].needs_grad);
        self.push(
            Tensor::from_vec(&[n, co, ho, wo], data),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            },
            needs,
        )
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let mut out = vec![F::zero(); n * c * 4 * h * w];
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push(Tensor::from_vec(&[n, c, 2 * h, 2 * w], out), Op::Upsample2(x), needs)
    }

    /// Index map shared by space-to-depth and its inverse: for each element
    /// of the deep tensor, its position in the spatial tensor.
    fn s2d_index(n: usize, c: usize, h: usize, w: usize, f: usize) -> Vec<usize> {
        let (ho, wo) = (h / f, w / f);
        let mut idx = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ci in 0..c {
                for dy in 0..f {
                    for dx in 0..f {
                        for y in 0..ho {
                            for x in 0..wo {
                                idx.push(((b * c + ci) * h + y * f + dy) * w + x * f + dx);
                            }
                        }
                    }
                }
            }
        }
        idx
    }

    /// Invertible N×C×H×W → N×(C·f²)×(H/f)×(W/f) rearrangement.
    pub fn space_to_depth(&mut self, x: Var, f: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(h % f == 0 && w % f == 0, "{h}x{w} not divisible by {f}");
        let src = self.value(x).data();
        let out = Self::s2d_index(n, c, h, w, f).into_iter().map(|i| src[i]).collect();
        let needs = self.needs(&[x]);
        self.push(
            Tensor::from_vec(&[n, c * f * f, h / f, w / f], out),
            Op::SpaceToDepth(x, f),
            needs,
        )
    }

    pub fn depth_to_space(&mut self, x: Var, f: usize) -> Var {
        let (n, cd, ho, wo) = self.value(x).dims4();
        assert!(cd % (f * f) == 0, "{cd} channels not divisible by {}", f * f);
        let c = cd / (f * f);
        let src = self.value(x).data();
        let mut out = vec![F::zero(); src.len()];
        for (j, i) in Self::s2d_index(n, c, ho * f, wo * f, f).into_iter().enumerate() {
            out[i] = src[j];
        }
        let needs = self.needs(&[x]);
        self.push(
            Tensor::from_vec(&[n, c, ho * f, wo * f], out),
            Op::DepthToSpace(x, f),
            needs,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let needs = self.needs(&[a, b]);
        self.push(v, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let needs = self.needs(&[a, b]);
        self.push(v, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let needs = self.needs(&[a, b]);
        self.push(v, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let v = self.value(x).map(|a| a * s);
        let needs = self.needs(&[x]);
        self.push(v, Op::Scale(x, s), needs)
    }

    /// `x·(1 + scale) + shift` with per-(sample, channel) `scale`, `shift` of shape N×C.
    pub fn scale_shift(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (n, c, rest) = nc_rest(self.value(x).shape());
        assert_eq!(self.value(scale).shape(), &[n, c], "scale shape");
        assert_eq!(self.value(shift).shape(), &[n, c], "shift shape");
        let (xv, sv, bv) = (self.value(x).data(), self.value(scale).data(), self.value(shift).data());
        let mut out = vec![F::zero(); xv.len()];
        for p in 0..n * c {
            let (s, b) = (F::one() + sv[p], bv[p]);
            for i in p * rest..(p + 1) * rest {
                out[i] = xv[i] * s + b;
            }
        }
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(&[x, scale, shift]);
        self.push(Tensor::from_vec(&shape, out), Op::ScaleShift { x, scale, shift }, needs)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(silu);
        let needs = self.needs(&[x]);
        self.push(v, Op::Silu(x), needs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.exp());
        let needs = self.needs(&[x]);
        self.push(v, Op::Exp(x), needs)
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let first = self.value(xs[0]).shape().to_vec();
        let (n, _, rest) = nc_rest(&first);
        let mut channels = 0;
        for &x in xs {
            let s = self.value(x).shape();
            assert!(
                s[0] == n && s[2..] == first[2..],
                "concat shape mismatch {s:?} vs {first:?}"
            );
            channels += s[1];
        }
        let mut out = Vec::with_capacity(n * channels * rest);
        for i in 0..n {
            for &x in xs {
                let (_, c, _) = nc_rest(self.value(x).shape());
                out.extend_from_slice(&self.value(x).data()[i * c * rest..(i + 1) * c * rest]);
            }
        }
        let mut shape = first;
        shape[1] = channels;
        let needs = self.needs(xs);
        self.push(Tensor::from_vec(&shape, out), Op::Concat(xs.to_vec()), needs)
    }

    /// Channels `start..start+len` along axis 1.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let shape = self.value(x).shape().to_vec();
        let (n, c, rest) = nc_rest(&shape);
        assert!(start + len <= c, "channel slice {start}+{len} of {c}");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * rest);
        for i in 0..n {
            out.extend_from_slice(&src[(i * c + start) * rest..(i * c + start + len) * rest]);
        }
        let mut s = shape;
        s[1] = len;
        let needs = self.needs(&[x]);
        self.push(Tensor::from_vec(&s, out), Op::Slice { x, start, len }, needs)
    }

    /// `x·Wᵀ + b` for x: N×In, W: Out×In.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert!(
            xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1],
            "linear {xs:?} x {ws:?}"
        );
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![F::zero(); n * o];
        let beta = if let Some(b) = b {
            for r in 0..n {
                out[r * o..(r + 1) * o].copy_from_slice(self.value(b).data());
            }
            F::one()
        } else {
            F::zero()
        };
        F::gemm(
            n,
            i,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            beta,
        );
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.nodes[b.0].needs_grad);
        self.push(Tensor::from_vec(&[n, o], out), Op::Linear { x, w, b }, needs)
    }

    /// Multiplies each batch item by a constant coefficient.
    pub fn row_scale(&mut self, x: Var, coef: Vec<F>) -> Var {
        let shape = self.value(x).shape().to_vec();
        assert_eq!(shape[0], coef.len(), "one coefficient per item");
        let per = self.value(x).len() / coef.len().max(1);
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * coef[i / per])
            .collect();
        let needs = self.needs(&[x]);
        self.push(Tensor::from_vec(&shape, data), Op::RowScale { x, coef }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(&[x]);
        self.push(v, Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let needs = self.needs(&[x]);
        self.push(v, Op::Mean(x), needs)
    }

    /// `Σ wᵢ(aᵢ − bᵢ)² / denom`; unit weights when `weights` is `None`.
    pub fn weighted_sq(&mut self, a: Var, b: Var, weights: Option<Vec<F>>, denom: F) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "weighted_sq shapes");
        if let Some(w) = &weights {
            assert_eq!(w.len(), self.value(a).len(), "weight count");
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let total: F = match &weights {
            Some(w) => av
                .iter()
                .zip(bv)
                .zip(w)
                .map(|((&x, &y), &k)| k * (x - y) * (x - y))
                .sum(),
            None => av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum(),
        };
        let needs = self.needs(&[a, b]);
        self.push(
            Tensor::scalar(total / denom),
            Op::WeightedSq { a, b, weights, denom },
            needs,
        )
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let n = F::of(self.value(a).len() as f64);
        self.weighted_sq(a, b, None, n)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));
        let mut params = HashMap::new();
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                params.insert(id, g.clone());
            }
            grads[idx] = Some(g);
        }
        Gradients { nodes: grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.zip(self.value(*b), |x, y| x * y));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * *s)),
            Op::Silu(x) => {
                let d = self.value(*x).zip(g, |v, gv| {
                    let s = F::one() / (F::one() + (-v).exp());
                    gv * s * (F::one() + v * (F::one() - s))
                });
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => self.accumulate(grads, *x, node.value.zip(g, |y, gv| y * gv)),
            Op::RowScale { x, coef } => {
                let per = g.len() / coef.len().max(1);
                let d: Vec<F> = gd.iter().enumerate().map(|(i, &v)| v * coef[i / per]).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::full(s, gd[0]));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(t.shape(), gd[0] / F::of(t.len() as f64)));
            }
            Op::WeightedSq { a, b, weights, denom } => {
                let k = F::of(2.0) * gd[0] / *denom;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let d: Vec<F> = match weights {
                    Some(w) => av
                        .iter()
                        .zip(bv)
                        .zip(w)
                        .map(|((&x, &y), &wi)| k * wi * (x - y))
                        .collect(),
                    None => av.iter().zip(bv).map(|(&x, &y)| k * (x - y)).collect(),
                };
                let d = Tensor::from_vec(self.value(*a).shape(), d);
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, d.map(|v| -v));
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScaleShift { x, scale, shift } => {
                let (n, c, rest) = nc_rest(g.shape());
                let (xv, sv) = (self.value(*x).data(), self.value(*scale).data());
                let mut dx = vec![F::zero(); gd.len()];
                let mut ds = vec![F::zero(); n * c];
                let mut db = vec![F::zero(); n * c];
                for p in 0..n * c {
                    let s1 = F::one() + sv[p];
                    for i in p * rest..(p + 1) * rest {
                        dx[i] = gd[i] * s1;
                        ds[p] += gd[i] * xv[i];
                        db[p] += gd[i];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx));
                self.accumulate(grads, *scale, Tensor::from_vec(&[n, c], ds));
                self.accumulate(grads, *shift, Tensor::from_vec(&[n, c], db));
            }
            Op::Concat(xs) => {
                let (n, ctot, rest) = nc_rest(g.shape());
                let mut offset = 0;
                for &x in xs {
                    let shape = self.value(x).shape().to_vec();
                    let c = shape[1];
                    if self.nodes[x.0].needs_grad {
                        let mut d = Vec::with_capacity(n * c * rest);
                        for i in 0..n {
                            d.extend_from_slice(&gd[(i * ctot + offset) * rest..(i * ctot + offset + c) * rest]);
                        }
                        self.accumulate(grads, x, Tensor::from_vec(&shape, d));
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start, len } => {
                let shape = self.value(*x).shape().to_vec();
                let (n, c, rest) = nc_rest(&shape);
                let mut d = vec![F::zero(); n * c * rest];
                for i in 0..n {
                    d[(i * c + start) * rest..(i * c + start + len) * rest]
                        .copy_from_slice(&gd[i * len * rest..(i + 1) * len * rest]);
                }
                self.accumulate(grads, *x, Tensor::from_vec(&shape, d));
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let mut d = vec![F::zero(); n * c * h * w];
                for p in 0..n * c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d[(p * h + y / 2) * w + xx / 2] += gd[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], d));
            }
            Op::SpaceToDepth(x, f) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let mut d = vec![F::zero(); gd.len()];
                for (j, i) in Self::s2d_index(n, c, h, w, *f).into_iter().enumerate() {
                    d[i] = gd[j];
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], d));
            }
            Op::DepthToSpace(x, f) => {
                let (n, c, h, w) = g.dims4();
                let d = Self::s2d_index(n, c, h, w, *f).into_iter().map(|i| gd[i]).collect();
                self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), d));
            }
            Op::Linear { x, w, b } => {
                let (n, i) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let o = self.value(*w).shape()[0];
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![F::zero(); n * i];
                    F::gemm(n, o, i, gd, false, self.value(*w).data(), false, &mut dx, F::zero());
                    self.accumulate(grads, *x, Tensor::from_vec(&[n, i], dx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![F::zero(); o * i];
                    F::gemm(o, n, i, gd, true, self.value(*x).data(), false, &mut dw, F::zero());
                    self.accumulate(grads, *w, Tensor::from_vec(&[o, i], dw));
                }
                if let Some(b) = b {
                    let mut db = vec![F::zero(); o];
                    for r in 0..n {
                        for k in 0..o {
                            db[k] += gd[r * o + k];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[o], db));
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let (n, c, h, wd) = self.value(*x).dims4();
                let (co, _, k, _) = self.value(*w).dims4();
                let (_, _, ho, wo) = g.dims4();
                let (s, p) = (*stride, *pad);
                let ckk = c * k * k;
                let hw = ho * wo;
                let need_x = self.nodes[x.0].needs_grad;
                let need_w = self.nodes[w.0].needs_grad;
                let wv = self.value(*w).data();
                let parts: Vec<(Vec<F>, Vec<F>)> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let go = &gd[i * co * hw..(i + 1) * co * hw];
                        let mut dw = Vec::new();
                        if need_w {
                            dw = vec![F::zero(); co * ckk];
                            F::gemm(co, hw, ckk, go, false, &cols[i], true, &mut dw, F::zero());
                        }
                        let mut dx = Vec::new();
                        if need_x {
                            let mut dcols = vec![F::zero(); ckk * hw];
                            F::gemm(ckk, co, hw, wv, true, go, false, &mut dcols, F::zero());
                            dx = vec![F::zero(); c * h * wd];
                            col2im(&dcols, &mut dx, c, h, wd, k, s, p, ho, wo);
                        }
                        (dw, dx)
                    })
                    .collect();
                if need_w {
                    let mut dw = vec![F::zero(); co * ckk];
                    for (part, _) in &parts {
                        for (a, &v) in dw.iter_mut().zip(part) {
                            *a += v;
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_vec(self.value(*w).shape(), dw));
                }
                if need_x {
                    let mut dx = Vec::with_capacity(n * c * h * wd);
                    for (_, part) in &parts {
                        dx.extend_from_slice(part);
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(&[n, c, h, wd], dx));
                }
                if let Some(b) = b {
                    let mut db = vec![F::zero(); co];
                    for i in 0..n {
                        for o in 0..co {
                            db[o] += gd[(i * co + o) * hw..(i * co + o + 1) * hw].iter().copied().sum::<F>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_vec(&[co], db));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0 - 0.5) * scale).collect(),
        )
    }

    /// Central differences of `f` w.r.t. every input element.
    fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward(loss);
        let eval = |ins: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vs: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
            let l = f(&mut g, &vs);
            g.value(l).item()
        };
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ana = grads.of(vars[k]).map_or(0.0, |g| g.data()[i]);
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "input {k}[{i}]: numeric {num} analytic {ana}"
                );
            }
        }
    }

    #[test]
    fn conv_strided_padded() {
        check(
            vec![ramp(&[2, 2, 5, 4], 2.0), ramp(&[3, 2, 3, 3], 1.0), ramp(&[3], 1.0)],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1);
                let y = g.silu(y);
                let z = g.mul(y, y);
                g.sum(z)
            },
        );
    }

    #[test]
    fn elementwise_and_structure_ops() {
        check(
            vec![ramp(&[2, 3, 2, 2], 1.0), ramp(&[2, 3], 0.5), ramp(&[2, 3], 0.7)],
            |g, v| {
                let a = g.scale_shift(v[0], v[1], v[2]);
                let b = g.exp(a);
                let c = g.concat(&[a, b, v[0]]);
                let d = g.slice_channels(c, 2, 5);
                let e = g.upsample2(d);
                let f = g.row_scale(e, vec![0.3, -1.2]);
                let s = g.space_to_depth(f, 2);
                let t = g.depth_to_space(s, 2);
                let u = g.sub(t, e);
                let w = g.scale(u, 1.7);
                let target = g.constant(Tensor::full(&[2, 5, 4, 4], 0.1));
                let m = g.mse(w, target);
                let n = g.mean(e);
                g.add(m, n)
            },
        );
    }

    #[test]
    fn linear_and_weighted_loss() {
        check(
            vec![
                ramp(&[3, 4], 1.0),
                ramp(&[5, 4], 1.0),
                ramp(&[5], 1.0),
                ramp(&[3, 5], 1.0),
            ],
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]));
                let w = (0..15).map(|i| (i % 3) as f64).collect();
                g.weighted_sq(y, v[3], Some(w), 7.0)
            },
        );
    }

    #[test]
    fn space_to_depth_round_trip() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|v| v as f32).collect());
        let x = g.constant(t.clone());
        let d = g.space_to_depth(x, 2);
        assert_eq!(g.value(d).shape(), &[1, 4, 2, 2]);
        assert_eq!(&g.value(d).data()[..4], &[0.0, 2.0, 8.0, 10.0]);
        let back = g.depth_to_space(d, 2);
        assert_eq!(g.value(back), &t);
    }
}
