//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Every op appends a node holding its value; [`Graph::backward`] walks the
//! tape in reverse. Shape errors in op arguments are programming errors and
//! panic.

use glioaug_core::Scalar;

use crate::conv::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Normalization whose statistics are taken over `groups`; `xhat` and
    /// `inv_std` are kept for the reverse pass.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        per_sample: bool,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine { x: Var, scale: Vec<T> },
    Upsample2(Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Copy of `v`'s value as a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    /// Cross-correlation of `x` `[N,C,H,W]` with `w` `[O,C,kh,kw]` plus optional bias `[1,O,1,1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(xs[1], ws[1], "conv2d: input has {} channels, kernel expects {}", xs[1], ws[1]);
        if let Some(b) = b {
            assert_eq!(self.value(b).len(), ws[0], "conv2d: bias length");
        }
        let geom = ConvGeom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        assert!(xs[2] + 2 * pad >= ws[2] && xs[3] + 2 * pad >= ws[3], "conv2d: kernel larger than input");
        let y = conv::forward(
            self.value(x).data(),
            xs[0],
            &geom,
            self.value(w).data(),
            ws[0],
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new([xs[0], ws[0], geom.out_h(), geom.out_w()], y).expect("conv output");
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, Op::Conv { x, w, b, geom }, &parents)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &str) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{name}: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(ta.shape(), data).expect("same shape");
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p / q, Op::Div(a, b), "div")
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |v| v * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |v| v + k, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |v| if v > T::zero() { v } else { v * slope }, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.abs(), Op::Abs(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<T>() / T::from_usize_lossy(t.len());
        self.push(Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Fingerprint of the branch taken at every non-smooth op (rectifier and
    /// abs signs, pooling winners). Equal fingerprints at two parameter
    /// values mean the recorded function is smooth between them.
    pub fn branch_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::LeakyRelu(a, _) | Op::Abs(a) => {
                    i.hash(&mut h);
                    for v in self.value(*a).data() {
                        (if *v > T::zero() { 1u8 } else if *v < T::zero() { 2 } else { 0 }).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Weighted sum of one-element nodes.
    pub fn weighted_sum(&mut self, terms: &[(T, Var)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(k, v) in terms {
            let t = self.scale(v, k);
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t),
            });
        }
        acc.expect("weighted_sum of no terms")
    }

    fn norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T, per_sample: bool) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        assert_eq!(self.value(gamma).len(), c, "norm: gamma length");
        assert_eq!(self.value(beta).len(), c, "norm: beta length");
        let hw = h * w;
        let groups = if per_sample { n } else { c };
        let count = T::from_usize_lossy(t.len() / groups);
        let group_of = |i: usize| if per_sample { i / (c * hw) } else { (i / hw) % c };
        let mut mean = vec![T::zero(); groups];
        for (i, &v) in t.data().iter().enumerate() {
            mean[group_of(i)] += v;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![T::zero(); groups];
        for (i, &v) in t.data().iter().enumerate() {
            let d = v - mean[group_of(i)];
            var[group_of(i)] += d * d;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / count + eps).sqrt()).collect();
        let xhat: Vec<T> = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[group_of(i)]) * inv_std[group_of(i)])
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let y = xhat
            .iter()
            .enumerate()
            .map(|(i, &xh)| {
                let ch = (i / hw) % c;
                xh * g[ch] + b[ch]
            })
            .collect();
        let out = Tensor::new(t.shape(), y).expect("same shape");
        self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                per_sample,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Normalizes each sample over all of its channels and pixels, then
    /// applies a per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        self.norm(x, gamma, beta, eps, true)
    }

    /// Normalizes each channel over the batch and pixels using batch statistics.
    /// Returns the output plus the batch mean and (unbiased) variance per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> (Var, Vec<T>, Vec<T>) {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let m = n * h * w;
        let mut mean = vec![T::zero(); c];
        let mut sq = vec![T::zero(); c];
        for (i, &v) in t.data().iter().enumerate() {
            mean[(i / (h * w)) % c] += v;
        }
        mean.iter_mut().for_each(|v| *v /= T::from_usize_lossy(m));
        for (i, &v) in t.data().iter().enumerate() {
            let ch = (i / (h * w)) % c;
            sq[ch] += (v - mean[ch]) * (v - mean[ch]);
        }
        let unbiased = sq
            .iter()
            .map(|&s| s / T::from_usize_lossy(m.saturating_sub(1).max(1)))
            .collect();
        (self.norm(x, gamma, beta, eps, false), mean, unbiased)
    }

    /// `y = x * scale[c] + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[T], shift: &[T]) -> Var {
        let t = self.value(x);
        let [_, c, h, w] = t.shape();
        assert!(scale.len() == c && shift.len() == c, "channel_affine: coefficient length");
        let y = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / (h * w)) % c;
                v * scale[ch] + shift[ch]
            })
            .collect();
        let out = Tensor::new(t.shape(), y).expect("same shape");
        self.push(
            out,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            &[x],
        )
    }

    /// Nearest-neighbour upsampling by two in both spatial axes.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let mut y = Vec::with_capacity(t.len() * 4);
        for plane in t.data().chunks(h * w) {
            for r in 0..2 * h {
                let row = &plane[(r / 2) * w..(r / 2 + 1) * w];
                for col in 0..2 * w {
                    y.push(row[col / 2]);
                }
            }
        }
        let out = Tensor::new([n, c, 2 * h, 2 * w], y).expect("upsample dims");
        self.push(out, Op::Upsample2(x), &[x])
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for (p, plane) in t.data().chunks(h * w).enumerate() {
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = 2 * r * w + 2 * col;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * r + dr) * w + 2 * col + dc;
                        if plane[i] > plane[best] {
                            best = i;
                        }
                    }
                    y.push(plane[best]);
                    argmax.push(p * h * w + best);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], y).expect("pool dims");
        self.push(out, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]).shape();
        let mut c_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert!(s[0] == first[0] && s[2] == first[2] && s[3] == first[3], "concat: {s:?} vs {first:?}");
            c_total += s[1];
        }
        let [n, _, h, w] = first;
        let mut y = Vec::with_capacity(n * c_total * h * w);
        for s in 0..n {
            for &p in parts {
                y.extend_from_slice(self.value(p).sample(s));
            }
        }
        let out = Tensor::new([n, c_total, h, w], y).expect("concat dims");
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    /// Gradients of the one-element node `loss` with respect to every node
    /// that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be a single value");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, d: Tensor<T>| match &mut grads[v.0] {
            Some(t) => t.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        let like = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape(), data).expect("grad shape");
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let want = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let ws = self.value(*w).shape();
                let r = conv::backward(
                    self.value(*x).data(),
                    self.value(*x).n(),
                    geom,
                    self.value(*w).data(),
                    ws[0],
                    gd,
                    want,
                );
                if let Some(d) = r.dx {
                    acc(*x, like(*x, d));
                }
                if let Some(d) = r.dw {
                    acc(*w, like(*w, d));
                }
                if let (Some(b), Some(d)) = (b, r.db) {
                    acc(*b, like(*b, d));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    acc(*a, like(*a, gd.iter().zip(vb).map(|(&d, &q)| d * q).collect()));
                }
                if self.needs(*b) {
                    acc(*b, like(*b, gd.iter().zip(va).map(|(&d, &p)| d * p).collect()));
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    acc(*a, like(*a, gd.iter().zip(vb).map(|(&d, &q)| d / q).collect()));
                }
                if self.needs(*b) {
                    let d = gd
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(&d, (&p, &q))| -d * p / (q * q))
                        .collect();
                    acc(*b, like(*b, d));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * *k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&d, &v)| if v > T::zero() { d } else { d * *slope })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, like(*a, gd.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)).collect()));
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                acc(*a, like(*a, gd.iter().zip(x).map(|(&d, &v)| d * sigmoid(v)).collect()));
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&d, &v)| if v == T::zero() { T::zero() } else { d * v.signum() })
                    .collect();
                acc(*a, like(*a, d));
            }
            Op::SumAll(a) => {
                let s = self.value(*a).shape();
                acc(*a, Tensor::filled(s, gd[0]));
            }
            Op::MeanAll(a) => {
                let t = self.value(*a);
                acc(*a, Tensor::filled(t.shape(), gd[0] / T::from_usize_lossy(t.len())));
            }
            Op::Norm {
                x,
                gamma,
                beta,
                per_sample,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = self.value(*x).shape();
                let hw = h * w;
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let mut dg = vec![T::zero(); c];
                    for (i, (&d, &xh)) in gd.iter().zip(xhat).enumerate() {
                        dg[(i / hw) % c] += d * xh;
                    }
                    acc(*gamma, like(*gamma, dg));
                }
                if self.needs(*beta) {
                    let mut db = vec![T::zero(); c];
                    for (i, &d) in gd.iter().enumerate() {
                        db[(i / hw) % c] += d;
                    }
                    acc(*beta, like(*beta, db));
                }
                if self.needs(*x) {
                    let groups = inv_std.len();
                    let group_of = |i: usize| if *per_sample { i / (c * hw) } else { (i / hw) % c };
                    let count = T::from_usize_lossy(n * c * hw / groups);
                    let dxhat: Vec<T> = gd.iter().enumerate().map(|(i, &d)| d * gam[(i / hw) % c]).collect();
                    let mut s1 = vec![T::zero(); groups];
                    let mut s2 = vec![T::zero(); groups];
                    for (i, (&d, &xh)) in dxhat.iter().zip(xhat).enumerate() {
                        s1[group_of(i)] += d;
                        s2[group_of(i)] += d * xh;
                    }
                    let dx = dxhat
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(i, (&d, &xh))| {
                            let k = group_of(i);
                            inv_std[k] / count * (count * d - s1[k] - xh * s2[k])
                        })
                        .collect();
                    acc(*x, like(*x, dx));
                }
            }
            Op::ChannelAffine { x, scale } => {
                let [_, c, h, w] = self.value(*x).shape();
                let d = gd.iter().enumerate().map(|(i, &d)| d * scale[(i / (h * w)) % c]).collect();
                acc(*x, like(*x, d));
            }
            Op::Upsample2(x) => {
                let [n, c, h, w] = self.value(*x).shape();
                let mut d = vec![T::zero(); n * c * h * w];
                for (p, plane) in gd.chunks(4 * h * w).enumerate() {
                    for r in 0..2 * h {
                        for col in 0..2 * w {
                            d[p * h * w + (r / 2) * w + col / 2] += plane[r * 2 * w + col];
                        }
                    }
                }
                acc(*x, like(*x, d));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&i, &v) in argmax.iter().zip(gd) {
                    d[i] += v;
                }
                acc(*x, like(*x, d));
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = node.value.shape();
                let total = node.value.len() / n;
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).c() * h * w;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(n * len);
                        for s in 0..n {
                            d.extend_from_slice(&gd[s * total + offset..s * total + offset + len]);
                        }
                        acc(p, like(p, d));
                    }
                    offset += len;
                }
            }
        }
    }
}
