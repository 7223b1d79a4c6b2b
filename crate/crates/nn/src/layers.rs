//! Parameterized building blocks. Each layer owns a name prefix under which
//! its tensors live in a [`ParamStore`].

use glioaug_core::Scalar;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{he_normal, Binding, ParamStore};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Initialization gain for a leaky rectifier with the given negative slope.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2d {
    /// Stride 1, "same" padding for odd `k`, with bias.
    pub fn new(name: impl Into<String>, in_c: usize, out_c: usize, k: usize) -> Self {
        Conv2d {
            name: name.into(),
            in_c,
            out_c,
            k,
            stride: 1,
            pad: k / 2,
            bias: true,
        }
    }

    pub fn strided(mut self, stride: usize, pad: usize) -> Self {
        self.stride = stride;
        self.pad = pad;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, gain: f64, rng: &mut impl Rng) {
        let fan_in = self.in_c * self.k * self.k;
        store.insert_param(
            self.weight_name(),
            he_normal([self.out_c, self.in_c, self.k, self.k], fan_in, gain, rng),
        );
        if self.bias {
            store.insert_param(self.bias_name(), Tensor::channels(vec![T::zero(); self.out_c]));
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let w = p.param(g, &self.weight_name());
        let b = self.bias.then(|| p.param(g, &self.bias_name()));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Per-sample normalization over (C, H, W) with per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub name: String,
    pub channels: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        LayerNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.insert_param(format!("{}.gamma", self.name), Tensor::channels(vec![T::one(); self.channels]));
        store.insert_param(format!("{}.beta", self.name), Tensor::channels(vec![T::zero(); self.channels]));
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let gamma = p.param(g, &format!("{}.gamma", self.name));
        let beta = p.param(g, &format!("{}.beta", self.name));
        g.layer_norm(x, gamma, beta, T::lit(NORM_EPS))
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            momentum: 0.1,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.insert_param(format!("{}.gamma", self.name), Tensor::channels(vec![T::one(); self.channels]));
        store.insert_param(format!("{}.beta", self.name), Tensor::channels(vec![T::zero(); self.channels]));
        store.insert_buffer(format!("{}.mean", self.name), Tensor::channels(vec![T::zero(); self.channels]));
        store.insert_buffer(format!("{}.var", self.name), Tensor::channels(vec![T::one(); self.channels]));
    }

    /// Batch statistics in train mode (queuing a running-stat update),
    /// running statistics otherwise.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let gname = format!("{}.gamma", self.name);
        let bname = format!("{}.beta", self.name);
        let mname = format!("{}.mean", self.name);
        let vname = format!("{}.var", self.name);
        if p.train_mode() {
            let gamma = p.param(g, &gname);
            let beta = p.param(g, &bname);
            let (y, mean, var) = g.batch_norm_train(x, gamma, beta, T::lit(NORM_EPS));
            let m = T::lit(self.momentum);
            let blend = |old: &Tensor<T>, new: &[T]| {
                Tensor::channels(
                    old.data()
                        .iter()
                        .zip(new)
                        .map(|(&o, &n)| (T::one() - m) * o + m * n)
                        .collect(),
                )
            };
            let rm = blend(p.buffer(&mname), &mean);
            let rv = blend(p.buffer(&vname), &var);
            p.queue_buffer_update(mname, rm);
            p.queue_buffer_update(vname, rv);
            y
        } else {
            let store = p.store();
            let gamma = store.param(&gname).expect("gamma").data();
            let beta = store.param(&bname).expect("beta").data();
            let rm = p.buffer(&mname).data();
            let rv = p.buffer(&vname).data();
            let eps = T::lit(NORM_EPS);
            let scale: Vec<T> = (0..self.channels).map(|c| gamma[c] / (rv[c] + eps).sqrt()).collect();
            let shift: Vec<T> = (0..self.channels).map(|c| beta[c] - rm[c] * scale[c]).collect();
            g.channel_affine(x, &scale, &shift)
        }
    }
}
