use std::collections::BTreeMap;

use glioaug_core::{Error, Result, Scalar};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Grads, Graph, Var};
use crate::tensor::Tensor;

/// Named trainable tensors plus non-trainable buffers (e.g. running statistics).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    /// Total number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Every tensor, parameters first, under `param.`/`buffer.` prefixes.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        self.params
            .iter()
            .map(|(k, v)| (format!("param.{k}"), v))
            .chain(self.buffers.iter().map(|(k, v)| (format!("buffer.{k}"), v)))
    }

    /// Inverse of [`ParamStore::tensors`].
    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<Self> {
        let mut s = ParamStore::new();
        for (k, v) in tensors {
            if let Some(n) = k.strip_prefix("param.") {
                s.insert_param(n, v);
            } else if let Some(n) = k.strip_prefix("buffer.") {
                s.insert_buffer(n, v);
            } else {
                return Err(Error::Invalid(format!("tensor {k:?} is neither a param nor a buffer")));
            }
        }
        Ok(s)
    }

    /// Fails unless `other` holds tensors of the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore<T>) -> Result<()> {
        let shapes = |s: &ParamStore<T>| -> Vec<(String, [usize; 4])> {
            s.tensors().map(|(k, t)| (k, t.shape())).collect()
        };
        let (a, b) = (shapes(self), shapes(other));
        if a != b {
            let missing: Vec<_> = a.iter().filter(|x| !b.contains(x)).map(|x| &x.0).collect();
            return Err(Error::Invalid(format!("parameter layout differs (e.g. {missing:?})")));
        }
        Ok(())
    }
}

/// He-style normal initialization: `sd = gain / sqrt(fan_in)`.
pub fn he_normal<T: Scalar>(shape: [usize; 4], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive sd");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::lit(dist.sample(rng)))
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Parameters of one store bound into one graph.
///
/// Trainable bindings create gradient-carrying leaves; frozen bindings bind
/// constants, so gradients still flow through the network to its inputs but
/// not into its weights.
pub struct Binding<'s, T> {
    store: &'s ParamStore<T>,
    trainable: bool,
    train_mode: bool,
    vars: BTreeMap<String, Var>,
    buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<'s, T: Scalar> Binding<'s, T> {
    pub fn trainable(store: &'s ParamStore<T>) -> Self {
        Binding {
            store,
            trainable: true,
            train_mode: true,
            vars: BTreeMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// Constant weights, inference-mode normalization.
    pub fn frozen(store: &'s ParamStore<T>) -> Self {
        Binding {
            store,
            trainable: false,
            train_mode: false,
            vars: BTreeMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// Whether batch normalization uses batch statistics.
    pub fn with_train_mode(mut self, on: bool) -> Self {
        self.train_mode = on;
        self
    }

    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Leaf for parameter `name`, created on first use.
    ///
    /// # Panics
    /// If the store has no such parameter.
    pub fn param(&mut self, g: &mut Graph<T>, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let t = self
            .store
            .param(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not in store"))
            .clone();
        let v = if self.trainable { g.param(t) } else { g.input(t) };
        self.vars.insert(name.to_string(), v);
        v
    }

    pub fn buffer(&self, name: &str) -> &Tensor<T> {
        self.store
            .buffer(name)
            .unwrap_or_else(|| panic!("buffer {name:?} not in store"))
    }

    pub fn queue_buffer_update(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.buffer_updates.push((name.into(), t));
    }

    /// Gradient of every bound parameter (zeros when none reached it).
    pub fn grads(&self, g: &Graph<T>, grads: &Grads<T>) -> Vec<(String, Tensor<T>)> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let t = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
                (k.clone(), t)
            })
            .collect()
    }

    pub fn into_buffer_updates(self) -> Vec<(String, Tensor<T>)> {
        self.buffer_updates
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn apply_buffer_updates(&mut self, updates: Vec<(String, Tensor<T>)>) {
        for (k, v) in updates {
            self.buffers.insert(k, v);
        }
    }
}
