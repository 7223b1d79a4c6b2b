//! Generator, patch discriminator and the frozen feature extractor.

use glioaug_core::brainmap::{make_pyramid, one_hot, MAP_CLASSES};
use glioaug_core::{BrainMap, Image2, MapPyramid, Scalar};
use glioaug_nn::layers::leaky_gain;
use glioaug_nn::{Binding, Conv2d, Graph, LayerNorm, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DiscriminatorConfig, ExtractorConfig, GeneratorConfig, PYRAMID_BASE};
use crate::error::{Error, Result};

/// Conv, layer norm, leaky rectifier.
#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: LayerNorm,
}

impl ConvNorm {
    fn new(name: &str, in_c: usize, out_c: usize) -> Self {
        ConvNorm {
            conv: Conv2d::new(format!("{name}.conv"), in_c, out_c, 3),
            norm: LayerNorm::new(format!("{name}.norm"), out_c),
        }
    }

    fn init<T: Scalar>(&self, store: &mut ParamStore<T>, gain: f64, rng: &mut ChaCha8Rng) {
        self.conv.init(store, gain, rng);
        self.norm.init(store);
    }

    fn forward_linear<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let y = self.conv.forward(g, p, x);
        self.norm.forward(g, p, y)
    }
}

/// One component `C_i`: entry conv to the level width, then a residual block.
#[derive(Debug, Clone)]
struct Component {
    entry: ConvNorm,
    res_a: ConvNorm,
    res_b: ConvNorm,
}

/// Multi-resolution conditional generator.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    components: Vec<Component>,
    out: Conv2d,
}

impl Generator {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let k = config.depth();
        let components = (0..=k)
            .map(|i| {
                let in_c = if i == 0 { MAP_CLASSES } else { config.width(i - 1) + MAP_CLASSES };
                let w = config.width(i);
                Component {
                    entry: ConvNorm::new(&format!("c{i}.entry"), in_c, w),
                    res_a: ConvNorm::new(&format!("c{i}.res_a"), w, w),
                    res_b: ConvNorm::new(&format!("c{i}.res_b"), w, w),
                }
            })
            .collect();
        Ok(Generator {
            config: config.clone(),
            components,
            out: Conv2d::new("out", config.width(k), 1, 1),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = leaky_gain(self.config.slope);
        let mut store = ParamStore::new();
        for c in &self.components {
            c.entry.init(&mut store, gain, &mut rng);
            c.res_a.init(&mut store, gain, &mut rng);
            c.res_b.init(&mut store, gain, &mut rng);
        }
        self.out.init(&mut store, 1.0, &mut rng);
        store
    }

    /// Batched one-hot pyramids, one tensor per level from 4x4 upward.
    pub fn encode<T: Scalar>(&self, pyramids: &[MapPyramid]) -> Result<Vec<Tensor<T>>> {
        for p in pyramids {
            if p.top_resolution() != self.config.top_resolution || p.levels.len() != self.components.len() {
                return Err(Error::Resolution {
                    got: p.top_resolution(),
                    expected: self.config.top_resolution,
                });
            }
        }
        (0..self.components.len())
            .map(|i| {
                let images: Vec<Image2<T>> = pyramids.iter().map(|p| one_hot(&p.levels[i])).collect();
                Tensor::from_images(&images).map_err(Error::Core)
            })
            .collect()
    }

    /// Pyramid of a planar map already at the top resolution.
    pub fn pyramid(&self, map: &BrainMap) -> Result<MapPyramid> {
        if map.shape() != [self.config.top_resolution, self.config.top_resolution, 1] {
            return Err(Error::Resolution {
                got: map.shape()[0].max(map.shape()[1]),
                expected: self.config.top_resolution,
            });
        }
        Ok(make_pyramid(map, PYRAMID_BASE, self.config.top_resolution)?)
    }

    /// Records the forward pass; `levels` come from [`Generator::encode`].
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, levels: &[Var]) -> Var {
        let slope = T::lit(self.config.slope);
        let mut h: Option<Var> = None;
        for (c, &map) in self.components.iter().zip(levels) {
            let x = match h {
                None => map,
                Some(prev) => {
                    let up = g.upsample2(prev);
                    g.concat(&[up, map])
                }
            };
            let e = c.entry.forward_linear(g, p, x);
            let e = g.leaky_relu(e, slope);
            let r = c.res_a.forward_linear(g, p, e);
            let r = g.leaky_relu(r, slope);
            let r = c.res_b.forward_linear(g, p, r);
            let sum = g.add(r, e);
            h = Some(g.leaky_relu(sum, slope));
        }
        self.out.forward(g, p, h.expect("at least one component"))
    }

    /// Synthesizes one image per pyramid (values in training-target units).
    pub fn generate_batch<T: Scalar>(&self, store: &ParamStore<T>, pyramids: &[MapPyramid]) -> Result<Vec<Image2<T>>> {
        let mut g = Graph::new();
        let levels: Vec<Var> = self.encode(pyramids)?.into_iter().map(|t| g.input(t)).collect();
        let mut p = Binding::frozen(store);
        let y = self.forward(&mut g, &mut p, &levels);
        Ok(g.value(y).to_images())
    }
}

/// Single-image generation from a pyramid whose top matches the config.
pub fn generate<T: Scalar>(config: &GeneratorConfig, params: &ParamStore<T>, pyramid: &MapPyramid) -> Result<Image2<T>> {
    let gen = Generator::new(config)?;
    Ok(gen.generate_batch(params, std::slice::from_ref(pyramid))?.remove(0))
}

/// Fully convolutional patch classifier on `concat(image, one_hot(map))`.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    slope: f64,
    conv1: Conv2d,
    conv2: Conv2d,
    norm2: LayerNorm,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(config: &DiscriminatorConfig) -> Self {
        let w = config.base_features;
        PatchDiscriminator {
            slope: config.slope,
            conv1: Conv2d::new("d1", 1 + MAP_CLASSES, w, 4).strided(2, 1),
            conv2: Conv2d::new("d2", w, 2 * w, 4).strided(2, 1),
            norm2: LayerNorm::new("d2.norm", 2 * w),
            head: Conv2d::new("head", 2 * w, 1, 3),
        }
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = leaky_gain(self.slope);
        let mut store = ParamStore::new();
        self.conv1.init(&mut store, gain, &mut rng);
        self.conv2.init(&mut store, gain, &mut rng);
        self.norm2.init(&mut store);
        self.head.init(&mut store, 1.0, &mut rng);
        store
    }

    /// Patch logits, shape `[N, 1, H/4, W/4]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, image: Var, map: Var) -> Var {
        let slope = T::lit(self.slope);
        let x = g.concat(&[image, map]);
        let h = self.conv1.forward(g, p, x);
        let h = g.leaky_relu(h, slope);
        let h = self.conv2.forward(g, p, h);
        let h = self.norm2.forward(g, p, h);
        let h = g.leaky_relu(h, slope);
        self.head.forward(g, p, h)
    }
}

/// Per-channel input statistics the extractor expects (ImageNet convention).
pub const EXTRACTOR_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const EXTRACTOR_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Names of the feature maps the extractor exposes.
pub const FEATURE_LAYERS: [&str; 4] = ["pool1", "pool2", "pool3", "pool4"];

/// Frozen VGG-style classifier trunk: four conv-ReLU-maxpool blocks with
/// deterministic random weights.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T> {
    convs: Vec<Conv2d>,
    store: ParamStore<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(config: &ExtractorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut in_c = 3;
        let convs = config
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv2d::new(format!("block{}", i + 1), in_c, w, 3);
                c.init(&mut store, leaky_gain(0.0), &mut rng);
                in_c = w;
                c
            })
            .collect();
        FeatureExtractor { convs, store }
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn layer_index(name: &str) -> Result<usize> {
        FEATURE_LAYERS
            .iter()
            .position(|&l| l == name)
            .ok_or_else(|| Error::Invalid(format!("extractor has no layer {name:?} (available: {FEATURE_LAYERS:?})")))
    }

    /// Records the frozen forward pass of a single-channel batch; returns the
    /// four pooled feature maps. Gradients flow to `image` only.
    pub fn features(&self, g: &mut Graph<T>, image: Var) -> Vec<Var> {
        let rgb = g.concat(&[image, image, image]);
        let scale: Vec<T> = EXTRACTOR_STD.iter().map(|s| T::lit(1.0 / s)).collect();
        let shift: Vec<T> = EXTRACTOR_MEAN
            .iter()
            .zip(EXTRACTOR_STD)
            .map(|(m, s)| T::lit(-m / s))
            .collect();
        let mut h = g.channel_affine(rgb, &scale, &shift);
        let mut p = Binding::frozen(&self.store);
        let mut out = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let y = c.forward(g, &mut p, h);
            let y = g.relu(y);
            h = g.maxpool2(y);
            out.push(h);
        }
        out
    }

    /// Feature tensors of a batch, outside any training graph.
    pub fn extract(&self, images: &[Image2<T>]) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_images(images)?);
        let f = self.features(&mut g, x);
        Ok(f.into_iter().map(|v| g.value(v).clone()).collect())
    }
}
