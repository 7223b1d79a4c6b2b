//! Four-level 2D U-Net with batch normalization and a sigmoid head.

use glioaug_core::{Image2, Scalar};
use glioaug_nn::{BatchNorm, Binding, Conv2d, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{UNetConfig, SCALING_LAYERS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct DoubleConv {
    c1: Conv2d,
    n1: BatchNorm,
    c2: Conv2d,
    n2: BatchNorm,
}

fn conv_nobias(name: String, in_c: usize, out_c: usize) -> Conv2d {
    Conv2d {
        bias: false,
        ..Conv2d::new(name, in_c, out_c, 3)
    }
}

impl DoubleConv {
    fn new(name: &str, in_c: usize, out_c: usize) -> Self {
        DoubleConv {
            c1: conv_nobias(format!("{name}.conv1"), in_c, out_c),
            n1: BatchNorm::new(format!("{name}.bn1"), out_c),
            c2: conv_nobias(format!("{name}.conv2"), out_c, out_c),
            n2: BatchNorm::new(format!("{name}.bn2"), out_c),
        }
    }

    fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.c1.init(store, 2f64.sqrt(), rng);
        self.n1.init(store);
        self.c2.init(store, 2f64.sqrt(), rng);
        self.n2.init(store);
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let h = self.c1.forward(g, p, x);
        let h = self.n1.forward(g, p, h);
        let h = g.relu(h);
        let h = self.c2.forward(g, p, h);
        let h = self.n2.forward(g, p, h);
        g.relu(h)
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    down: Vec<DoubleConv>,
    up: Vec<Conv2d>,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl UNet {
    pub fn new(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let w = |l: usize| config.base_features << l;
        let down = (0..=SCALING_LAYERS)
            .map(|l| {
                let in_c = if l == 0 { config.in_channels() } else { w(l - 1) };
                DoubleConv::new(&format!("enc{l}"), in_c, w(l))
            })
            .collect();
        let up = (0..SCALING_LAYERS)
            .map(|l| Conv2d::new(format!("up{l}"), w(l + 1), w(l), 3))
            .collect();
        let dec = (0..SCALING_LAYERS)
            .map(|l| DoubleConv::new(&format!("dec{l}"), 2 * w(l), w(l)))
            .collect();
        Ok(UNet {
            config: config.clone(),
            down,
            up,
            dec,
            head: Conv2d::new("head", w(0), 1, 1),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for d in &self.down {
            d.init(&mut store, &mut rng);
        }
        for (u, d) in self.up.iter().zip(&self.dec) {
            u.init(&mut store, 2f64.sqrt(), &mut rng);
            d.init(&mut store, &mut rng);
        }
        self.head.init(&mut store, 1.0, &mut rng);
        store
    }

    /// Probability map `[N, 1, H, W]` for input `[N, 3, H, W]`.
    ///
    /// # Panics
    /// If `H` or `W` is not a multiple of 16; [`UNet::check_input`] reports this as an error.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let logits = self.logits(g, p, x);
        g.sigmoid(logits)
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, p: &mut Binding<T>, x: Var) -> Var {
        let [_, _, h, w] = g.value(x).shape();
        assert!(
            h % (1 << SCALING_LAYERS) == 0 && w % (1 << SCALING_LAYERS) == 0,
            "U-Net input {h}x{w} is not divisible by 16"
        );
        let mut skips = Vec::with_capacity(SCALING_LAYERS);
        let mut h = x;
        for (l, d) in self.down.iter().enumerate() {
            if l > 0 {
                h = g.maxpool2(h);
            }
            h = d.forward(g, p, h);
            if l < SCALING_LAYERS {
                skips.push(h);
            }
        }
        for l in (0..SCALING_LAYERS).rev() {
            let u = g.upsample2(h);
            let u = self.up[l].forward(g, p, u);
            let u = g.relu(u);
            let cat = g.concat(&[skips[l], u]);
            h = self.dec[l].forward(g, p, cat);
        }
        self.head.forward(g, p, h)
    }

    pub fn check_input<T: Copy>(&self, image: &Image2<T>) -> Result<()> {
        let k = 1 << SCALING_LAYERS;
        if image.channels() != self.config.in_channels() || image.height() % k != 0 || image.width() % k != 0 {
            return Err(Error::Invalid(format!(
                "U-Net input must be {} channels with sides divisible by {k}, got {}x{}x{}",
                self.config.in_channels(),
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Inference-mode probabilities for a batch of slices.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, images: &[Image2<T>]) -> Result<Vec<Image2<T>>> {
        for img in images {
            self.check_input(img)?;
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::from_images(images)?);
        let mut p = Binding::frozen(store);
        let y = self.forward(&mut g, &mut p, x);
        Ok(g.value(y).to_images())
    }
}
