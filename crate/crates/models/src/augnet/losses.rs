//! Generator objective terms.
//!
//! Training uses per-pixel (per-feature) means so weights keep their meaning
//! across resolutions; the public [`pixel_loss`] and [`perceptual_loss`]
//! report plain sums.

use glioaug_core::{Image2, Scalar};
use glioaug_nn::{Graph, ParamStore, Tensor, Var, Binding};

use super::config::LossWeights;
use super::networks::{FeatureExtractor, PatchDiscriminator};
use crate::error::{Error, Result};
use glioaug_core::brainmap::one_hot;
use glioaug_core::BrainMap;

fn check_same<T: Copy>(a: &Image2<T>, b: &Image2<T>) -> Result<()> {
    if a.dims() != b.dims() {
        let (c, h, w) = a.dims();
        let (c2, h2, w2) = b.dims();
        return Err(Error::Core(glioaug_core::Error::ShapeMismatch {
            left: vec![c, h, w],
            right: vec![c2, h2, w2],
        }));
    }
    Ok(())
}

/// `sum |real - synthetic|` over all pixels.
pub fn pixel_loss<T: Scalar>(real: &Image2<T>, synthetic: &Image2<T>) -> Result<T> {
    check_same(real, synthetic)?;
    Ok(real
        .data()
        .iter()
        .zip(synthetic.data())
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs()))
}

/// `sum_i w_i * sum |phi_i(real) - phi_i(synthetic)|` over the named layers.
pub fn perceptual_loss<T: Scalar>(
    real: &Image2<T>,
    synthetic: &Image2<T>,
    extractor: &FeatureExtractor<T>,
    layers: &[&str],
    weights: &[T],
) -> Result<T> {
    check_same(real, synthetic)?;
    if layers.len() != weights.len() {
        return Err(Error::Invalid(format!("{} layers but {} weights", layers.len(), weights.len())));
    }
    let idx = layers
        .iter()
        .map(|l| FeatureExtractor::<T>::layer_index(l))
        .collect::<Result<Vec<_>>>()?;
    let fr = extractor.extract(std::slice::from_ref(real))?;
    let fs = extractor.extract(std::slice::from_ref(synthetic))?;
    Ok(idx.iter().zip(weights).fold(T::zero(), |acc, (&i, &w)| {
        let d = fr[i]
            .data()
            .iter()
            .zip(fs[i].data())
            .fold(T::zero(), |s, (&a, &b)| s + (a - b).abs());
        acc + w * d
    }))
}

/// `mean |a - b|` in the graph.
pub fn mean_abs_diff<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean_all(d)
}

/// Per-layer `mean |phi_i(real) - phi_i(syn)|`. `real` is typically a
/// constant input, so only the synthetic branch carries gradient.
pub fn perceptual_terms<T: Scalar>(g: &mut Graph<T>, extractor: &FeatureExtractor<T>, real: Var, syn: Var) -> Vec<Var> {
    let fr = extractor.features(g, real);
    let fs = extractor.features(g, syn);
    fr.into_iter().zip(fs).map(|(a, b)| mean_abs_diff(g, a, b)).collect()
}

/// Discriminator loss `mean softplus(-D(real)) + mean softplus(D(syn))`.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, real_logits: Var, syn_logits: Var) -> Var {
    let neg = g.scale(real_logits, -T::one());
    let a = g.softplus(neg);
    let a = g.mean_all(a);
    let b = g.softplus(syn_logits);
    let b = g.mean_all(b);
    g.add(a, b)
}

/// Non-saturating generator loss `mean softplus(-D(syn))`.
pub fn generator_adv_loss<T: Scalar>(g: &mut Graph<T>, syn_logits: Var) -> Var {
    let neg = g.scale(syn_logits, -T::one());
    let a = g.softplus(neg);
    g.mean_all(a)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(loss_D, loss_G)` from raw patch logits.
pub fn adversarial_from_logits<T: Scalar>(real_logits: &[T], syn_logits: &[T]) -> (T, T) {
    let mean = |v: &[T], f: &dyn Fn(f64) -> f64| v.iter().map(|x| f(x.as_f64())).sum::<f64>() / v.len().max(1) as f64;
    let d = mean(real_logits, &|x| softplus(-x)) + mean(syn_logits, &softplus);
    let gl = mean(syn_logits, &|x| softplus(-x));
    (T::lit(d), T::lit(gl))
}

/// Patch losses of `discriminator` on one real/synthetic pair conditioned on `map`.
pub fn adversarial_loss<T: Scalar>(
    discriminator: &PatchDiscriminator,
    params: &ParamStore<T>,
    real: &Image2<T>,
    synthetic: &Image2<T>,
    map: &BrainMap,
) -> Result<(T, T)> {
    check_same(real, synthetic)?;
    let enc: Image2<T> = one_hot(map);
    if (enc.height(), enc.width()) != (real.height(), real.width()) {
        return Err(Error::Invalid("map and image sizes differ".into()));
    }
    let mut g = Graph::new();
    let m = g.input(Tensor::from_images(&[enc])?);
    let r = g.input(Tensor::from_images(std::slice::from_ref(real))?);
    let s = g.input(Tensor::from_images(std::slice::from_ref(synthetic))?);
    let mut p = Binding::frozen(params);
    let lr = discriminator.forward(&mut g, &mut p, r, m);
    let ls = discriminator.forward(&mut g, &mut p, s, m);
    Ok(adversarial_from_logits(g.value(lr).data(), g.value(ls).data()))
}

/// `sum_i l_i p_i + l_im L_im + l L_adv`.
pub fn total_generator_loss<T: Scalar>(perceptual: &[T], pixel: T, adversarial: T, w: &LossWeights) -> T {
    let p = perceptual
        .iter()
        .zip(&w.perceptual)
        .fold(T::zero(), |acc, (&v, &l)| acc + T::lit(l) * v);
    p + T::lit(w.pixel) * pixel + T::lit(w.adversarial) * adversarial
}

/// Unweighted term averages over a rebalancing window.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMeans {
    pub perceptual: Vec<f64>,
    pub pixel: f64,
    pub adversarial: f64,
}

/// Rescales every weight so its weighted term matches the weighted pixel
/// term, keeping the pixel weight fixed. Terms with a non-positive mean keep
/// their weight.
pub fn rebalance_weights(means: &TermMeans, w: &LossWeights, bounds: [f64; 2]) -> LossWeights {
    let anchor = w.pixel * means.pixel;
    let fit = |lambda: f64, m: f64| {
        if !(m > 0.0 && m.is_finite()) || !(anchor > 0.0 && anchor.is_finite()) {
            lambda
        } else {
            (anchor / m).clamp(bounds[0], bounds[1])
        }
    };
    LossWeights {
        perceptual: w
            .perceptual
            .iter()
            .zip(&means.perceptual)
            .map(|(&l, &m)| fit(l, m))
            .collect(),
        pixel: w.pixel,
        adversarial: fit(w.adversarial, means.adversarial),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augnet::config::{DiscriminatorConfig, ExtractorConfig};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn pixel_loss_values() {
        let a = Image2::filled(1, 4, 4, 1.0f64);
        let b = Image2::filled(1, 4, 4, 0.0f64);
        assert_eq!(pixel_loss(&a, &b).unwrap(), 16.0);
        assert_eq!(pixel_loss(&b, &a).unwrap(), 16.0);
        assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
        assert!(pixel_loss(&a, &Image2::filled(1, 4, 5, 0.0)).is_err());
    }

    #[test]
    fn perceptual_identity_and_bad_layer() {
        let e = FeatureExtractor::<f64>::new(&ExtractorConfig::default());
        let a = Image2::new(1, 16, 16, (0..256).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let layers = ["pool1", "pool2", "pool3", "pool4"];
        assert_eq!(perceptual_loss(&a, &a, &e, &layers, &[1.0; 4]).unwrap(), 0.0);
        let b = a.flipped_lr();
        assert!(perceptual_loss(&a, &b, &e, &layers, &[1.0; 4]).unwrap() > 0.0);
        assert!(perceptual_loss(&a, &b, &e, &["relu5_4"], &[1.0]).is_err());
    }

    #[test]
    fn zero_logits_give_log_two() {
        let (d, g) = adversarial_from_logits(&[0.0f64; 9], &[0.0; 9]);
        assert!((d - 2.0 * LN2).abs() < 1e-15);
        assert!((g - LN2).abs() < 1e-15);
    }

    #[test]
    fn zeroed_discriminator_gives_log_two() {
        let disc = PatchDiscriminator::new(&DiscriminatorConfig::default());
        let mut store = disc.init::<f64>(0);
        for name in ["head.weight", "head.bias"] {
            store.param_mut(name).unwrap().data_mut().fill(0.0);
        }
        let map = BrainMap::from_parts([16, 16, 1], vec![1; 256], vec![0; 256], glioaug_core::Modality::T1).unwrap();
        let x = Image2::filled(1, 16, 16, 0.3);
        let (d, g) = adversarial_loss(&disc, &store, &x, &x, &map).unwrap();
        assert!((d - 2.0 * LN2).abs() < 1e-12);
        assert!((g - LN2).abs() < 1e-12);
    }

    #[test]
    fn adversarial_losses_finite_for_extreme_logits() {
        let (d, g) = adversarial_from_logits(&[800.0f64, -800.0], &[-800.0, 800.0]);
        assert!(d.is_finite() && g.is_finite());
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights {
            perceptual: vec![1.0],
            pixel: 1.0,
            adversarial: 1.0,
        };
        assert_eq!(total_generator_loss(&[0.0], 0.0, 0.0, &w), 0.0);
        assert_eq!(total_generator_loss(&[2.0], 3.0, 4.0, &w), 9.0);
        let w2 = LossWeights { pixel: 2.0, ..w.clone() };
        assert_eq!(total_generator_loss(&[2.0], 3.0, 4.0, &w2) - 9.0, 3.0);
    }

    #[test]
    fn rebalance_fixed_point_and_anchor() {
        let w = LossWeights {
            perceptual: vec![2.0, 0.5],
            pixel: 1.0,
            adversarial: 0.25,
        };
        let balanced = TermMeans {
            perceptual: vec![0.05, 0.2],
            pixel: 0.1,
            adversarial: 0.4,
        };
        let r = rebalance_weights(&balanced, &w, [1e-4, 1e4]);
        for (a, b) in r.perceptual.iter().zip(&w.perceptual) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((r.adversarial - w.adversarial).abs() < 1e-9);
        assert_eq!(r.pixel, w.pixel);
    }

    #[test]
    fn rebalance_divides_dominant_term() {
        let w = LossWeights {
            perceptual: vec![1.0],
            pixel: 1.0,
            adversarial: 1.0,
        };
        let m = TermMeans {
            perceptual: vec![0.3],
            pixel: 0.3,
            adversarial: 3.0,
        };
        let r = rebalance_weights(&m, &w, [1e-4, 1e4]);
        assert!((r.adversarial - 0.1).abs() < 1e-12);
        let zero = TermMeans { adversarial: 0.0, ..m };
        assert_eq!(rebalance_weights(&zero, &w, [1e-4, 1e4]).adversarial, 1.0);
        let huge = TermMeans {
            perceptual: vec![1e-12],
            pixel: 0.3,
            adversarial: 0.3,
        };
        assert_eq!(rebalance_weights(&huge, &w, [1e-4, 1e4]).perceptual[0], 1e4);
    }
}
