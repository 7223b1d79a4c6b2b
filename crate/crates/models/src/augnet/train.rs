//! Adversarial training loop and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use glioaug_core::brainmap::build_brainmap;
use glioaug_core::{BrainMap, Image2, MapPyramid, Modality, PatientCase, Scalar};
use glioaug_nn::{Adam, AdamConfig, Archive, Binding, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AugConfig, LossWeights};
use super::losses::{
    discriminator_loss, generator_adv_loss, mean_abs_diff, perceptual_terms, rebalance_weights, TermMeans,
};
use super::networks::{FeatureExtractor, Generator, PatchDiscriminator, FEATURE_LAYERS};
use crate::error::{Error, Result};

/// One conditioning map with its target image, both `top x top`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair<T> {
    pub map: BrainMap,
    /// Intensities divided by the source volume's maximum.
    pub target: Image2<T>,
}

/// Per-slice pairs for `modality`, plus the mean volume maximum used to map
/// generator output back to intensities.
pub fn training_pairs<T: Scalar>(
    cases: &[PatientCase<T>],
    modality: Modality,
    config: &AugConfig,
) -> Result<(Vec<TrainingPair<T>>, f64)> {
    let top = config.generator.top_resolution;
    let mut pairs = Vec::new();
    let mut maxima = Vec::new();
    for case in cases {
        let Some(labels) = case.labels() else { continue };
        let volume = case.volume(modality)?;
        let max = volume.max_value();
        if max <= T::zero() {
            return Err(Error::Core(glioaug_core::Error::AllZero));
        }
        maxima.push(max.as_f64());
        let map = build_brainmap(volume, Some(labels))?;
        let [x, y, z] = volume.shape();
        let brain: Vec<usize> = (0..z)
            .filter(|&k| map.slice(k).tiers().iter().any(|&t| t != 0))
            .collect();
        let chosen: Vec<usize> = match config.training.slices_per_case {
            0 => brain.clone(),
            n if n >= brain.len() => brain.clone(),
            n => (0..n).map(|i| brain[(2 * i + 1) * brain.len() / (2 * n)]).collect(),
        };
        for k in chosen {
            let data = volume.slice_z(k).iter().map(|&v| v / max).collect();
            let target = Image2::new(1, y, x, data)?.pad_crop(top, T::zero());
            pairs.push(TrainingPair {
                map: map.slice(k).pad_crop(top),
                target,
            });
        }
    }
    if maxima.is_empty() {
        return Err(Error::Invalid("GAN training needs at least one labelled case".into()));
    }
    let scale = maxima.iter().sum::<f64>() / maxima.len() as f64;
    Ok((pairs, scale))
}

/// Loss values of one generator/discriminator step pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_total: f64,
    pub pixel: f64,
    pub perceptual: Vec<f64>,
    pub adversarial: f64,
}

/// Epoch means of the unweighted terms and the weights in force afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_total: f64,
    pub pixel: f64,
    pub perceptual: Vec<f64>,
    pub adversarial: f64,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn csv_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|e| Error::Invalid(format!("history value {f:?}: {e}"))))
        .collect()
}

impl LossHistory {
    pub fn steps_csv(&self) -> String {
        let mut s = format!("step,epoch,d_loss,g_total,pixel,{},adversarial\n", FEATURE_LAYERS.join(","));
        for r in &self.steps {
            let mut v = vec![r.d_loss, r.g_total, r.pixel];
            v.extend(&r.perceptual);
            v.push(r.adversarial);
            let _ = writeln!(s, "{},{},{}", r.step, r.epoch, csv_floats(&v));
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let w: Vec<String> = FEATURE_LAYERS.iter().map(|l| format!("w_{l}")).collect();
        let mut s = format!(
            "epoch,d_loss,g_total,pixel,{},adversarial,{},w_pixel,w_adversarial\n",
            FEATURE_LAYERS.join(","),
            w.join(",")
        );
        for r in &self.epochs {
            let mut v = vec![r.d_loss, r.g_total, r.pixel];
            v.extend(&r.perceptual);
            v.push(r.adversarial);
            v.extend(&r.weights.perceptual);
            v.push(r.weights.pixel);
            v.push(r.weights.adversarial);
            let _ = writeln!(s, "{},{}", r.epoch, csv_floats(&v));
        }
        s
    }

    pub fn parse(steps_csv: &str, epochs_csv: &str) -> Result<Self> {
        let layers = FEATURE_LAYERS.len();
        let mut steps = Vec::new();
        for line in steps_csv.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 + layers {
                return Err(Error::Invalid(format!("bad step history row {line:?}")));
            }
            let v = parse_floats(&f[2..])?;
            steps.push(StepRecord {
                step: f[0].parse().map_err(|_| Error::Invalid(format!("bad step {:?}", f[0])))?,
                epoch: f[1].parse().map_err(|_| Error::Invalid(format!("bad epoch {:?}", f[1])))?,
                d_loss: v[0],
                g_total: v[1],
                pixel: v[2],
                perceptual: v[3..3 + layers].to_vec(),
                adversarial: v[3 + layers],
            });
        }
        let mut epochs = Vec::new();
        for line in epochs_csv.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 + 2 * layers {
                return Err(Error::Invalid(format!("bad epoch history row {line:?}")));
            }
            let v = parse_floats(&f[1..])?;
            let w = &v[4 + layers..];
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::Invalid(format!("bad epoch {:?}", f[0])))?,
                d_loss: v[0],
                g_total: v[1],
                pixel: v[2],
                perceptual: v[3..3 + layers].to_vec(),
                adversarial: v[3 + layers],
                weights: LossWeights {
                    perceptual: w[..layers].to_vec(),
                    pixel: w[layers],
                    adversarial: w[layers + 1],
                },
            });
        }
        Ok(LossHistory { steps, epochs })
    }

    /// Mean per-pixel loss over steps `range`.
    pub fn pixel_mean(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.steps[range];
        s.iter().map(|r| r.pixel).sum::<f64>() / s.len() as f64
    }
}

/// Trained networks of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AugCheckpoint<T> {
    pub config: AugConfig,
    pub modality: Modality,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub generator: ParamStore<T>,
    pub discriminator: ParamStore<T>,
    /// Weights in force at the end of training.
    pub weights: LossWeights,
    pub history: LossHistory,
    /// Multiplier from generator output to intensities.
    pub intensity_scale: f64,
}

const GEN_PREFIX: &str = "generator/";
const DISC_PREFIX: &str = "discriminator/";

impl<T: Scalar> AugCheckpoint<T> {
    pub fn generator_net(&self) -> Result<Generator> {
        Generator::new(&self.config.generator)
    }

    pub fn to_archive(&self) -> Archive<T> {
        let mut a = Archive::new();
        a.meta.insert("kind".into(), "augnet".into());
        a.meta.insert("modality".into(), self.modality.to_string());
        a.meta.insert("epoch".into(), self.epoch.to_string());
        a.meta.insert("seed".into(), self.seed.to_string());
        a.meta.insert("intensity_scale".into(), self.intensity_scale.to_string());
        a.meta.insert(
            "loss_reduction".into(),
            "per-pixel mean; summed form = mean x element count".into(),
        );
        a.texts.insert("config.toml".into(), self.config.to_toml());
        a.texts.insert(
            "weights.toml".into(),
            toml::to_string(&self.weights).expect("weights serialize"),
        );
        a.texts.insert("history_steps.csv".into(), self.history.steps_csv());
        a.texts.insert("history_epochs.csv".into(), self.history.epochs_csv());
        for (k, t) in self.generator.tensors() {
            a.tensors.push((format!("{GEN_PREFIX}{k}"), t.clone()));
        }
        for (k, t) in self.discriminator.tensors() {
            a.tensors.push((format!("{DISC_PREFIX}{k}"), t.clone()));
        }
        a
    }

    pub fn from_archive(a: Archive<T>) -> Result<Self> {
        if a.meta("kind") != Some("augnet") {
            return Err(Error::Invalid("archive is not a GAN checkpoint".into()));
        }
        let text = |k: &str| {
            a.texts
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            a.require_meta(k)?
                .parse()
                .map_err(|_| Error::Invalid(format!("bad meta {k}")))
        };
        let config = AugConfig::from_toml(&text("config.toml")?)?;
        let weights: LossWeights =
            toml::from_str(&text("weights.toml")?).map_err(|e| Error::Invalid(format!("weights: {e}")))?;
        let history = LossHistory::parse(&text("history_steps.csv")?, &text("history_epochs.csv")?)?;
        let modality: Modality = a.require_meta("modality")?.parse()?;
        let epoch = num("epoch")? as usize;
        let seed: u64 = a
            .require_meta("seed")?
            .parse()
            .map_err(|_| Error::Invalid("bad meta seed".into()))?;
        let intensity_scale = num("intensity_scale")?;
        let split = |prefix: &str| {
            ParamStore::from_tensors(
                a.tensors
                    .iter()
                    .filter_map(|(k, t)| k.strip_prefix(prefix).map(|n| (n.to_string(), t.clone()))),
            )
        };
        let generator = split(GEN_PREFIX)?;
        let discriminator = split(DISC_PREFIX)?;
        generator.check_compatible(&Generator::new(&config.generator)?.init::<T>(0))?;
        discriminator.check_compatible(&PatchDiscriminator::new(&config.discriminator).init::<T>(0))?;
        Ok(AugCheckpoint {
            config,
            modality,
            epoch,
            seed,
            generator,
            discriminator,
            weights,
            history,
            intensity_scale,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_archive().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::read(path)?)
    }
}

/// Graph nodes of the generator objective.
#[derive(Debug, Clone)]
pub struct GeneratorTerms {
    pub total: Var,
    pub pixel: Var,
    pub perceptual: Vec<Var>,
    pub adversarial: Var,
}

/// Records the weighted generator objective for synthetic batch `fake`
/// against `real`, with the discriminator frozen.
#[allow(clippy::too_many_arguments)]
pub fn generator_terms<T: Scalar>(
    g: &mut Graph<T>,
    disc: &PatchDiscriminator,
    disc_params: &ParamStore<T>,
    ext: &FeatureExtractor<T>,
    fake: Var,
    real: Var,
    map: Var,
    weights: &LossWeights,
) -> GeneratorTerms {
    let mut dp = Binding::frozen(disc_params);
    let logits = disc.forward(g, &mut dp, fake, map);
    let adversarial = generator_adv_loss(g, logits);
    let pixel = mean_abs_diff(g, real, fake);
    let perceptual = perceptual_terms(g, ext, real, fake);
    let mut terms: Vec<(T, Var)> = weights
        .perceptual
        .iter()
        .zip(&perceptual)
        .map(|(&w, &v)| (T::lit(w), v))
        .collect();
    terms.push((T::lit(weights.pixel), pixel));
    terms.push((T::lit(weights.adversarial), adversarial));
    let total = g.weighted_sum(&terms);
    GeneratorTerms {
        total,
        pixel,
        perceptual,
        adversarial,
    }
}

fn guard(term: &str, step: usize, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged {
            term: term.to_string(),
            step,
            value,
        })
    }
}

fn mean_of(records: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len().max(1) as f64
}

fn term_means(records: &[StepRecord]) -> TermMeans {
    let layers = records.first().map_or(0, |r| r.perceptual.len());
    TermMeans {
        perceptual: (0..layers).map(|i| mean_of(records, |r| r.perceptual[i])).collect(),
        pixel: mean_of(records, |r| r.pixel),
        adversarial: mean_of(records, |r| r.adversarial),
    }
}

/// Trains one modality's networks on its labelled cases.
pub fn train_augnet<T: Scalar>(cases: &[PatientCase<T>], modality: Modality, config: &AugConfig) -> Result<AugCheckpoint<T>> {
    let (pairs, scale) = training_pairs(cases, modality, config)?;
    train_pairs(&pairs, modality, config, scale, &mut |_| {})
}

/// Alternating discriminator/generator steps over shuffled mini-batches.
/// `on_step` sees every step record as it is produced.
pub fn train_pairs<T: Scalar>(
    pairs: &[TrainingPair<T>],
    modality: Modality,
    config: &AugConfig,
    intensity_scale: f64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<AugCheckpoint<T>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    let tc = &config.training;
    let gen = Generator::new(&config.generator)?;
    let disc = PatchDiscriminator::new(&config.discriminator);
    let ext = FeatureExtractor::<T>::new(&config.extractor);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut gstore = gen.init::<T>(rng.next_u64());
    let mut dstore = disc.init::<T>(rng.next_u64());
    let adam = AdamConfig {
        lr: tc.lr,
        beta1: tc.beta1,
        beta2: tc.beta2,
        ..AdamConfig::default()
    };
    let mut gopt = Adam::new(adam.clone());
    let mut dopt = Adam::new(adam);
    let pyramids: Vec<MapPyramid> = pairs.iter().map(|p| gen.pyramid(&p.map)).collect::<Result<_>>()?;
    let mut weights = tc.weights.clone();
    let mut history = LossHistory::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let first = history.steps.len();
        for batch in order.chunks(tc.batch_size) {
            let pyr: Vec<MapPyramid> = batch.iter().map(|&i| pyramids[i].clone()).collect();
            let levels = gen.encode::<T>(&pyr)?;
            let top_map = levels.last().expect("levels").clone();
            let targets: Vec<Image2<T>> = batch.iter().map(|&i| pairs[i].target.clone()).collect();
            let real = Tensor::from_images(&targets)?;

            let mut g = Graph::new();
            let lv: Vec<Var> = levels.into_iter().map(|t| g.input(t)).collect();
            let mut gp = Binding::trainable(&gstore);
            let fake = gen.forward(&mut g, &mut gp, &lv);

            let d_loss = {
                let mut dg = Graph::new();
                let m = dg.input(top_map.clone());
                let r = dg.input(real.clone());
                let f = dg.input(g.value(fake).clone());
                let mut dp = Binding::trainable(&dstore);
                let lr = disc.forward(&mut dg, &mut dp, r, m);
                let lf = disc.forward(&mut dg, &mut dp, f, m);
                let loss = discriminator_loss(&mut dg, lr, lf);
                let v = guard("discriminator", step, dg.value(loss).item().as_f64())?;
                let grads = dg.backward(loss);
                let gr = dp.grads(&dg, &grads);
                dopt.step(&mut dstore, &gr);
                v
            };

            let m = g.input(top_map);
            let r = g.input(real);
            let terms = generator_terms(&mut g, &disc, &dstore, &ext, fake, r, m, &weights);
            let (pix, adv, total, perc) = (terms.pixel, terms.adversarial, terms.total, terms.perceptual);

            let mut perceptual = Vec::with_capacity(perc.len());
            for (l, &v) in FEATURE_LAYERS.iter().zip(&perc) {
                perceptual.push(guard(&format!("perceptual:{l}"), step, g.value(v).item().as_f64())?);
            }
            let record = StepRecord {
                step,
                epoch,
                d_loss,
                pixel: guard("pixel", step, g.value(pix).item().as_f64())?,
                adversarial: guard("adversarial", step, g.value(adv).item().as_f64())?,
                g_total: guard("generator", step, g.value(total).item().as_f64())?,
                perceptual,
            };
            let grads = g.backward(total);
            let gr = gp.grads(&g, &grads);
            drop(gp);
            gopt.step(&mut gstore, &gr);
            on_step(&record);
            history.steps.push(record);
            step += 1;
        }
        let window = &history.steps[first..];
        let means = term_means(window);
        if tc.rebalance_every > 0 && (epoch + 1) % tc.rebalance_every == 0 {
            let span = tc.rebalance_every.min(epoch + 1);
            let from = history.steps.partition_point(|r| r.epoch + span <= epoch);
            weights = rebalance_weights(&term_means(&history.steps[from..]), &weights, tc.weight_bounds);
        }
        history.epochs.push(EpochRecord {
            epoch,
            d_loss: mean_of(window, |r| r.d_loss),
            g_total: mean_of(window, |r| r.g_total),
            pixel: means.pixel,
            perceptual: means.perceptual,
            adversarial: means.adversarial,
            weights: weights.clone(),
        });
    }
    Ok(AugCheckpoint {
        config: config.clone(),
        modality,
        epoch: tc.epochs,
        seed: tc.seed,
        generator: gstore,
        discriminator: dstore,
        weights,
        history,
        intensity_scale,
    })
}
