//! U-Net training with validation-loss checkpoint selection.

use std::fmt::Write as _;
use std::path::Path;

use glioaug_core::preprocess::{extract_tumor_patch, label_slices, normalize_case, validation_slices, PatchOptions, SEG_CHANNELS};
use glioaug_core::{Image2, PatientCase, Region, Scalar};
use glioaug_nn::{Adam, AdamConfig, Archive, Binding, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SegConfig;
use super::loss::{dice_loss_node, soft_dice};
use super::unet::UNet;
use crate::error::{Error, Result};

/// Input slice and binary target of one region, both at the network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample<T> {
    pub image: Image2<T>,
    pub target: Image2<T>,
}

fn region_target<T: Scalar>(labels: &Image2<u8>, region: Region, size: usize) -> Image2<T> {
    let (_, h, w) = labels.dims();
    let data = labels
        .data()
        .iter()
        .map(|&l| if region.contains(l as i32) { T::one() } else { T::zero() })
        .collect();
    Image2::new(1, h, w, data).expect("plane").pad_crop(size, T::zero())
}

/// Tumor-slab training samples (with flips) of normalized cases.
pub fn training_samples<T: Scalar>(cases: &[PatientCase<T>], region: Region, config: &SegConfig) -> Result<Vec<SegSample<T>>> {
    let size = config.unet.resolution;
    let opts = PatchOptions {
        channels: SEG_CHANNELS.to_vec(),
        flip: config.training.flip,
        depth: config.training.patch_depth,
    };
    let mut out = Vec::new();
    for case in cases {
        let norm = normalize_case(case)?;
        for s in extract_tumor_patch(&norm, &opts)?.slices {
            out.push(SegSample {
                image: s.image.pad_crop(size, T::zero()),
                target: region_target(&s.labels, region, size),
            });
        }
    }
    Ok(out)
}

/// Every axial slice of normalized cases, unflipped.
pub fn validation_samples<T: Scalar>(cases: &[PatientCase<T>], region: Region, config: &SegConfig) -> Result<Vec<SegSample<T>>> {
    let size = config.unet.resolution;
    let mut out = Vec::new();
    for case in cases {
        if case.labels().is_none() {
            return Err(Error::Invalid(format!("validation case {} has no labels", case.id())));
        }
        let norm = normalize_case(case)?;
        let images = validation_slices(&norm, &SEG_CHANNELS)?;
        for (img, lab) in images.into_iter().zip(label_slices(&norm)) {
            out.push(SegSample {
                image: img.pad_crop(size, T::zero()),
                target: region_target(&lab, region, size),
            });
        }
    }
    Ok(out)
}

/// Trained U-Net of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct SegCheckpoint<T> {
    pub config: SegConfig,
    pub region: Region,
    pub best_epoch: usize,
    pub val_loss_history: Vec<f64>,
    pub train_loss_history: Vec<f64>,
    pub seed: u64,
    /// Parameters from `best_epoch`.
    pub params: ParamStore<T>,
}

impl<T: Scalar> SegCheckpoint<T> {
    pub fn net(&self) -> Result<UNet> {
        UNet::new(&self.config.unet)
    }

    fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train_loss_history.iter().zip(&self.val_loss_history).enumerate() {
            let _ = writeln!(s, "{i},{t},{v}");
        }
        s
    }

    pub fn to_archive(&self) -> Archive<T> {
        let mut a = Archive::new();
        a.meta.insert("kind".into(), "unet".into());
        a.meta.insert("region".into(), self.region.to_string());
        a.meta.insert("best_epoch".into(), self.best_epoch.to_string());
        a.meta.insert("seed".into(), self.seed.to_string());
        a.texts.insert("config.toml".into(), self.config.to_toml());
        a.texts.insert("history.csv".into(), self.history_csv());
        a.tensors = self.params.tensors().map(|(k, t)| (k, t.clone())).collect();
        a
    }

    pub fn from_archive(a: Archive<T>) -> Result<Self> {
        if a.meta("kind") != Some("unet") {
            return Err(Error::Invalid("archive is not a U-Net checkpoint".into()));
        }
        let config = SegConfig::from_toml(
            a.texts
                .get("config.toml")
                .ok_or_else(|| Error::Invalid("checkpoint lacks config.toml".into()))?,
        )?;
        let region: Region = a.require_meta("region")?.parse()?;
        let bad = |k: &str| Error::Invalid(format!("bad meta {k}"));
        let best_epoch = a.require_meta("best_epoch")?.parse().map_err(|_| bad("best_epoch"))?;
        let seed = a.require_meta("seed")?.parse().map_err(|_| bad("seed"))?;
        let mut train_loss_history = Vec::new();
        let mut val_loss_history = Vec::new();
        let hist = a.texts.get("history.csv").map(String::as_str).unwrap_or("");
        for line in hist.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Invalid(format!("bad history row {line:?}")));
            if f.len() != 3 {
                return Err(Error::Invalid(format!("bad history row {line:?}")));
            }
            train_loss_history.push(parse(f[1])?);
            val_loss_history.push(parse(f[2])?);
        }
        let params = ParamStore::from_tensors(a.tensors)?;
        params.check_compatible(&UNet::new(&config.unet)?.init::<T>(0))?;
        Ok(SegCheckpoint {
            config,
            region,
            best_epoch,
            val_loss_history,
            train_loss_history,
            seed,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_archive().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::read(path)?)
    }
}

/// Mean over samples of `1 - soft dice` of inference-mode predictions.
pub fn validation_loss<T: Scalar>(net: &UNet, params: &ParamStore<T>, samples: &[SegSample<T>], smooth: f64) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(16) {
        let images: Vec<Image2<T>> = chunk.iter().map(|s| s.image.clone()).collect();
        for (pred, s) in net.predict(params, &images)?.iter().zip(chunk) {
            total += 1.0 - soft_dice(s.target.data(), pred.data(), smooth)?;
        }
    }
    Ok(total / samples.len().max(1) as f64)
}

pub fn train_unet<T: Scalar>(
    train_cases: &[PatientCase<T>],
    val_cases: &[PatientCase<T>],
    region: Region,
    config: &SegConfig,
) -> Result<SegCheckpoint<T>> {
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    let train = training_samples(train_cases, region, config)?;
    let val = validation_samples(val_cases, region, config)?;
    train_on_samples(&train, &val, region, config, &mut |_, _, _| {})
}

/// Minibatch Adam on `1 - soft dice`; `on_epoch(epoch, train_loss, val_loss)`
/// is called after each epoch.
pub fn train_on_samples<T: Scalar>(
    train: &[SegSample<T>],
    val: &[SegSample<T>],
    region: Region,
    config: &SegConfig,
    on_epoch: &mut dyn FnMut(usize, f64, f64),
) -> Result<SegCheckpoint<T>> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("no training or validation slices".into()));
    }
    let tc = &config.training;
    let net = UNet::new(&config.unet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut store = net.init::<T>(rng.next_u64());
    let mut opt = Adam::new(AdamConfig {
        lr: tc.lr,
        beta1: tc.beta1,
        beta2: tc.beta2,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = store.clone();
    let mut best_epoch = 0;
    let mut val_hist = Vec::with_capacity(tc.epochs);
    let mut train_hist = Vec::with_capacity(tc.epochs);
    let mut step = 0;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(tc.batch_size) {
            let images: Vec<Image2<T>> = batch.iter().map(|&i| train[i].image.clone()).collect();
            let targets: Vec<Image2<T>> = batch.iter().map(|&i| train[i].target.clone()).collect();
            let mut g = Graph::new();
            let x = g.input(Tensor::from_images(&images)?);
            let y = g.input(Tensor::from_images(&targets)?);
            let mut p = Binding::trainable(&store);
            let pred = net.forward(&mut g, &mut p, x);
            let loss = dice_loss_node(&mut g, y, pred, tc.smooth);
            let v = g.value(loss).item().as_f64();
            if !v.is_finite() {
                return Err(Error::Diverged {
                    term: "dice".into(),
                    step,
                    value: v,
                });
            }
            let grads = g.backward(loss);
            let gr = p.grads(&g, &grads);
            let updates = p.into_buffer_updates();
            opt.step(&mut store, &gr);
            store.apply_buffer_updates(updates);
            sum += v;
            batches += 1;
            step += 1;
        }
        let vl = validation_loss(&net, &store, val, tc.smooth)?;
        if !vl.is_finite() {
            return Err(Error::Diverged {
                term: "validation".into(),
                step,
                value: vl,
            });
        }
        let tl = sum / batches as f64;
        on_epoch(epoch, tl, vl);
        if val_hist.iter().all(|&b| vl < b) {
            best = store.clone();
            best_epoch = epoch;
        }
        val_hist.push(vl);
        train_hist.push(tl);
    }
    Ok(SegCheckpoint {
        config: config.clone(),
        region,
        best_epoch,
        val_loss_history: val_hist,
        train_loss_history: train_hist,
        seed: tc.seed,
        params: best,
    })
}
