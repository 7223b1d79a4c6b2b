//! Whole-case inference with the three region networks.

use std::collections::BTreeMap;

use glioaug_core::preprocess::{normalize_case, reassemble, validation_slices, SEG_CHANNELS};
use glioaug_core::{BinaryMask, Image2, Modality, PatientCase, Region, Scalar};

use super::cascade::{cascade_postprocess, CascadeOutput, Enhancement};
use super::train::SegCheckpoint;
use crate::error::{Error, Result};

/// Binarization threshold on the sigmoid output.
pub const PROBABILITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Pad or crop slices whose size differs from the networks' resolution.
    pub pad_crop: bool,
    pub enhancement: Enhancement,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            pad_crop: true,
            enhancement: Enhancement::Otsu,
        }
    }
}

/// Per-slice probabilities of one network over a normalized case.
pub fn region_probabilities<T: Scalar>(
    ckpt: &SegCheckpoint<T>,
    slices: &[Image2<T>],
    pad_crop: bool,
) -> Result<Vec<Image2<T>>> {
    let net = ckpt.net()?;
    let size = ckpt.config.unet.resolution;
    let mut out = Vec::with_capacity(slices.len());
    for chunk in slices.chunks(16) {
        let (_, h, w) = chunk[0].dims();
        if (h, w) != (size, size) && !pad_crop {
            return Err(Error::Resolution {
                got: h.max(w),
                expected: size,
            });
        }
        let input: Vec<Image2<T>> = chunk.iter().map(|s| s.pad_crop(size, T::zero())).collect();
        for p in net.predict(&ckpt.params, &input)? {
            out.push(p.unpad_crop(h, w, T::zero()));
        }
    }
    Ok(out)
}

fn binarize<T: Scalar>(probs: &[Image2<T>]) -> Result<BinaryMask> {
    let planes: Vec<Image2<bool>> = probs
        .iter()
        .map(|p| {
            let (_, h, w) = p.dims();
            Image2::new(1, h, w, p.data().iter().map(|v| v.as_f64() > PROBABILITY_THRESHOLD).collect())
                .expect("plane")
        })
        .collect();
    Ok(reassemble(&planes)?)
}

/// Thresholded, reassembled and cascade-processed masks of one case.
pub fn predict_case<T: Scalar>(
    models: &BTreeMap<Region, SegCheckpoint<T>>,
    case: &PatientCase<T>,
    opts: &PredictOptions,
) -> Result<CascadeOutput> {
    let get = |r: Region| models.get(&r).ok_or(Error::MissingRegion(r));
    let (wt_m, et_m, tc_m) = (get(Region::Wt)?, get(Region::Et)?, get(Region::Tc)?);
    let norm = normalize_case(case)?;
    let slices = validation_slices(&norm, &SEG_CHANNELS)?;
    let wt = binarize(&region_probabilities(wt_m, &slices, opts.pad_crop)?)?;
    let et = binarize(&region_probabilities(et_m, &slices, opts.pad_crop)?)?;
    let tc = binarize(&region_probabilities(tc_m, &slices, opts.pad_crop)?)?;
    cascade_postprocess(
        &wt,
        &et,
        &tc,
        norm.volume(Modality::T1ce)?,
        norm.volume(Modality::T1)?,
        opts.enhancement,
    )
}

impl CascadeOutput {
    pub fn masks(&self) -> BTreeMap<Region, &BinaryMask> {
        BTreeMap::from([(Region::Wt, &self.wt), (Region::Et, &self.et), (Region::Tc, &self.tc)])
    }

    /// BraTS label volume: ET as 4, TC outside ET as 1, the rest of WT as 2.
    pub fn to_labels<T: Scalar>(&self, spacing: glioaug_core::Spacing) -> Result<glioaug_core::Volume3D<T>> {
        use glioaug_core::labels::{BRATS_LABELS, EDEMA, ET, NCR};
        let data = (0..self.wt.data().len())
            .map(|i| {
                let code = if self.et.data()[i] {
                    ET
                } else if self.tc.data()[i] {
                    NCR
                } else if self.wt.data()[i] {
                    EDEMA
                } else {
                    0
                };
                T::lit(code as f64)
            })
            .collect();
        Ok(glioaug_core::Volume3D::labels(
            self.wt.shape(),
            spacing,
            Modality::Label,
            BRATS_LABELS.to_vec(),
            data,
        )?)
    }
}
