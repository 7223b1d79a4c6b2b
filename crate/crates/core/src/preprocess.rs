//! Intensity normalization, tumor-covering slab extraction and flip augmentation.

use std::ops::Range;

use crate::case::PatientCase;
use crate::error::{Error, Result};
use crate::image::{flip_lr, Image2};
use crate::labels::{region_mask, BinaryMask, Region};
use crate::scalar::Scalar;
use crate::volume::{Modality, Volume3D};

/// Axial slab depth used for training patches.
pub const PATCH_DEPTH: usize = 64;

/// Channels stacked as segmentation network input.
pub const SEG_CHANNELS: [Modality; 3] = [Modality::T1, Modality::T2, Modality::Flair];

/// Brain mask of a skull-stripped volume: every voxel above zero.
pub fn brain_mask<T: Scalar>(volume: &Volume3D<T>) -> BinaryMask {
    let data = volume.data().iter().map(|&v| v > T::zero()).collect();
    BinaryMask::new(volume.shape(), data).expect("volume geometry is valid")
}

/// Z-scores intensities inside `brain` (population statistics); voxels outside become 0.
pub fn normalize<T: Scalar>(volume: &Volume3D<T>, brain: &BinaryMask) -> Result<Volume3D<T>> {
    if brain.shape() != volume.shape() {
        return Err(Error::ShapeMismatch {
            left: volume.shape().to_vec(),
            right: brain.shape().to_vec(),
        });
    }
    let inside: Vec<f64> = volume
        .data()
        .iter()
        .zip(brain.data())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.as_f64())
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = inside.len() as f64;
    let mean = inside.iter().sum::<f64>() / n;
    let var = inside.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    let data = volume
        .data()
        .iter()
        .zip(brain.data())
        .map(|(v, &m)| if m { T::lit((v.as_f64() - mean) / sd) } else { T::zero() })
        .collect();
    volume.with_data(data)
}

/// Normalizes every image volume of a case with its own brain mask.
pub fn normalize_case<T: Scalar>(case: &PatientCase<T>) -> Result<PatientCase<T>> {
    let mut out = case.clone();
    for v in case.volumes().values() {
        out.replace_volume(normalize(v, &brain_mask(v))?)?;
    }
    Ok(out)
}

/// One training slice: stacked input channels and the BraTS label plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSlice<T> {
    pub z: usize,
    pub image: Image2<T>,
    pub labels: Image2<u8>,
    pub flipped: bool,
}

/// Axial slab around a case's tumor.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePatchSet<T> {
    pub case_id: String,
    pub slice_range: Range<usize>,
    /// False when the tumor spans more slices than the slab holds.
    pub covers_tumor: bool,
    pub slices: Vec<TrainingSlice<T>>,
}

#[derive(Debug, Clone)]
pub struct PatchOptions {
    pub channels: Vec<Modality>,
    pub flip: bool,
    pub depth: usize,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions {
            channels: SEG_CHANNELS.to_vec(),
            flip: true,
            depth: PATCH_DEPTH,
        }
    }
}

/// Chooses the slab `[lo, hi)` for a tumor occupying axial slices `z_min..=z_max`.
///
/// The slab is centred on the midpoint of the tumor range, or on `centroid`
/// when the tumor is deeper than the slab, and clamped to `0..depth_total`.
/// Returns the range and whether all tumor slices fall inside it.
pub fn patch_window(
    z_min: usize,
    z_max: usize,
    centroid: usize,
    depth_total: usize,
    depth: usize,
) -> (Range<usize>, bool) {
    let len = depth.min(depth_total);
    let half = len / 2;
    let extent = z_max - z_min + 1;
    let centre = if extent <= len { (z_min + z_max + 1) / 2 } else { centroid };
    let lo = centre.saturating_sub(half).min(depth_total - len);
    let range = lo..lo + len;
    let covered = range.start <= z_min && z_max < range.end;
    (range, covered)
}

fn label_plane<T: Scalar>(labels: &Volume3D<T>, z: usize) -> Image2<u8> {
    let [x, y, _] = labels.shape();
    let data = labels.slice_z(z).iter().map(|v| v.as_f64() as u8).collect();
    Image2::new(1, y, x, data).expect("slice geometry")
}

fn channel_slice<T: Scalar>(case: &PatientCase<T>, channels: &[Modality], z: usize) -> Result<Image2<T>> {
    let [x, y, _] = case.shape();
    let planes = channels
        .iter()
        .map(|&m| case.volume(m).map(|v| v.slice_z(z)))
        .collect::<Result<Vec<_>>>()?;
    Image2::stack(y, x, &planes)
}

/// Extracts the tumor-centred axial slab of a labelled case.
pub fn extract_tumor_patch<T: Scalar>(case: &PatientCase<T>, opts: &PatchOptions) -> Result<SlicePatchSet<T>> {
    let labels = case
        .labels()
        .ok_or_else(|| Error::Invalid(format!("case {} has no labels", case.id())))?;
    let wt = region_mask(labels, Region::Wt)?.mask;
    let [sx, sy, sz] = case.shape();
    let per_slice = sx * sy;
    let mut z_min = usize::MAX;
    let mut z_max = 0;
    let mut z_sum = 0usize;
    let mut count = 0usize;
    for (i, _) in wt.data().iter().enumerate().filter(|(_, &b)| b) {
        let z = i / per_slice;
        z_min = z_min.min(z);
        z_max = z_max.max(z);
        z_sum += z;
        count += 1;
    }
    if count == 0 {
        let count_of = |r| region_mask(labels, r).map(|m| m.mask.count());
        return Err(Error::EmptyTumor {
            case: case.id().to_string(),
            wt: 0,
            tc: count_of(Region::Tc)?,
            et: count_of(Region::Et)?,
        });
    }
    let centroid = (z_sum as f64 / count as f64).round() as usize;
    let (range, covers_tumor) = patch_window(z_min, z_max, centroid, sz, opts.depth);
    let mut slices = Vec::with_capacity(range.len() * if opts.flip { 2 } else { 1 });
    for z in range.clone() {
        let image = channel_slice(case, &opts.channels, z)?;
        let lab = label_plane(labels, z);
        if opts.flip {
            let (fi, fl) = flip_lr(&image, &lab)?;
            slices.push(TrainingSlice {
                z,
                image,
                labels: lab,
                flipped: false,
            });
            slices.push(TrainingSlice {
                z,
                image: fi,
                labels: fl,
                flipped: true,
            });
        } else {
            slices.push(TrainingSlice {
                z,
                image,
                labels: lab,
                flipped: false,
            });
        }
    }
    Ok(SlicePatchSet {
        case_id: case.id().to_string(),
        slice_range: range,
        covers_tumor,
        slices,
    })
}

/// Every axial slice of the case, in order and unflipped.
pub fn validation_slices<T: Scalar>(case: &PatientCase<T>, channels: &[Modality]) -> Result<Vec<Image2<T>>> {
    (0..case.shape()[2]).map(|z| channel_slice(case, channels, z)).collect()
}

/// Label plane for every axial slice (empty planes when the case is unlabelled).
pub fn label_slices<T: Scalar>(case: &PatientCase<T>) -> Vec<Image2<u8>> {
    let [x, y, z] = case.shape();
    match case.labels() {
        Some(l) => (0..z).map(|k| label_plane(l, k)).collect(),
        None => (0..z).map(|_| Image2::filled(1, y, x, 0u8)).collect(),
    }
}

/// Stacks per-slice binary predictions back into a volume mask.
pub fn reassemble(planes: &[Image2<bool>]) -> Result<BinaryMask> {
    let first = planes
        .first()
        .ok_or_else(|| Error::Invalid("no slices to reassemble".into()))?;
    let (_, h, w) = first.dims();
    let mut data = Vec::with_capacity(h * w * planes.len());
    for p in planes {
        if p.dims() != (1, h, w) {
            return Err(Error::ShapeMismatch {
                left: vec![1, h, w],
                right: vec![p.channels(), p.height(), p.width()],
            });
        }
        data.extend_from_slice(p.data());
    }
    BinaryMask::new([w, h, planes.len()], data)
}
