//! Synthetic cases from manipulated brain maps.

use std::collections::BTreeMap;
use std::path::Path;

use glioaug_core::brainmap::{manipulate, ScaleBounds, MAP_EDEMA, MAP_ET, MAP_NCR};
use glioaug_core::labels::{EDEMA, ET, NCR};
use glioaug_core::metrics::image::{rescale_to_255, ssim};
use glioaug_core::{BrainMap, Image2, LesionTransform, Modality, PatientCase, Provenance, Scalar, Spacing, Volume3D};

use super::train::AugCheckpoint;
use crate::error::{Error, Result};

/// Slices generated per forward pass.
const SLICE_BATCH: usize = 16;

/// Smallest in-brain intensity, relative to the checkpoint's intensity scale,
/// so the brain stays distinguishable from the zero background.
pub const BRAIN_FLOOR: f64 = 1e-3;

/// One synthetic case to produce.
#[derive(Debug, Clone)]
pub struct SynthesisRequest<'a, T> {
    pub id: String,
    /// Source map per modality; every generator reads its own modality's map.
    pub maps: BTreeMap<Modality, BrainMap>,
    pub spacing: Spacing,
    pub transform: LesionTransform,
    /// Real case the maps came from, for SSIM bookkeeping.
    pub reference: Option<&'a PatientCase<T>>,
}

/// SSIM after mapping both images through the real image's range onto 0..255.
pub fn paired_ssim<T: Scalar>(real: &Image2<T>, synthetic: &Image2<T>) -> Result<f64> {
    let lo = real.data().iter().copied().fold(T::infinity(), T::min);
    let hi = real.data().iter().copied().fold(T::neg_infinity(), T::max);
    let (c, h, w) = real.dims();
    let a = Image2::new(c, h, w, rescale_to_255(real.data(), lo, hi))?;
    let b = Image2::new(c, h, w, rescale_to_255(synthetic.data(), lo, hi))?;
    if b.dims() != synthetic.dims() {
        return Err(Error::Invalid("image sizes differ".into()));
    }
    Ok(ssim(&a, &b)?.as_f64())
}

fn brats_code(map_code: u8) -> i32 {
    match map_code {
        MAP_EDEMA => EDEMA,
        MAP_NCR => NCR,
        MAP_ET => ET,
        _ => 0,
    }
}

/// Zeroes generator output outside the brain and lifts in-brain values to
/// at least [`BRAIN_FLOOR`] (target units).
pub fn brain_masked<T: Scalar>(image: &Image2<T>, plane: &BrainMap) -> Image2<T> {
    let floor = T::lit(BRAIN_FLOOR);
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if plane.label(i) == 0 { T::zero() } else { v.max(floor) })
        .collect();
    let (c, h, w) = image.dims();
    Image2::new(c, h, w, data).expect("same dims")
}

/// Generates every axial slice of `map` and maps it back to intensities.
pub fn synthesize_volume<T: Scalar>(ckpt: &AugCheckpoint<T>, map: &BrainMap, spacing: Spacing) -> Result<Volume3D<T>> {
    let gen = ckpt.generator_net()?;
    let top = ckpt.config.generator.top_resolution;
    let [x, y, z] = map.shape();
    let scale = T::lit(ckpt.intensity_scale);
    let mut data = Vec::with_capacity(x * y * z);
    let slices: Vec<usize> = (0..z).collect();
    for chunk in slices.chunks(SLICE_BATCH) {
        let pyramids = chunk
            .iter()
            .map(|&k| gen.pyramid(&map.slice(k).pad_crop(top)))
            .collect::<Result<Vec<_>>>()?;
        let images = gen.generate_batch(&ckpt.generator, &pyramids)?;
        for (&k, img) in chunk.iter().zip(images) {
            let img = brain_masked(&img.unpad_crop(y, x, T::zero()), &map.slice(k));
            data.extend(img.data().iter().map(|&v| v * scale));
        }
    }
    Ok(Volume3D::new(map.shape(), spacing, ckpt.modality, data)?)
}

/// Mean SSIM over the reference's brain-bearing slices.
pub fn volume_ssim<T: Scalar>(real: &Volume3D<T>, synthetic: &Volume3D<T>) -> Result<Option<f64>> {
    if !real.same_geometry(synthetic) {
        return Err(Error::Invalid("reference and synthetic volumes differ in geometry".into()));
    }
    let [x, y, z] = real.shape();
    let mut vals = Vec::new();
    for k in 0..z {
        let r = real.slice_z(k);
        if r.iter().all(|&v| v <= T::zero()) {
            continue;
        }
        let a = Image2::new(1, y, x, r.to_vec())?;
        let b = Image2::new(1, y, x, synthetic.slice_z(k).to_vec())?;
        vals.push(paired_ssim(&a, &b)?);
    }
    Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
}

/// Builds one synthetic case: the same lesion transform applied to each
/// modality's map, one generator per modality, labels from the moved lesion.
pub fn synthesize_case<T: Scalar>(
    checkpoints: &BTreeMap<Modality, AugCheckpoint<T>>,
    request: &SynthesisRequest<'_, T>,
) -> Result<PatientCase<T>> {
    let mut volumes = BTreeMap::new();
    let mut lesion: Option<BrainMap> = None;
    for m in Modality::IMAGES {
        let ckpt = checkpoints.get(&m).ok_or(Error::MissingCheckpoint(m))?;
        let src = request
            .maps
            .get(&m)
            .ok_or_else(|| Error::Invalid(format!("{}: no {m} brain map", request.id)))?;
        let moved = manipulate(src, &request.transform, ScaleBounds::default())?;
        volumes.insert(m, synthesize_volume(ckpt, &moved, request.spacing)?);
        lesion.get_or_insert(moved);
    }
    let lesion = lesion.expect("four modalities");
    let labels = Volume3D::labels(
        lesion.shape(),
        request.spacing,
        Modality::Label,
        glioaug_core::labels::BRATS_LABELS.to_vec(),
        lesion.tumor().iter().map(|&t| T::lit(brats_code(t) as f64)).collect(),
    )?;
    let mut case = PatientCase::new(request.id.clone(), volumes, Some(labels), Provenance::Synthetic)?;
    let t = request.transform;
    case.metadata.insert(
        "transform".into(),
        format!("{} {} {} {}", t.dx, t.dy, t.rotate_deg, t.scale),
    );
    if let Some(reference) = request.reference {
        case.metadata.insert("reference".into(), reference.id().to_string());
        for m in Modality::IMAGES {
            if let Some(s) = volume_ssim(reference.volume(m)?, case.volume(m)?)? {
                case.metadata.insert(format!("ssim_{m}"), format!("{s:.6}"));
            }
        }
    }
    Ok(case)
}

pub fn synthesize_dataset<T: Scalar>(
    checkpoints: &BTreeMap<Modality, AugCheckpoint<T>>,
    requests: &[SynthesisRequest<'_, T>],
) -> Result<Vec<PatientCase<T>>> {
    for m in Modality::IMAGES {
        if !checkpoints.contains_key(&m) {
            return Err(Error::MissingCheckpoint(m));
        }
    }
    requests.iter().map(|r| synthesize_case(checkpoints, r)).collect()
}

/// One line of a transform file: `map_id dx dy rot_deg scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformEntry {
    pub map_id: String,
    pub transform: LesionTransform,
}

/// Parses a transform file; blank lines and `#` comments are skipped.
pub fn parse_transforms(text: &str) -> Result<Vec<TransformEntry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Invalid(format!("transform line {}: expected `map_id dx dy rot_deg scale`, got {raw:?}", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let v = f[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        out.push(TransformEntry {
            map_id: f[0].to_string(),
            transform: LesionTransform {
                dx: v[0],
                dy: v[1],
                rotate_deg: v[2],
                scale: v[3],
            },
        });
    }
    Ok(out)
}

pub fn read_transforms(path: &Path) -> Result<Vec<TransformEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transforms(&text)
}

/// Loads `<id>_<MOD>` maps from `dir`, falling back to a shared `<id>` map.
pub fn load_request_maps(dir: &Path, id: &str) -> Result<(BTreeMap<Modality, BrainMap>, Spacing)> {
    let mut maps = BTreeMap::new();
    let mut spacing = None;
    for m in Modality::IMAGES {
        let own = format!("{id}_{m}");
        let stem = if dir.join(format!("{own}.hdr")).exists() { own } else { id.to_string() };
        let (map, sp) = glioaug_core::brainmap::load_brainmap(dir, &stem)?;
        spacing.get_or_insert(sp);
        maps.insert(m, map);
    }
    Ok((maps, spacing.expect("four modalities")))
}
