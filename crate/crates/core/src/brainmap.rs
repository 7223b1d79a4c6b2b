//! Semantic brain maps: intensity tiers of normal tissue with tumor sub-regions
//! stamped on top. They condition the image generator.

use std::collections::BTreeMap;
use std::path::Path;

use crate::case::PatientCase;
use crate::error::{Error, Result};
use crate::image::Image2;
use crate::io::native::{header_path, read_volume, write_volume};
use crate::labels::{EDEMA, ET, NCR};
use crate::scalar::Scalar;
use crate::volume::{voxel_index, Modality, Shape3, Spacing, Volume3D};

pub const MAP_BACKGROUND: u8 = 0;
pub const TIER_LOW: u8 = 1;
pub const TIER_MID: u8 = 2;
pub const TIER_HIGH: u8 = 3;
pub const MAP_EDEMA: u8 = 4;
pub const MAP_NCR: u8 = 5;
pub const MAP_ET: u8 = 6;
/// Number of map labels, and channels of the one-hot encoding.
pub const MAP_CLASSES: usize = 7;

/// Intensity cut points at 1/4, 1/2 and 3/4 of the volume maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierThresholds<T> {
    pub low: T,
    pub mid: T,
    pub high: T,
}

pub fn tier_thresholds<T: Scalar>(max: T) -> TierThresholds<T> {
    TierThresholds {
        low: max * T::lit(0.25),
        mid: max * T::lit(0.5),
        high: max * T::lit(0.75),
    }
}

impl<T: Scalar> TierThresholds<T> {
    /// Tier of an in-brain voxel. Brain voxels darker than the lowest cut are
    /// folded into the low tier so the map covers the whole brain mask.
    pub fn tier(&self, v: T) -> u8 {
        if v >= self.high {
            TIER_HIGH
        } else if v >= self.mid {
            TIER_MID
        } else if v >= self.low || v > T::zero() {
            TIER_LOW
        } else {
            MAP_BACKGROUND
        }
    }
}

fn tumor_code(label: i32) -> u8 {
    match label {
        EDEMA => MAP_EDEMA,
        NCR => MAP_NCR,
        ET => MAP_ET,
        _ => 0,
    }
}

/// Integer layout grid. Tissue tiers and tumor codes are kept in separate
/// planes so a lesion can be moved without losing the tissue under it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMap {
    shape: Shape3,
    tiers: Vec<u8>,
    tumor: Vec<u8>,
    source: Modality,
}

impl BrainMap {
    pub fn from_parts(shape: Shape3, tiers: Vec<u8>, tumor: Vec<u8>, source: Modality) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 || tiers.len() != n || tumor.len() != n {
            return Err(Error::InvalidVolume(format!("brain map planes do not fit shape {shape:?}")));
        }
        if tiers.iter().any(|&t| t > TIER_HIGH) {
            return Err(Error::Invalid("tier plane holds tumor codes".into()));
        }
        if tumor.iter().any(|&t| t != 0 && !(MAP_EDEMA..=MAP_ET).contains(&t)) {
            return Err(Error::Invalid("tumor plane holds tissue codes".into()));
        }
        Ok(BrainMap {
            shape,
            tiers,
            tumor,
            source,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn source(&self) -> Modality {
        self.source
    }

    pub fn tiers(&self) -> &[u8] {
        &self.tiers
    }

    pub fn tumor(&self) -> &[u8] {
        &self.tumor
    }

    #[inline]
    pub fn label(&self, i: usize) -> u8 {
        if self.tumor[i] != 0 {
            self.tumor[i]
        } else {
            self.tiers[i]
        }
    }

    /// Composite labels: tumor codes override tiers.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.tiers.len()).map(|i| self.label(i)).collect()
    }

    pub fn tumor_voxels(&self) -> usize {
        self.tumor.iter().filter(|&&t| t != 0).count()
    }

    /// Planar (single slice) maps have depth 1.
    pub fn is_planar(&self) -> bool {
        self.shape[2] == 1
    }

    /// Axial slice `z` as a planar map.
    pub fn slice(&self, z: usize) -> BrainMap {
        let n = self.shape[0] * self.shape[1];
        BrainMap {
            shape: [self.shape[0], self.shape[1], 1],
            tiers: self.tiers[z * n..(z + 1) * n].to_vec(),
            tumor: self.tumor[z * n..(z + 1) * n].to_vec(),
            source: self.source,
        }
    }

    /// Stacks planar maps along `z`.
    pub fn stack(slices: &[BrainMap]) -> Result<BrainMap> {
        let first = slices.first().ok_or_else(|| Error::Invalid("no slices to stack".into()))?;
        let mut tiers = Vec::new();
        let mut tumor = Vec::new();
        for s in slices {
            if s.shape != first.shape || !s.is_planar() {
                return Err(Error::ShapeMismatch {
                    left: first.shape.to_vec(),
                    right: s.shape.to_vec(),
                });
            }
            tiers.extend_from_slice(&s.tiers);
            tumor.extend_from_slice(&s.tumor);
        }
        BrainMap::from_parts(
            [first.shape[0], first.shape[1], slices.len()],
            tiers,
            tumor,
            first.source,
        )
    }

    /// Centre pads (with background) or crops a planar map to `size x size`.
    pub fn pad_crop(&self, size: usize) -> BrainMap {
        let [w, h, _] = self.shape;
        let plane = |v: &[u8]| {
            Image2::new(1, h, w, v.to_vec())
                .expect("planar map")
                .pad_crop(size, 0)
                .into_data()
        };
        BrainMap {
            shape: [size, size, 1],
            tiers: plane(&self.tiers),
            tumor: plane(&self.tumor),
            source: self.source,
        }
    }

    /// Map labels as a volume for the native format.
    pub fn to_volume<T: Scalar>(&self, spacing: Spacing) -> Volume3D<T> {
        let data = self.labels().into_iter().map(|l| T::lit(l as f64)).collect();
        Volume3D::labels(self.shape, spacing, Modality::LabelMap, map_label_set(), data)
            .expect("map labels are in range")
    }
}

fn map_label_set() -> Vec<i32> {
    (0..MAP_CLASSES as i32).collect()
}

/// Thresholds `volume` into tissue tiers and stamps the tumor labels.
pub fn build_brainmap<T: Scalar>(volume: &Volume3D<T>, labels: Option<&Volume3D<T>>) -> Result<BrainMap> {
    if !volume.modality().is_image() {
        return Err(Error::Invalid(format!("cannot threshold a {} volume", volume.modality())));
    }
    let min = volume.min_value();
    if min < T::zero() {
        return Err(Error::NegativeIntensity(min.as_f64()));
    }
    let max = volume.max_value();
    if !(max > T::zero()) {
        return Err(Error::AllZero);
    }
    let th = tier_thresholds(max);
    let tiers = volume.data().iter().map(|&v| th.tier(v)).collect();
    let tumor = match labels {
        Some(l) => {
            if l.modality() != Modality::Label || l.shape() != volume.shape() {
                return Err(Error::ShapeMismatch {
                    left: volume.shape().to_vec(),
                    right: l.shape().to_vec(),
                });
            }
            l.data().iter().map(|v| tumor_code(v.as_f64() as i32)).collect()
        }
        None => vec![0; volume.len()],
    };
    BrainMap::from_parts(volume.shape(), tiers, tumor, volume.modality())
}

/// One map per MR sequence of the case, each thresholded on its own volume.
pub fn build_case_maps<T: Scalar>(case: &PatientCase<T>) -> Result<BTreeMap<Modality, BrainMap>> {
    case.volumes()
        .iter()
        .map(|(&m, v)| build_brainmap(v, case.labels()).map(|b| (m, b)))
        .collect()
}

/// Planar maps at resolutions `base, 2*base, ..., top`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapPyramid {
    pub levels: Vec<BrainMap>,
}

impl MapPyramid {
    pub fn top_resolution(&self) -> usize {
        self.levels.last().map(|l| l.shape()[0]).unwrap_or(0)
    }
}

/// Number of doublings `k` with `top = base * 2^k`, if any.
pub fn pyramid_depth(base: usize, top: usize) -> Option<usize> {
    if base == 0 || top < base || top % base != 0 || !(top / base).is_power_of_two() {
        return None;
    }
    Some((top / base).trailing_zeros() as usize)
}

/// Nearest-neighbour downsampling of a planar `top x top` map.
pub fn make_pyramid(map: &BrainMap, base: usize, top: usize) -> Result<MapPyramid> {
    let k = pyramid_depth(base, top).ok_or(Error::BadResolution(top))?;
    if map.shape != [top, top, 1] {
        return Err(Error::ShapeMismatch {
            left: vec![top, top, 1],
            right: map.shape.to_vec(),
        });
    }
    let levels = (0..=k)
        .map(|i| {
            let size = base << i;
            let f = top / size;
            let off = f / 2;
            let mut tiers = Vec::with_capacity(size * size);
            let mut tumor = Vec::with_capacity(size * size);
            for r in 0..size {
                for c in 0..size {
                    let src = (r * f + off) * top + c * f + off;
                    tiers.push(map.tiers[src]);
                    tumor.push(map.tumor[src]);
                }
            }
            BrainMap {
                shape: [size, size, 1],
                tiers,
                tumor,
                source: map.source,
            }
        })
        .collect();
    Ok(MapPyramid { levels })
}

/// Rigid-plus-scale motion of the lesion: in-plane translation, rotation about
/// the axial axis through the lesion centroid, isotropic scaling about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionTransform {
    pub dx: f64,
    pub dy: f64,
    pub rotate_deg: f64,
    pub scale: f64,
}

impl LesionTransform {
    pub const IDENTITY: LesionTransform = LesionTransform {
        dx: 0.0,
        dy: 0.0,
        rotate_deg: 0.0,
        scale: 1.0,
    };

    pub fn translation(dx: f64, dy: f64) -> Self {
        LesionTransform {
            dx,
            dy,
            ..Self::IDENTITY
        }
    }
}

/// Allowed lesion scale factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleBounds {
    fn default() -> Self {
        ScaleBounds { min: 0.5, max: 2.0 }
    }
}

/// Moves the lesion (all tumor sub-regions together) and resamples it with
/// nearest-neighbour lookup. Vacated voxels show the tissue tier underneath.
pub fn manipulate(map: &BrainMap, t: &LesionTransform, bounds: ScaleBounds) -> Result<BrainMap> {
    let finite = [t.dx, t.dy, t.rotate_deg, t.scale].iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::TransformBounds(format!("non-finite parameters {t:?}")));
    }
    if !(t.scale >= bounds.min && t.scale <= bounds.max) {
        return Err(Error::TransformBounds(format!(
            "scale {} outside [{}, {}]",
            t.scale, bounds.min, bounds.max
        )));
    }
    let [sx, sy, sz] = map.shape;
    let mut centroid = [0.0f64; 3];
    let mut count = 0usize;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for z in 0..sz {
        for y in 0..sy {
            for x in 0..sx {
                if map.tumor[voxel_index(map.shape, x, y, z)] != 0 {
                    let p = [x, y, z];
                    for a in 0..3 {
                        centroid[a] += p[a] as f64;
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Invalid("brain map has no lesion to manipulate".into()));
    }
    centroid.iter_mut().for_each(|c| *c /= count as f64);
    let [cx, cy, cz] = centroid;
    let (sin, cos) = t.rotate_deg.to_radians().sin_cos();

    let forward = |p: [f64; 3]| -> [f64; 3] {
        let u = [(p[0] - cx) * t.scale, (p[1] - cy) * t.scale, (p[2] - cz) * t.scale];
        [
            cos * u[0] - sin * u[1] + cx + t.dx,
            sin * u[0] + cos * u[1] + cy + t.dy,
            u[2] + cz,
        ]
    };

    // Destination bounding box from the forward image of the source box corners.
    let mut dlo = [f64::INFINITY; 3];
    let mut dhi = [f64::NEG_INFINITY; 3];
    let mut overflow = 0usize;
    for corner in 0..8 {
        let p = [
            if corner & 1 == 0 { lo[0] } else { hi[0] } as f64,
            if corner & 2 == 0 { lo[1] } else { hi[1] } as f64,
            if corner & 4 == 0 { lo[2] } else { hi[2] } as f64,
        ];
        let q = forward(p);
        for a in 0..3 {
            dlo[a] = dlo[a].min(q[a]);
            dhi[a] = dhi[a].max(q[a]);
        }
    }
    let pad = t.scale.ceil() + 1.0;
    let extent = [sx, sy, sz];
    let range = |a: usize| {
        let l = (dlo[a] - pad).floor().max(0.0) as usize;
        let h = ((dhi[a] + pad).ceil().max(0.0) as usize).min(extent[a] - 1);
        l..=h
    };

    // Source voxels whose image leaves the grid are lost.
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                if map.tumor[voxel_index(map.shape, x, y, z)] == 0 {
                    continue;
                }
                let q = forward([x as f64, y as f64, z as f64]);
                let inside = (0..3).all(|a| {
                    let r = q[a].round();
                    r >= 0.0 && r < extent[a] as f64
                });
                if !inside {
                    overflow += 1;
                }
            }
        }
    }

    let mut tumor = vec![0u8; map.tumor.len()];
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let u = [
                    (x as f64 - cx - t.dx) / t.scale,
                    (y as f64 - cy - t.dy) / t.scale,
                    (z as f64 - cz) / t.scale,
                ];
                let src = [
                    (cos * u[0] + sin * u[1] + cx).round(),
                    (-sin * u[0] + cos * u[1] + cy).round(),
                    (u[2] + cz).round(),
                ];
                if (0..3).any(|a| src[a] < 0.0 || src[a] >= extent[a] as f64) {
                    continue;
                }
                let s = voxel_index(map.shape, src[0] as usize, src[1] as usize, src[2] as usize);
                let code = map.tumor[s];
                if code != 0 {
                    let d = voxel_index(map.shape, x, y, z);
                    if map.tiers[d] == MAP_BACKGROUND {
                        overflow += 1;
                    }
                    tumor[d] = code;
                }
            }
        }
    }
    if overflow > 0 {
        return Err(Error::LesionOverflow { overflow });
    }
    Ok(BrainMap {
        shape: map.shape,
        tiers: map.tiers.clone(),
        tumor,
        source: map.source,
    })
}

/// Seven-channel binary encoding of a map (rows run along `y`, and along `z` for volumes).
pub fn one_hot<T: Scalar>(map: &BrainMap) -> Image2<T> {
    let [w, h, d] = map.shape;
    let n = w * h * d;
    let mut data = vec![T::zero(); MAP_CLASSES * n];
    for i in 0..n {
        data[map.label(i) as usize * n + i] = T::one();
    }
    Image2::new(MAP_CLASSES, h * d, w, data).expect("one-hot geometry")
}

/// Per-pixel argmax over channels; inverse of [`one_hot`].
pub fn argmax_labels<T: Scalar>(encoded: &Image2<T>) -> Vec<u8> {
    let (c, h, w) = encoded.dims();
    (0..h * w)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if encoded.data()[k * h * w + i] > encoded.data()[best * h * w + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Writes `<stem>.hdr/.raw` (composite labels) and `<stem>_tiers.hdr/.raw`.
pub fn save_brainmap(map: &BrainMap, dir: &Path, stem: &str, spacing: Spacing) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut extra = BTreeMap::new();
    extra.insert("source".to_string(), map.source.to_string());
    write_volume(dir, stem, &map.to_volume::<f32>(spacing), &extra)?;
    let tiers_data = map.tiers.iter().map(|&t| t as f32).collect();
    let tiers = Volume3D::labels(map.shape, spacing, Modality::LabelMap, map_label_set(), tiers_data)?;
    extra.insert("role".to_string(), "tiers".to_string());
    write_volume(dir, &format!("{stem}_tiers"), &tiers, &extra)?;
    Ok(())
}

/// Reads a map written by [`save_brainmap`]. Without the tier companion the
/// tissue under the lesion is filled from the nearest tissue voxels.
pub fn load_brainmap(dir: &Path, stem: &str) -> Result<(BrainMap, Spacing)> {
    let hdr = header_path(dir, stem);
    let (vol, extra) = read_volume::<f32>(&hdr)?;
    if vol.modality() != Modality::LabelMap {
        return Err(Error::WrongModality {
            expected: Modality::LabelMap,
            got: vol.modality(),
        });
    }
    let source: Modality = extra
        .get("source")
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Modality::T1);
    let labels: Vec<u8> = vol.data().iter().map(|&v| v as u8).collect();
    let tumor: Vec<u8> = labels.iter().map(|&l| if l >= MAP_EDEMA { l } else { 0 }).collect();
    let tiers_hdr = header_path(dir, &format!("{stem}_tiers"));
    let tiers = if tiers_hdr.exists() {
        let (t, _) = read_volume::<f32>(&tiers_hdr)?;
        if t.shape() != vol.shape() {
            return Err(Error::ShapeMismatch {
                left: vol.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        t.data().iter().map(|&v| v as u8).collect()
    } else {
        fill_under_tumor(vol.shape(), &labels)
    };
    Ok((BrainMap::from_parts(vol.shape(), tiers, tumor, source)?, vol.spacing()))
}

/// Replaces tumor codes by the tier of the nearest already-known voxel
/// (breadth-first in 6-connectivity).
fn fill_under_tumor(shape: Shape3, labels: &[u8]) -> Vec<u8> {
    let mut tiers: Vec<Option<u8>> = labels.iter().map(|&l| (l <= TIER_HIGH).then_some(l)).collect();
    let mut frontier: Vec<usize> = (0..labels.len()).filter(|&i| tiers[i].is_some()).collect();
    let [sx, sy, sz] = shape;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &i in &frontier {
            let (x, y, z) = (i % sx, (i / sx) % sy, i / (sx * sy));
            let mut visit = |nx: usize, ny: usize, nz: usize| {
                let j = voxel_index(shape, nx, ny, nz);
                if tiers[j].is_none() {
                    // lesion interior is brain tissue, never background
                    tiers[j] = Some(tiers[i].unwrap().max(TIER_LOW));
                    next.push(j);
                }
            };
            if x > 0 {
                visit(x - 1, y, z);
            }
            if x + 1 < sx {
                visit(x + 1, y, z);
            }
            if y > 0 {
                visit(x, y - 1, z);
            }
            if y + 1 < sy {
                visit(x, y + 1, z);
            }
            if z > 0 {
                visit(x, y, z - 1);
            }
            if z + 1 < sz {
                visit(x, y, z + 1);
            }
        }
        frontier = next;
    }
    tiers.into_iter().map(|t| t.unwrap_or(TIER_LOW)).collect()
}
