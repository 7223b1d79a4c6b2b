//! Overlap and boundary agreement between binary masks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::labels::{BinaryMask, Region};
use crate::scalar::Scalar;
use crate::volume::{voxel_index, Shape3};

/// Voxel counts of a reference/prediction pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn same_shape(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn confusion(reference: &BinaryMask, pred: &BinaryMask) -> Result<Confusion> {
    same_shape(reference, pred)?;
    let mut c = Confusion::default();
    for (&r, &p) in reference.data().iter().zip(pred.data()) {
        match (r, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio<T: Scalar>(num: usize, den: usize) -> Option<T> {
    (den > 0).then(|| T::from_usize_lossy(num) / T::from_usize_lossy(den))
}

/// Dice similarity coefficient. Two empty masks agree perfectly (1); one empty mask gives 0.
pub fn dsc<T: Scalar>(a: &BinaryMask, b: &BinaryMask) -> Result<T> {
    let c = confusion(a, b)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(ratio(2 * c.tp, den).unwrap_or_else(T::one))
}

/// `TP / (TP + FN)`; `None` when the reference has no positives.
pub fn sensitivity<T: Scalar>(reference: &BinaryMask, pred: &BinaryMask) -> Result<Option<T>> {
    let c = confusion(reference, pred)?;
    Ok(ratio(c.tp, c.tp + c.fn_))
}

/// `TN / (TN + FP)`; `None` when the reference has no negatives.
pub fn specificity<T: Scalar>(reference: &BinaryMask, pred: &BinaryMask) -> Result<Option<T>> {
    let c = confusion(reference, pred)?;
    Ok(ratio(c.tn, c.tn + c.fp))
}

/// Set voxels with at least one unset 6-neighbour. Voxels on the grid border
/// count as surface along every axis longer than one voxel.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let shape = mask.shape();
    let d = mask.data();
    let mut out = Vec::new();
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                if !d[voxel_index(shape, x, y, z)] {
                    continue;
                }
                let p = [x, y, z];
                let boundary = (0..3).any(|a| {
                    if shape[a] == 1 {
                        return false;
                    }
                    let mut lo = p;
                    let mut hi = p;
                    let below = if p[a] == 0 {
                        true
                    } else {
                        lo[a] -= 1;
                        !d[voxel_index(shape, lo[0], lo[1], lo[2])]
                    };
                    let above = if p[a] + 1 == shape[a] {
                        true
                    } else {
                        hi[a] += 1;
                        !d[voxel_index(shape, hi[0], hi[1], hi[2])]
                    };
                    below || above
                });
                if boundary {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Exact squared Euclidean distance (in physical units) from every voxel to
/// the nearest seed, via separable lower envelopes of parabolas.
pub fn squared_distance_transform<T: Scalar>(shape: Shape3, seeds: &[[usize; 3]], spacing: [T; 3]) -> Vec<T> {
    let n: usize = shape.iter().product();
    let mut dist = vec![T::infinity(); n];
    for s in seeds {
        dist[voxel_index(shape, s[0], s[1], s[2])] = T::zero();
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let len = shape[axis];
        if len == 1 {
            continue;
        }
        let stride = match axis {
            0 => 1,
            1 => shape[0],
            _ => shape[0] * shape[1],
        };
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in 0..shape[o1] {
            for j in 0..shape[o2] {
                let mut p = [0usize; 3];
                p[o1] = i;
                p[o2] = j;
                let start = voxel_index(shape, p[0], p[1], p[2]);
                line.clear();
                line.extend((0..len).map(|k| dist[start + k * stride]));
                out.resize(len, T::zero());
                envelope_1d(&line, spacing[axis], &mut out);
                for k in 0..len {
                    dist[start + k * stride] = out[k];
                }
            }
        }
    }
    dist
}

fn envelope_1d<T: Scalar>(f: &[T], step: T, out: &mut [T]) {
    let pos = |q: usize| T::from_usize_lossy(q) * step;
    let mut sites: Vec<usize> = Vec::with_capacity(f.len());
    let mut bounds: Vec<T> = Vec::with_capacity(f.len());
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(T::neg_infinity());
                break;
            };
            let xq = pos(q);
            let xv = pos(v);
            let s = ((f[q] + xq * xq) - (f[v] + xv * xv)) / (T::lit(2.0) * (xq - xv));
            if s <= *bounds.last().unwrap() {
                sites.pop();
                bounds.pop();
                continue;
            }
            sites.push(q);
            bounds.push(s);
            break;
        }
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = T::infinity());
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while k + 1 < sites.len() && bounds[k + 1] < x {
            k += 1;
        }
        let d = x - pos(sites[k]);
        *o = d * d + f[sites[k]];
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile<T: Scalar>(values: &mut [T], q: f64) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    Some(values[lo] + (values[hi] - values[lo]) * frac)
}

/// Distance from each surface voxel of `from` to the nearest surface voxel of `to`.
fn directed_surface_distances<T: Scalar>(from: &[[usize; 3]], to: &[[usize; 3]], shape: Shape3, spacing: [T; 3]) -> Vec<T> {
    let dt = squared_distance_transform(shape, to, spacing);
    from.iter()
        .map(|p| dt[voxel_index(shape, p[0], p[1], p[2])].sqrt())
        .collect()
}

/// 95th percentile of the pooled surface distances in both directions.
/// `None` when either mask is empty.
pub fn hd95<T: Scalar>(a: &BinaryMask, b: &BinaryMask, spacing: [T; 3]) -> Result<Option<T>> {
    same_shape(a, b)?;
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    let mut pooled = directed_surface_distances(&sa, &sb, a.shape(), spacing);
    pooled.extend(directed_surface_distances(&sb, &sa, a.shape(), spacing));
    Ok(percentile(&mut pooled, 95.0))
}

/// Agreement of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMetrics<T> {
    pub dsc: T,
    pub sensitivity: Option<T>,
    pub specificity: Option<T>,
    pub hd95_mm: Option<T>,
}

pub fn region_metrics<T: Scalar>(reference: &BinaryMask, pred: &BinaryMask, spacing: [T; 3]) -> Result<RegionMetrics<T>> {
    Ok(RegionMetrics {
        dsc: dsc(reference, pred)?,
        sensitivity: sensitivity(reference, pred)?,
        specificity: specificity(reference, pred)?,
        hd95_mm: hd95(reference, pred, spacing)?,
    })
}

/// Per-case agreement for every region.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMetricReport<T> {
    pub case_id: String,
    pub regions: BTreeMap<Region, RegionMetrics<T>>,
}

impl<T: Scalar> SegMetricReport<T> {
    pub fn evaluate(
        case_id: impl Into<String>,
        reference: &BTreeMap<Region, BinaryMask>,
        pred: &BTreeMap<Region, BinaryMask>,
        spacing: [T; 3],
    ) -> Result<Self> {
        let mut regions = BTreeMap::new();
        for (r, m) in reference {
            let p = pred
                .get(r)
                .ok_or_else(|| Error::Invalid(format!("prediction lacks region {r}")))?;
            regions.insert(*r, region_metrics(m, p, spacing)?);
        }
        Ok(SegMetricReport {
            case_id: case_id.into(),
            regions,
        })
    }
}
