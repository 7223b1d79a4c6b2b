//! Cascade post-processing: ET and TC are kept only inside the predicted
//! whole tumor, and ET additionally needs contrast enhancement.

use glioaug_core::{BinaryMask, Scalar, Volume3D};

use crate::error::{Error, Result};

/// Otsu threshold of `values`: the midpoint between the two adjacent
/// distinct values that maximise the between-class variance. `None` with
/// fewer than two distinct values.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    let mut best: Option<(f64, f64)> = None;
    let mut below = 0.0;
    for i in 0..v.len().saturating_sub(1) {
        below += v[i];
        if v[i] == v[i + 1] {
            continue;
        }
        let n0 = (i + 1) as f64;
        let n1 = n - n0;
        let m0 = below / n0;
        let m1 = (total - below) / n1;
        let between = n0 * n1 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, 0.5 * (v[i] + v[i + 1])));
        }
    }
    best.map(|(_, t)| t)
}

/// How the enhancement threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Enhancement {
    /// Otsu over `t1ce - t1` inside the predicted whole tumor.
    #[default]
    Otsu,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    pub wt: BinaryMask,
    pub et: BinaryMask,
    pub tc: BinaryMask,
    /// Threshold applied to `t1ce - t1`; `None` when Otsu had nothing to split
    /// and no enhancement gating was applied.
    pub tau: Option<f64>,
}

/// `ET' = et & wt & (t1ce - t1 > tau)`, `TC' = tc & wt`, `WT' = wt`.
pub fn cascade_postprocess<T: Scalar>(
    wt: &BinaryMask,
    et: &BinaryMask,
    tc: &BinaryMask,
    t1ce: &Volume3D<T>,
    t1: &Volume3D<T>,
    enhancement: Enhancement,
) -> Result<CascadeOutput> {
    let shape = wt.shape();
    if et.shape() != shape || tc.shape() != shape || t1ce.shape() != shape || t1.shape() != shape {
        return Err(Error::Core(glioaug_core::Error::ShapeMismatch {
            left: shape.to_vec(),
            right: [et.shape(), tc.shape(), t1ce.shape(), t1.shape()]
                .iter()
                .flat_map(|s| s.iter().copied())
                .collect(),
        }));
    }
    let diff: Vec<f64> = t1ce
        .data()
        .iter()
        .zip(t1.data())
        .map(|(&a, &b)| (a - b).as_f64())
        .collect();
    let tau = match enhancement {
        Enhancement::Fixed(t) => Some(t),
        Enhancement::Otsu => {
            let inside: Vec<f64> = wt
                .data()
                .iter()
                .zip(&diff)
                .filter_map(|(&w, &d)| w.then_some(d))
                .collect();
            otsu_threshold(&inside)
        }
    };
    let et_data = (0..wt.data().len())
        .map(|i| et.data()[i] && wt.data()[i] && tau.is_none_or(|t| diff[i] > t))
        .collect();
    Ok(CascadeOutput {
        wt: wt.clone(),
        et: BinaryMask::new(shape, et_data)?,
        tc: tc.and(wt)?,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use glioaug_core::Modality;

    fn vol(data: Vec<f64>, m: Modality) -> Volume3D<f64> {
        Volume3D::new([data.len(), 1, 1], [1.0; 3], m, data).unwrap()
    }

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new([bits.len(), 1, 1], bits.iter().map(|&b| b != 0).collect()).unwrap()
    }

    #[test]
    fn otsu_on_two_clusters() {
        assert_eq!(otsu_threshold(&[0.0, 0.0, 0.0, 10.0, 10.0]), Some(5.0));
        assert_eq!(otsu_threshold(&[1.0, 2.0, 9.0, 10.0]), Some(5.5));
        assert_eq!(otsu_threshold(&[3.0, 3.0]), None);
        assert_eq!(otsu_threshold(&[]), None);
    }

    #[test]
    fn et_outside_wt_dropped() {
        let wt = mask(&[1, 1, 0, 0]);
        let et = mask(&[0, 0, 1, 1]);
        let t1 = vol(vec![0.0; 4], Modality::T1);
        let t1ce = vol(vec![5.0; 4], Modality::T1ce);
        let out = cascade_postprocess(&wt, &et, &et, &t1ce, &t1, Enhancement::Otsu).unwrap();
        assert!(out.et.is_empty());
        assert!(out.tc.is_empty());
        assert_eq!(out.wt, wt);
    }

    #[test]
    fn enhancing_et_kept() {
        let wt = mask(&[1, 1, 1, 1, 1, 1]);
        let et = mask(&[0, 0, 0, 1, 1, 1]);
        let t1 = vol(vec![1.0; 6], Modality::T1);
        let t1ce = vol(vec![1.0, 1.0, 1.0, 50.0, 50.0, 50.0], Modality::T1ce);
        let out = cascade_postprocess(&wt, &et, &et, &t1ce, &t1, Enhancement::Otsu).unwrap();
        assert_eq!(out.et, et);
        assert_eq!(out.tau, Some(24.5));
    }

    #[test]
    fn half_below_threshold_halves_et() {
        let wt = mask(&[1; 8]);
        let et = mask(&[1; 8]);
        let t1 = vol(vec![0.0; 8], Modality::T1);
        let t1ce = vol(vec![0.0, 0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 10.0], Modality::T1ce);
        let out = cascade_postprocess(&wt, &et, &et, &t1ce, &t1, Enhancement::Otsu).unwrap();
        assert_eq!(out.et.count(), et.count() / 2);
        let fixed = cascade_postprocess(&wt, &et, &et, &t1ce, &t1, Enhancement::Fixed(20.0)).unwrap();
        assert!(fixed.et.is_empty());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t1 = vol(vec![0.0; 3], Modality::T1);
        assert!(cascade_postprocess(&mask(&[1, 1]), &mask(&[1, 1]), &mask(&[1, 1]), &t1, &t1, Enhancement::Otsu).is_err());
    }
}
