use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Acquisition (or derived) type of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
    Label,
    LabelMap,
}

impl Modality {
    /// The four MR sequences, in canonical order.
    pub const IMAGES: [Modality; 4] = [Modality::T1, Modality::T1ce, Modality::T2, Modality::Flair];

    pub fn is_image(self) -> bool {
        !matches!(self, Modality::Label | Modality::LabelMap)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::T1 => "T1",
            Modality::T1ce => "T1CE",
            Modality::T2 => "T2",
            Modality::Flair => "FLAIR",
            Modality::Label => "LABEL",
            Modality::LabelMap => "LABELMAP",
        }
    }

    /// Suffix used by BraTS NIfTI distributions (`<id>_t1ce.nii.gz`, `<id>_seg.nii.gz`).
    pub fn brats_suffix(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
            Modality::Label => "seg",
            Modality::LabelMap => "map",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(Modality::T1),
            "T1CE" | "T1GD" | "T1C" => Ok(Modality::T1ce),
            "T2" => Ok(Modality::T2),
            "FLAIR" => Ok(Modality::Flair),
            "LABEL" | "SEG" => Ok(Modality::Label),
            "LABELMAP" => Ok(Modality::LabelMap),
            other => Err(Error::Invalid(format!("unknown modality {other:?}"))),
        }
    }
}

/// Voxel grid dimensions `[x, y, z]`. Axial slices are planes of constant `z`.
pub type Shape3 = [usize; 3];

/// Millimetres per voxel along each axis.
pub type Spacing = [f64; 3];

/// Linear index of voxel `(x, y, z)`; `x` varies fastest.
#[inline]
pub fn voxel_index(shape: Shape3, x: usize, y: usize, z: usize) -> usize {
    x + shape[0] * (y + shape[1] * z)
}

/// One MR modality, label volume or brain map on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D<T> {
    shape: Shape3,
    spacing: Spacing,
    modality: Modality,
    label_set: Option<Vec<i32>>,
    data: Vec<T>,
}

impl<T: Scalar> Volume3D<T> {
    /// Builds an intensity volume, checking dimensions and spacing.
    pub fn new(shape: Shape3, spacing: Spacing, modality: Modality, data: Vec<T>) -> Result<Self> {
        if !modality.is_image() {
            return Err(Error::Invalid(format!(
                "{modality} volumes need a label set; use Volume3D::labels"
            )));
        }
        check_geometry(shape, spacing, data.len())?;
        Ok(Volume3D {
            shape,
            spacing,
            modality,
            label_set: None,
            data,
        })
    }

    /// Builds a label-valued volume; every voxel must be one of `label_set`.
    pub fn labels(
        shape: Shape3,
        spacing: Spacing,
        modality: Modality,
        label_set: Vec<i32>,
        data: Vec<T>,
    ) -> Result<Self> {
        if modality.is_image() {
            return Err(Error::Invalid(format!("{modality} is not a label modality")));
        }
        check_geometry(shape, spacing, data.len())?;
        let mut found: Vec<f64> = Vec::new();
        for &v in &data {
            let f = v.as_f64();
            let ok = f.fract() == 0.0 && label_set.contains(&(f as i32));
            if !ok && !found.contains(&f) {
                found.push(f);
            }
        }
        if !found.is_empty() {
            found.sort_by(f64::total_cmp);
            return Err(Error::UnknownLabels {
                allowed: label_set,
                found,
            });
        }
        Ok(Volume3D {
            shape,
            spacing,
            modality,
            label_set: Some(label_set),
            data,
        })
    }

    pub fn zeros(shape: Shape3, spacing: Spacing, modality: Modality) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, spacing, modality, vec![T::zero(); n])
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn label_set(&self) -> Option<&[i32]> {
        self.label_set.as_deref()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[voxel_index(self.shape, x, y, z)]
    }

    /// Number of voxels in one axial slice.
    pub fn slice_len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    /// Axial slice `z` as a row-major `y x x` plane.
    pub fn slice_z(&self, z: usize) -> &[T] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// Same geometry and modality, new intensities.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                left: vec![self.data.len()],
                right: vec![data.len()],
            });
        }
        match &self.label_set {
            Some(set) => Self::labels(self.shape, self.spacing, self.modality, set.clone(), data),
            None => Self::new(self.shape, self.spacing, self.modality, data),
        }
    }

    pub fn same_geometry<U>(&self, other: &Volume3D<U>) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }

    /// Converts element type, keeping geometry and metadata.
    pub fn cast<U: Scalar>(&self) -> Volume3D<U> {
        Volume3D {
            shape: self.shape,
            spacing: self.spacing,
            modality: self.modality,
            label_set: self.label_set.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

fn check_geometry(shape: Shape3, spacing: Spacing, len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidVolume(format!("zero-sized dimension in {shape:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidVolume(format!("non-positive spacing {spacing:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::InvalidVolume(format!(
            "shape {shape:?} needs {expected} voxels, got {len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(Volume3D::<f32>::zeros([0, 2, 2], [1.0; 3], Modality::T1).is_err());
        assert!(Volume3D::<f32>::zeros([2, 2, 2], [1.0, 0.0, 1.0], Modality::T1).is_err());
        assert!(Volume3D::<f32>::new([2, 2, 2], [1.0; 3], Modality::T1, vec![0.0; 7]).is_err());
    }

    #[test]
    fn label_volume_rejects_unknown_value() {
        let mut data = vec![0.0f32; 8];
        data[3] = 9.0;
        let err = Volume3D::labels([2, 2, 2], [1.0; 3], Modality::Label, vec![0, 1, 2, 4], data)
            .unwrap_err();
        match err {
            Error::UnknownLabels { found, .. } => assert_eq!(found, vec![9.0]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn slice_layout_is_x_fastest() {
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let v = Volume3D::new([2, 3, 4], [1.0; 3], Modality::T2, data).unwrap();
        assert_eq!(v.get(1, 2, 3), 23.0);
        assert_eq!(v.slice_z(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn modality_names_roundtrip() {
        for m in [
            Modality::T1,
            Modality::T1ce,
            Modality::T2,
            Modality::Flair,
            Modality::Label,
            Modality::LabelMap,
        ] {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
    }
}
