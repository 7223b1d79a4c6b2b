//! Tumor label conventions and derived region masks.
//!
//! Label volumes use the BraTS integer codes: 1 for necrosis / non-enhancing
//! core, 2 for peritumoral edema and 4 for enhancing tumor.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Modality, Shape3, Volume3D};

pub const BACKGROUND: i32 = 0;
pub const NCR: i32 = 1;
pub const EDEMA: i32 = 2;
pub const ET: i32 = 4;

/// Values a case label volume may hold.
pub const BRATS_LABELS: [i32; 4] = [BACKGROUND, NCR, EDEMA, ET];

/// Label set declared by binary mask volumes.
pub const MASK_LABELS: [i32; 2] = [0, 1];

/// Evaluated tumor region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    /// Whole tumor: ET, edema and NCR.
    Wt,
    /// Tumor core: ET and NCR.
    Tc,
    /// Enhancing tumor.
    Et,
}

impl Region {
    /// Table ordering used in reports.
    pub const ALL: [Region; 3] = [Region::Et, Region::Wt, Region::Tc];

    pub fn contains(self, label: i32) -> bool {
        match self {
            Region::Wt => matches!(label, NCR | EDEMA | ET),
            Region::Tc => matches!(label, NCR | ET),
            Region::Et => label == ET,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Wt => "WT",
            Region::Tc => "TC",
            Region::Et => "ET",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WT" => Ok(Region::Wt),
            "TC" => Ok(Region::Tc),
            "ET" => Ok(Region::Et),
            other => Err(Error::Invalid(format!("unknown region {other:?}"))),
        }
    }
}

/// Boolean voxel grid sharing the volume indexing convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape3,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: Shape3, data: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 || n != data.len() {
            return Err(Error::InvalidVolume(format!(
                "mask shape {shape:?} does not fit {} voxels",
                data.len()
            )));
        }
        Ok(BinaryMask { shape, data })
    }

    pub fn empty(shape: Shape3) -> Self {
        BinaryMask {
            shape,
            data: vec![false; shape.iter().product()],
        }
    }

    /// A single 2D plane (`height` rows of `width` columns) as a mask with depth 1.
    pub fn from_plane(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        Self::new([width, height, 1], data)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a || b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            shape: self.shape,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            });
        }
        Ok(BinaryMask {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Encodes the mask as a `{0, 1}` label volume.
    pub fn to_volume<T: Scalar>(&self, spacing: [f64; 3]) -> Result<Volume3D<T>> {
        let data = self.data.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        Volume3D::labels(self.shape, spacing, Modality::Label, MASK_LABELS.to_vec(), data)
    }

    /// Reads a `{0, 1}` label volume (any non-zero voxel counts as set).
    pub fn from_volume<T: Scalar>(v: &Volume3D<T>) -> BinaryMask {
        BinaryMask {
            shape: v.shape(),
            data: v.data().iter().map(|x| !x.is_zero()).collect(),
        }
    }
}

/// Binary mask of one tumor region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub region: Region,
    pub mask: BinaryMask,
}

/// Derives the WT / TC / ET mask from a BraTS label volume.
pub fn region_mask<T: Scalar>(labels: &Volume3D<T>, region: Region) -> Result<RegionMask> {
    if labels.modality() != Modality::Label {
        return Err(Error::WrongModality {
            expected: Modality::Label,
            got: labels.modality(),
        });
    }
    let data = labels
        .data()
        .iter()
        .map(|v| region.contains(v.as_f64() as i32))
        .collect();
    Ok(RegionMask {
        region,
        mask: BinaryMask::new(labels.shape(), data)?,
    })
}

/// Builds a BraTS label volume from per-region masks (ET → 4, rest of TC → 1, rest of WT → 2).
pub fn labels_from_regions<T: Scalar>(
    wt: &BinaryMask,
    tc: &BinaryMask,
    et: &BinaryMask,
    spacing: [f64; 3],
) -> Result<Volume3D<T>> {
    if wt.shape() != tc.shape() || wt.shape() != et.shape() {
        return Err(Error::ShapeMismatch {
            left: wt.shape().to_vec(),
            right: et.shape().to_vec(),
        });
    }
    let data = (0..wt.data().len())
        .map(|i| {
            let code = if et.data()[i] {
                ET
            } else if tc.data()[i] {
                NCR
            } else if wt.data()[i] {
                EDEMA
            } else {
                BACKGROUND
            };
            T::lit(code as f64)
        })
        .collect();
    Volume3D::labels(wt.shape(), spacing, Modality::Label, BRATS_LABELS.to_vec(), data)
}
