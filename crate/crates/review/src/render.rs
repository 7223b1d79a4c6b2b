//! Grayscale PNG renderings of volume slices.

use std::str::FromStr;

use glioaug_core::{Scalar, Volume3D};
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Coronal,
    Sagittal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Coronal, View::Sagittal];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Coronal => "coronal",
            View::Sagittal => "sagittal",
        }
    }

    /// Number of slices along the view's normal for a `[x, y, z]` grid.
    pub fn slices(self, shape: [usize; 3]) -> usize {
        match self {
            View::Axial => shape[2],
            View::Coronal => shape[1],
            View::Sagittal => shape[0],
        }
    }
}

impl FromStr for View {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self, ReviewError> {
        match s {
            "axial" => Ok(View::Axial),
            "coronal" => Ok(View::Coronal),
            "sagittal" => Ok(View::Sagittal),
            other => Err(ReviewError::Invalid(format!("unknown view {other:?}"))),
        }
    }
}

/// Slice `k` as rows of 8-bit gray, scaled by the volume's min/max.
/// Coronal and sagittal planes put the top of the head (high z) first.
pub fn slice_pixels<T: Scalar>(v: &Volume3D<T>, view: View, k: usize) -> Result<(usize, usize, Vec<u8>), ReviewError> {
    let [nx, ny, nz] = v.shape();
    let n = view.slices(v.shape());
    if k >= n {
        return Err(ReviewError::Invalid(format!("slice {k} out of range 0..{n}")));
    }
    let (lo, hi) = (v.min_value().as_f64(), v.max_value().as_f64());
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let px = |x: usize, y: usize, z: usize| ((v.get(x, y, z).as_f64() - lo) * scale).round().clamp(0.0, 255.0) as u8;
    let (w, h) = match view {
        View::Axial => (nx, ny),
        View::Coronal => (nx, nz),
        View::Sagittal => (ny, nz),
    };
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            out.push(match view {
                View::Axial => px(col, row, k),
                View::Coronal => px(col, k, nz - 1 - row),
                View::Sagittal => px(k, col, nz - 1 - row),
            });
        }
    }
    Ok((w, h, out))
}

pub fn encode_png(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("in-memory png header");
    writer.write_image_data(gray).expect("in-memory png data");
    writer.finish().expect("in-memory png");
    buf
}

pub fn render_slice<T: Scalar>(v: &Volume3D<T>, view: View, k: usize) -> Result<Vec<u8>, ReviewError> {
    let (w, h, px) = slice_pixels(v, view, k)?;
    Ok(encode_png(w, h, &px))
}
