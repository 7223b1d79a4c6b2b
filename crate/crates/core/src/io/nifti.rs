//! NIfTI-1 ingestion (`.nii` / `.nii.gz`), converted to the internal layout.

use std::path::Path;

use nifti::{IntoNdArray, NiftiObject, ReaderOptions};

use crate::error::{Error, Result};
use crate::labels::BRATS_LABELS;
use crate::scalar::Scalar;
use crate::volume::{Modality, Volume3D};

/// Reads a single-file NIfTI volume. Label volumes are checked against the
/// BraTS label set.
pub fn read_nifti<T: Scalar>(path: &Path, modality: Modality) -> Result<Volume3D<T>> {
    let fail = |reason: String| Error::Nifti {
        path: path.to_path_buf(),
        reason,
    };
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| fail(e.to_string()))?;
    let header = obj.header().clone();
    let array = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| fail(e.to_string()))?;
    let dims = array.shape().to_vec();
    if dims.len() < 3 || dims[3..].iter().any(|&d| d != 1) {
        return Err(fail(format!("expected a 3D volume, got dimensions {dims:?}")));
    }
    let shape = [dims[0], dims[1], dims[2]];
    let spacing = [
        header.pixdim[1].abs() as f64,
        header.pixdim[2].abs() as f64,
        header.pixdim[3].abs() as f64,
    ];
    let spacing = spacing.map(|s| if s > 0.0 { s } else { 1.0 });
    let mut data = Vec::with_capacity(shape.iter().product());
    let mut index = vec![0usize; dims.len()];
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                index[0] = x;
                index[1] = y;
                index[2] = z;
                data.push(T::lit(array[index.as_slice()] as f64));
            }
        }
    }
    match modality {
        Modality::Label => Volume3D::labels(shape, spacing, modality, BRATS_LABELS.to_vec(), data),
        m if m.is_image() => Volume3D::new(shape, spacing, modality, data),
        m => Err(fail(format!("cannot ingest {m} from NIfTI"))),
    }
}
