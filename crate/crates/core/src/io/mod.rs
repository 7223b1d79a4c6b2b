//! Case directories.
//!
//! A case directory holds one file per modality plus optional labels, named
//! either natively (`<id>_T1.hdr`/`.raw`, ..., `<id>_LABEL.hdr`) or in the
//! BraTS NIfTI style (`<id>_t1.nii.gz`, ..., `<id>_seg.nii.gz`). A dataset
//! directory is a directory of case directories.

pub mod native;
pub mod nifti;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::case::{PatientCase, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Modality, Volume3D};

pub use native::{read_volume, write_volume, NativeHeader};
pub use nifti::read_nifti;

/// File naming convention of a case directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Naming {
    Native,
    Brats,
    /// Native when any `.hdr` file is present, BraTS NIfTI otherwise.
    #[default]
    Auto,
}

const META_SUFFIX: &str = "meta.txt";

fn sorted_entries(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Finds the case id from files of the form `<id>_<suffix><ext>`.
fn infer_id(dir: &Path, names: &[String], suffixes: &[String]) -> Result<String> {
    let mut ids: Vec<String> = names
        .iter()
        .filter_map(|n| {
            suffixes
                .iter()
                .find_map(|s| n.strip_suffix(s.as_str()).map(str::to_string))
        })
        .collect();
    ids.sort();
    ids.dedup();
    match ids.len() {
        0 => Ok(dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("case")
            .to_string()),
        1 => Ok(ids.remove(0)),
        _ => Err(Error::Invalid(format!(
            "{}: files for several cases present: {ids:?}",
            dir.display()
        ))),
    }
}

/// Loads a case directory. Labels are optional; all four MR sequences are required.
pub fn load_case<T: Scalar>(directory: &Path, naming: Naming) -> Result<PatientCase<T>> {
    let names = sorted_entries(directory)?;
    let naming = match naming {
        Naming::Auto if names.iter().any(|n| n.ends_with(".hdr")) => Naming::Native,
        Naming::Auto => Naming::Brats,
        n => n,
    };
    let (id, mut volumes, labels) = match naming {
        Naming::Native => load_native(directory, &names)?,
        _ => load_brats(directory, &names)?,
    };
    let meta = read_meta(&directory.join(format!("{id}_{META_SUFFIX}")))?;
    let provenance = match meta.get("provenance") {
        Some(p) => p.parse()?,
        None => Provenance::Real,
    };
    let volumes_map: BTreeMap<_, _> = std::mem::take(&mut volumes).into_iter().collect();
    let mut case = PatientCase::new(id, volumes_map, labels, provenance)?;
    case.metadata = meta.into_iter().filter(|(k, _)| k != "provenance").collect();
    Ok(case)
}

type Loaded<T> = (String, Vec<(Modality, Volume3D<T>)>, Option<Volume3D<T>>);

fn load_native<T: Scalar>(dir: &Path, names: &[String]) -> Result<Loaded<T>> {
    let suffixes: Vec<String> = Modality::IMAGES.iter().map(|m| format!("_{m}.hdr")).collect();
    let id = infer_id(dir, names, &suffixes)?;
    let mut volumes = Vec::new();
    for m in Modality::IMAGES {
        let hdr = native::header_path(dir, &format!("{id}_{m}"));
        if !hdr.exists() {
            return Err(Error::MissingModality {
                case: id,
                modality: m,
                path: hdr,
            });
        }
        let (v, _) = read_volume::<T>(&hdr)?;
        if v.modality() != m {
            return Err(Error::Header {
                path: hdr,
                reason: format!("declares modality {} but is named {m}", v.modality()),
            });
        }
        volumes.push((m, v));
    }
    let label_hdr = native::header_path(dir, &format!("{id}_{}", Modality::Label));
    let labels = if label_hdr.exists() {
        Some(read_volume::<T>(&label_hdr)?.0)
    } else {
        None
    };
    Ok((id, volumes, labels))
}

fn brats_file(dir: &Path, id: &str, m: Modality) -> Option<PathBuf> {
    ["nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{id}_{}.{ext}", m.brats_suffix())))
        .find(|p| p.exists())
}

fn load_brats<T: Scalar>(dir: &Path, names: &[String]) -> Result<Loaded<T>> {
    let suffixes: Vec<String> = Modality::IMAGES
        .iter()
        .flat_map(|m| {
            let s = m.brats_suffix();
            [format!("_{s}.nii.gz"), format!("_{s}.nii")]
        })
        .collect();
    let id = infer_id(dir, names, &suffixes)?;
    let mut volumes = Vec::new();
    for m in Modality::IMAGES {
        let path = brats_file(dir, &id, m).ok_or_else(|| Error::MissingModality {
            case: id.clone(),
            modality: m,
            path: dir.join(format!("{id}_{}.nii.gz", m.brats_suffix())),
        })?;
        volumes.push((m, read_nifti::<T>(&path, m)?));
    }
    let labels = match brats_file(dir, &id, Modality::Label) {
        Some(p) => Some(read_nifti::<T>(&p, Modality::Label)?),
        None => None,
    };
    Ok((id, volumes, labels))
}

fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Writes a case in the native format. Label and metadata files are only
/// written when present.
pub fn save_case<T: Scalar>(case: &PatientCase<T>, directory: &Path) -> Result<()> {
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    let id = case.id();
    let none = BTreeMap::new();
    for (m, v) in case.volumes() {
        write_volume(directory, &format!("{id}_{m}"), v, &none)?;
    }
    if let Some(l) = case.labels() {
        write_volume(directory, &format!("{id}_{}", Modality::Label), l, &none)?;
    }
    let mut meta = format!("provenance={}\n", case.provenance());
    for (k, v) in &case.metadata {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let path = directory.join(format!("{id}_{META_SUFFIX}"));
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Loads every case directory under `root`, sorted by directory name.
pub fn load_dataset<T: Scalar>(root: &Path, naming: Naming) -> Result<Vec<PatientCase<T>>> {
    let mut cases = Vec::new();
    for name in sorted_entries(root)? {
        let path = root.join(&name);
        if path.is_dir() {
            cases.push(load_case(&path, naming)?);
        }
    }
    Ok(cases)
}

/// Saves each case into `<root>/<id>/`.
pub fn save_dataset<T: Scalar>(cases: &[PatientCase<T>], root: &Path) -> Result<()> {
    for c in cases {
        save_case(c, &root.join(c.id()))?;
    }
    Ok(())
}
