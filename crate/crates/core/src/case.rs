use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::labels::BRATS_LABELS;
use crate::scalar::Scalar;
use crate::volume::{Modality, Shape3, Spacing, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Real,
    Synthetic,
    Phantom,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "REAL",
            Provenance::Synthetic => "SYNTHETIC",
            Provenance::Phantom => "PHANTOM",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "REAL" => Ok(Provenance::Real),
            "SYNTHETIC" => Ok(Provenance::Synthetic),
            "PHANTOM" => Ok(Provenance::Phantom),
            other => Err(Error::Invalid(format!("unknown provenance {other:?}"))),
        }
    }
}

/// Co-registered MR sequences of one subject plus an optional label volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientCase<T> {
    id: String,
    volumes: BTreeMap<Modality, Volume3D<T>>,
    labels: Option<Volume3D<T>>,
    provenance: Provenance,
    /// Free-form key/value annotations persisted next to the volumes.
    pub metadata: BTreeMap<String, String>,
}

impl<T: Scalar> PatientCase<T> {
    /// Validates that all volumes share one geometry and labels use BraTS codes.
    pub fn new(
        id: impl Into<String>,
        volumes: BTreeMap<Modality, Volume3D<T>>,
        labels: Option<Volume3D<T>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let id = id.into();
        if volumes.is_empty() {
            return Err(Error::Invalid(format!("case {id} has no image volumes")));
        }
        for (m, v) in &volumes {
            if *m != v.modality() || !m.is_image() {
                return Err(Error::Invalid(format!(
                    "case {id}: volume keyed {m} has modality {}",
                    v.modality()
                )));
            }
        }
        let mut geometries: Vec<(String, Shape3, Spacing)> = volumes
            .iter()
            .map(|(m, v)| (m.to_string(), v.shape(), v.spacing()))
            .collect();
        if let Some(l) = &labels {
            if l.modality() != Modality::Label {
                return Err(Error::WrongModality {
                    expected: Modality::Label,
                    got: l.modality(),
                });
            }
            if let Some(set) = l.label_set() {
                if set.iter().any(|c| !BRATS_LABELS.contains(c)) {
                    return Err(Error::UnknownLabels {
                        allowed: BRATS_LABELS.to_vec(),
                        found: set.iter().map(|&c| c as f64).collect(),
                    });
                }
            }
            geometries.push(("LABEL".into(), l.shape(), l.spacing()));
        }
        let (_, s0, p0) = &geometries[0];
        if geometries.iter().any(|(_, s, p)| s != s0 || p != p0) {
            let report = geometries
                .iter()
                .map(|(n, s, p)| format!("  {n}: shape {s:?} spacing {p:?}"))
                .collect::<Vec<_>>()
                .join("\n");
            return Err(Error::GeometryMismatch(report));
        }
        Ok(PatientCase {
            id,
            volumes,
            labels,
            provenance,
            metadata: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn volumes(&self) -> &BTreeMap<Modality, Volume3D<T>> {
        &self.volumes
    }

    pub fn volume(&self, m: Modality) -> Result<&Volume3D<T>> {
        self.volumes.get(&m).ok_or_else(|| Error::MissingModality {
            case: self.id.clone(),
            modality: m,
            path: Default::default(),
        })
    }

    pub fn labels(&self) -> Option<&Volume3D<T>> {
        self.labels.as_ref()
    }

    pub fn shape(&self) -> Shape3 {
        self.volumes.values().next().expect("non-empty by construction").shape()
    }

    pub fn spacing(&self) -> Spacing {
        self.volumes.values().next().expect("non-empty by construction").spacing()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Replaces one image volume, keeping the geometry invariant.
    pub fn replace_volume(&mut self, v: Volume3D<T>) -> Result<()> {
        if !v.same_geometry(self.volume_any()) {
            return Err(Error::GeometryMismatch(format!(
                "  {}: shape {:?} spacing {:?} vs case {:?} {:?}",
                v.modality(),
                v.shape(),
                v.spacing(),
                self.shape(),
                self.spacing()
            )));
        }
        self.volumes.insert(v.modality(), v);
        Ok(())
    }

    fn volume_any(&self) -> &Volume3D<T> {
        self.volumes.values().next().expect("non-empty by construction")
    }
}
