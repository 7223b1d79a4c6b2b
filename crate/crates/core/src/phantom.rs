//! Procedural brain phantoms with a nested spherical lesion.
//!
//! The brain is an ellipsoid with a smooth radial falloff and a CSF-filled
//! ventricle; the lesion is three concentric spheres (NCR inside ET inside
//! edema). Each modality scales the tissue classes by a fixed multiplier.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::case::{PatientCase, Provenance};
use crate::error::{Error, Result};
use crate::labels::{BRATS_LABELS, EDEMA, ET, NCR};
use crate::scalar::Scalar;
use crate::volume::{voxel_index, Modality, Shape3, Spacing, Volume3D};

/// Version of the default [`IntensityRules`]; bump whenever the table changes.
pub const RULES_VERSION: &str = "phantom-rules-1";

/// Intensity of healthy tissue at the brain centre.
pub const BASE_INTENSITY: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Brain = 0,
    Csf = 1,
    Edema = 2,
    Et = 3,
    Ncr = 4,
}

/// Per-modality multipliers, indexed `[modality][tissue]` with modalities in
/// `Modality::IMAGES` order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityRules {
    pub version: String,
    pub multipliers: [[f64; 5]; 4],
}

impl Default for IntensityRules {
    fn default() -> Self {
        IntensityRules {
            version: RULES_VERSION.to_string(),
            //            brain  csf   edema  et    ncr
            multipliers: [
                [1.0, 0.3, 0.7, 0.75, 0.4],  // T1
                [1.0, 0.3, 0.7, 1.6, 0.35],  // T1CE
                [0.6, 1.2, 1.6, 1.0, 1.4],   // T2
                [0.7, 0.2, 1.6, 1.1, 0.9],   // FLAIR
            ],
        }
    }
}

impl IntensityRules {
    pub fn multiplier(&self, modality: Modality, tissue: Tissue) -> f64 {
        let m = Modality::IMAGES
            .iter()
            .position(|&x| x == modality)
            .expect("image modality");
        self.multipliers[m][tissue as usize]
    }
}

/// Concentric lesion shells, radii in voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionSpec {
    pub center: [f64; 3],
    pub ncr_radius: f64,
    pub et_radius: f64,
    pub edema_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub id: String,
    pub shape: Shape3,
    pub spacing: Spacing,
    pub brain_center: [f64; 3],
    pub brain_axes: [f64; 3],
    /// Ventricle semi-axes; centred on the brain, shifted by `ventricle_offset` along x.
    pub ventricle_axes: [f64; 3],
    pub ventricle_offset: f64,
    pub lesion: Option<LesionSpec>,
    pub rules: IntensityRules,
    pub noise_sd: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Centred brain, lesion in the right hemisphere, sized relative to the grid.
    pub fn centered(id: impl Into<String>, shape: Shape3, seed: u64) -> Self {
        let c = shape.map(|s| (s as f64 - 1.0) / 2.0);
        let axes = [0.42 * shape[0] as f64, 0.42 * shape[1] as f64, 0.42 * shape[2] as f64];
        let s = scale_of(shape);
        PhantomSpec {
            id: id.into(),
            shape,
            spacing: [1.0; 3],
            brain_center: c,
            brain_axes: axes,
            ventricle_axes: [0.12 * axes[0], 0.3 * axes[1], 0.35 * axes[2]],
            ventricle_offset: -0.35 * axes[0],
            lesion: Some(LesionSpec {
                center: [c[0] + 0.3 * axes[0], c[1], c[2]],
                ncr_radius: 4.75 * s,
                et_radius: 7.25 * s,
                edema_radius: 10.25 * s,
            }),
            rules: IntensityRules::default(),
            noise_sd: 0.03 * BASE_INTENSITY,
            seed,
        }
    }

    /// Seeded variation of [`PhantomSpec::centered`]: jittered lesion size and
    /// position, always inside the brain.
    pub fn random(id: impl Into<String>, shape: Shape3, seed: u64) -> Self {
        let mut spec = Self::centered(id, shape, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let base = spec.lesion.expect("centered spec has a lesion");
        for _ in 0..64 {
            let j: f64 = rng.gen_range(0.8..1.2);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let a = spec.brain_axes;
            let center = [
                spec.brain_center[0] + side * rng.gen_range(0.15..0.4) * a[0],
                spec.brain_center[1] + rng.gen_range(-0.3..0.3) * a[1],
                spec.brain_center[2] + rng.gen_range(-0.15..0.15) * a[2],
            ];
            let lesion = LesionSpec {
                center,
                ncr_radius: base.ncr_radius * j,
                et_radius: base.et_radius * j,
                edema_radius: base.edema_radius * j,
            };
            let candidate = PhantomSpec {
                lesion: Some(lesion),
                ventricle_offset: -side * spec.ventricle_offset.abs(),
                ..spec.clone()
            };
            if candidate.validate().is_ok() {
                return candidate;
            }
        }
        spec.lesion = Some(base);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&s| s == 0) || self.brain_axes.iter().any(|&a| a <= 0.0) {
            return Err(Error::Invalid("phantom shape and brain axes must be positive".into()));
        }
        let Some(l) = self.lesion else { return Ok(()) };
        if !(0.0 < l.ncr_radius && l.ncr_radius < l.et_radius && l.et_radius < l.edema_radius) {
            return Err(Error::Invalid(format!(
                "lesion radii must satisfy 0 < NCR < ET < edema, got {} / {} / {}",
                l.ncr_radius, l.et_radius, l.edema_radius
            )));
        }
        let mut any = false;
        for [x, y, z] in grid(self.shape) {
            if dist(&l.center, x, y, z) <= l.edema_radius {
                any = true;
                if self.brain_radius(x, y, z) > 1.0 {
                    return Err(Error::Invalid(format!(
                        "lesion voxel ({x}, {y}, {z}) lies outside the brain"
                    )));
                }
            }
        }
        if !any {
            return Err(Error::Invalid("lesion covers no voxel of the grid".into()));
        }
        Ok(())
    }

    /// Normalized ellipsoid radius; 1 on the brain boundary.
    fn brain_radius(&self, x: usize, y: usize, z: usize) -> f64 {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.brain_center[a]) / self.brain_axes[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn in_ventricle(&self, x: usize, y: usize, z: usize) -> bool {
        let c = [
            self.brain_center[0] + self.ventricle_offset,
            self.brain_center[1],
            self.brain_center[2],
        ];
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - c[a]) / self.ventricle_axes[a].max(1e-9)).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// Tissue class at a voxel, `None` outside the brain.
    pub fn tissue(&self, x: usize, y: usize, z: usize) -> Option<Tissue> {
        if self.brain_radius(x, y, z) > 1.0 {
            return None;
        }
        if let Some(l) = &self.lesion {
            let d = dist(&l.center, x, y, z);
            if d <= l.ncr_radius {
                return Some(Tissue::Ncr);
            }
            if d <= l.et_radius {
                return Some(Tissue::Et);
            }
            if d <= l.edema_radius {
                return Some(Tissue::Edema);
            }
        }
        if self.in_ventricle(x, y, z) {
            return Some(Tissue::Csf);
        }
        Some(Tissue::Brain)
    }
}

fn scale_of(shape: Shape3) -> f64 {
    (shape[0].min(shape[1]).min(2 * shape[2]) as f64) / 64.0
}

fn dist(c: &[f64; 3], x: usize, y: usize, z: usize) -> f64 {
    ((x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2)).sqrt()
}

fn grid(shape: Shape3) -> impl Iterator<Item = [usize; 3]> {
    (0..shape[2]).flat_map(move |z| (0..shape[1]).flat_map(move |y| (0..shape[0]).map(move |x| [x, y, z])))
}

/// Smooth radial falloff of healthy intensity; Lipschitz constant 0.5 in `r`.
pub fn radial_profile(r: f64) -> f64 {
    1.0 - 0.25 * r * r
}

/// Renders the four modalities and the label volume of `spec`.
pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<PatientCase<T>> {
    spec.validate()?;
    let n: usize = spec.shape.iter().product();
    let mut tissue = vec![None; n];
    let mut profile = vec![0.0; n];
    let mut labels = vec![T::zero(); n];
    for [x, y, z] in grid(spec.shape) {
        let i = voxel_index(spec.shape, x, y, z);
        tissue[i] = spec.tissue(x, y, z);
        profile[i] = radial_profile(spec.brain_radius(x, y, z));
        let code = match tissue[i] {
            Some(Tissue::Ncr) => NCR,
            Some(Tissue::Et) => ET,
            Some(Tissue::Edema) => EDEMA,
            _ => 0,
        };
        labels[i] = T::lit(code as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
    let floor = 1e-3 * BASE_INTENSITY;
    let mut volumes = BTreeMap::new();
    for m in Modality::IMAGES {
        let data = (0..n)
            .map(|i| match tissue[i] {
                None => T::zero(),
                Some(t) => {
                    let mut v = BASE_INTENSITY * spec.rules.multiplier(m, t) * profile[i];
                    if spec.noise_sd > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    T::lit(v.max(floor))
                }
            })
            .collect();
        volumes.insert(m, Volume3D::new(spec.shape, spec.spacing, m, data)?);
    }
    let label_vol = Volume3D::labels(spec.shape, spec.spacing, Modality::Label, BRATS_LABELS.to_vec(), labels)?;
    let mut case = PatientCase::new(spec.id.clone(), volumes, Some(label_vol), Provenance::Phantom)?;
    case.metadata.insert("rules_version".into(), spec.rules.version.clone());
    case.metadata.insert("seed".into(), spec.seed.to_string());
    Ok(case)
}

/// `count` random phantoms with consecutive seeds starting at `seed`.
pub fn generate_cohort<T: Scalar>(count: usize, shape: Shape3, seed: u64) -> Result<Vec<PatientCase<T>>> {
    (0..count)
        .map(|k| {
            let s = seed.wrapping_add(k as u64);
            generate_phantom(&PhantomSpec::random(format!("phantom_{s:06}"), shape, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{region_mask, Region};
    use std::f64::consts::PI;

    fn ball(r: f64) -> f64 {
        4.0 / 3.0 * PI * r.powi(3)
    }

    #[test]
    fn deterministic() {
        let spec = PhantomSpec::random("p", [32, 32, 16], 7);
        let a: PatientCase<f32> = generate_phantom(&spec).unwrap();
        let b: PatientCase<f32> = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_lesion_means_background_labels() {
        let mut spec = PhantomSpec::centered("p", [32, 32, 16], 1);
        spec.lesion = None;
        let c: PatientCase<f32> = generate_phantom(&spec).unwrap();
        assert!(c.labels().unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lesion_outside_brain_rejected() {
        let mut spec = PhantomSpec::centered("p", [32, 32, 16], 1);
        spec.lesion.as_mut().unwrap().center = [1.0, 1.0, 1.0];
        assert!(generate_phantom::<f32>(&spec).is_err());
    }

    #[test]
    fn region_counts_match_analytic_volumes() {
        let spec = PhantomSpec::centered("p", [64, 64, 32], 3);
        let l = spec.lesion.unwrap();
        let c: PatientCase<f64> = generate_phantom(&spec).unwrap();
        let labels = c.labels().unwrap();
        let count = |r| region_mask(labels, r).unwrap().mask.count() as f64;
        let expect = [
            (Region::Wt, ball(l.edema_radius)),
            (Region::Tc, ball(l.et_radius)),
            (Region::Et, ball(l.et_radius) - ball(l.ncr_radius)),
        ];
        for (r, v) in expect {
            let got = count(r);
            assert!((got - v).abs() <= 0.02 * v, "{r}: {got} vs {v}");
        }
    }

    #[test]
    fn contrast_rules() {
        let r = IntensityRules::default();
        use Modality::*;
        for m in [T2, Flair] {
            let e = r.multiplier(m, Tissue::Edema);
            assert!([Tissue::Brain, Tissue::Et, Tissue::Ncr].iter().all(|&t| r.multiplier(m, t) < e));
        }
        let et = r.multiplier(T1ce, Tissue::Et);
        assert!([Tissue::Brain, Tissue::Csf, Tissue::Edema, Tissue::Ncr]
            .iter()
            .all(|&t| r.multiplier(T1ce, t) < et));
        assert!(r.multiplier(T1ce, Tissue::Ncr) < r.multiplier(T1ce, Tissue::Brain));
    }

    #[test]
    fn noiseless_tissue_is_smooth() {
        let mut spec = PhantomSpec::centered("p", [32, 32, 16], 1);
        spec.noise_sd = 0.0;
        let c: PatientCase<f64> = generate_phantom(&spec).unwrap();
        let min_axis = spec.brain_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        for m in Modality::IMAGES {
            let v = c.volume(m).unwrap();
            let max_mult = spec.rules.multipliers.iter().flatten().cloned().fold(0.0, f64::max);
            let bound = BASE_INTENSITY * max_mult * 0.5 / min_axis + 1e-9;
            for [x, y, z] in grid(spec.shape) {
                if x + 1 >= spec.shape[0] {
                    continue;
                }
                let (a, b) = (spec.tissue(x, y, z), spec.tissue(x + 1, y, z));
                if a.is_some() && a == b {
                    assert!((v.get(x, y, z) - v.get(x + 1, y, z)).abs() <= bound);
                }
            }
        }
    }
}
