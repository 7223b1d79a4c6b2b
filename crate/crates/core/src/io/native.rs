//! Native volume format: a raw little-endian float32 array plus a text header.
//!
//! ```text
//! shape=240,240,155
//! spacing=1,1,1
//! modality=T1
//! dtype=float32
//! labels=0,1,2,4        (label volumes only)
//! ```
//!
//! Unknown keys are preserved and handed back to the caller.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{Modality, Shape3, Spacing, Volume3D};

const RESERVED: [&str; 5] = ["shape", "spacing", "modality", "dtype", "labels"];

#[derive(Debug, Clone, PartialEq)]
pub struct NativeHeader {
    pub shape: Shape3,
    pub spacing: Spacing,
    pub modality: Modality,
    pub label_set: Option<Vec<i32>>,
    pub extra: BTreeMap<String, String>,
}

impl NativeHeader {
    pub fn render(&self) -> String {
        let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(",");
        let mut s = format!(
            "shape={}\nspacing={}\nmodality={}\ndtype=float32\n",
            join(&mut self.shape.iter().map(|d| d.to_string())),
            join(&mut self.spacing.iter().map(|d| d.to_string())),
            self.modality
        );
        if let Some(set) = &self.label_set {
            s.push_str(&format!("labels={}\n", join(&mut set.iter().map(|d| d.to_string()))));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Header {
            path: path.to_path_buf(),
            reason,
        };
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing `{k}`")));

        let shape = parse_triple::<usize>(take("shape")?).map_err(|e| bad(format!("shape: {e}")))?;
        let spacing = parse_triple::<f64>(take("spacing")?).map_err(|e| bad(format!("spacing: {e}")))?;
        let modality: Modality = take("modality")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        match fields.get("dtype").map(String::as_str) {
            None | Some("float32") => {}
            Some(other) => return Err(bad(format!("unsupported dtype {other}"))),
        }
        let label_set = match fields.get("labels") {
            Some(s) => Some(
                s.split(',')
                    .map(|t| t.trim().parse::<i32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("labels: {e}")))?,
            ),
            None => None,
        };
        let extra = fields
            .into_iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .collect();
        Ok(NativeHeader {
            shape,
            spacing,
            modality,
            label_set,
            extra,
        })
    }
}

fn parse_triple<U: std::str::FromStr>(s: &str) -> std::result::Result<[U; 3], String>
where
    U::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected 3 comma separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<U>().map_err(|e| format!("{p:?}: {e}"))?);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// `<dir>/<stem>.hdr`
pub fn header_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.hdr"))
}

fn raw_path(hdr: &Path) -> PathBuf {
    hdr.with_extension("raw")
}

/// Writes `<stem>.hdr` and `<stem>.raw` into `dir`.
pub fn write_volume<T: Scalar>(
    dir: &Path,
    stem: &str,
    volume: &Volume3D<T>,
    extra: &BTreeMap<String, String>,
) -> Result<PathBuf> {
    let hdr = header_path(dir, stem);
    let header = NativeHeader {
        shape: volume.shape(),
        spacing: volume.spacing(),
        modality: volume.modality(),
        label_set: volume.label_set().map(<[i32]>::to_vec),
        extra: extra.clone(),
    };
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for v in volume.data() {
        let f = v.to_f32().unwrap_or(f32::NAN);
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    let raw = raw_path(&hdr);
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    fs::write(&hdr, header.render()).map_err(|e| Error::io(&hdr, e))?;
    Ok(hdr)
}

/// Reads a native volume given its `.hdr` path.
pub fn read_volume<T: Scalar>(hdr: &Path) -> Result<(Volume3D<T>, BTreeMap<String, String>)> {
    let text = fs::read_to_string(hdr).map_err(|e| Error::io(hdr, e))?;
    let header = NativeHeader::parse(&text, hdr)?;
    let raw = raw_path(hdr);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Header {
            path: raw,
            reason: format!("expected {} bytes for shape {:?}, found {}", n * 4, header.shape, bytes.len()),
        });
    }
    let data: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let volume = match header.label_set {
        Some(set) => Volume3D::labels(header.shape, header.spacing, header.modality, set, data)?,
        None => Volume3D::new(header.shape, header.spacing, header.modality, data)?,
    };
    Ok((volume, header.extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip_with_extras() {
        let mut extra = BTreeMap::new();
        extra.insert("source".to_string(), "T2".to_string());
        let h = NativeHeader {
            shape: [3, 4, 5],
            spacing: [0.9375, 1.0, 2.5],
            modality: Modality::LabelMap,
            label_set: Some(vec![0, 1, 2, 3, 4, 5, 6]),
            extra,
        };
        let back = NativeHeader::parse(&h.render(), Path::new("x.hdr")).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn header_errors_name_the_field() {
        let err = NativeHeader::parse("shape=1,2\nspacing=1,1,1\nmodality=T1\n", Path::new("a.hdr"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("shape"), "{err}");
        let err = NativeHeader::parse("shape=1,2,3\nspacing=1,1,1\n", Path::new("a.hdr"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("modality"), "{err}");
    }

    #[test]
    fn volume_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..60).map(|i| (i as f32 * 0.731).sin() * 1e3).collect();
        let v = Volume3D::new([3, 4, 5], [1.0, 1.5, 2.0], Modality::Flair, data).unwrap();
        let hdr = write_volume(dir.path(), "c_FLAIR", &v, &BTreeMap::new()).unwrap();
        let (back, extra): (Volume3D<f32>, _) = read_volume(&hdr).unwrap();
        assert!(extra.is_empty());
        assert_eq!(back, v);
    }

    #[test]
    fn truncated_raw_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::<f32>::zeros([2, 2, 2], [1.0; 3], Modality::T1).unwrap();
        let hdr = write_volume(dir.path(), "x", &v, &BTreeMap::new()).unwrap();
        fs::write(hdr.with_extension("raw"), [0u8; 5]).unwrap();
        assert!(read_volume::<f32>(&hdr).is_err());
    }
}
