//! Single-file checkpoint archive.
//!
//! ```text
//! glioaug-archive 1
//! meta <key> <escaped value>
//! text <name> <byte length>
//! <bytes>
//! tensor <name> <dtype> <n>,<c>,<h>,<w>
//! end
//! <little-endian tensor data, in declaration order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use glioaug_core::{Error, Result, Scalar};

use crate::tensor::Tensor;

const MAGIC: &str = "glioaug-archive 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive<T> {
    pub meta: BTreeMap<String, String>,
    pub texts: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Option<String> {
        let end = self.bytes.get(self.pos..)?.iter().position(|&b| b == b'\n')?;
        let l = String::from_utf8(self.bytes[self.pos..self.pos + end].to_vec()).ok()?;
        self.pos += end + 1;
        Some(l)
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
}

fn read_f64(dtype: &str, bytes: &[u8]) -> Option<f64> {
    match dtype {
        "f32" => Some(f32::read_le(bytes) as f64),
        "f64" => Some(f64::read_le(bytes)),
        _ => None,
    }
}

impl<T: Scalar> Archive<T> {
    pub fn new() -> Self {
        Archive {
            meta: BTreeMap::new(),
            texts: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("meta {k} {}\n", escape(v)).as_bytes());
        }
        for (k, v) in &self.texts {
            out.extend_from_slice(format!("text {k} {}\n", v.len()).as_bytes());
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        for (k, t) in &self.tensors {
            let s = t.shape();
            out.extend_from_slice(format!("tensor {k} {} {},{},{},{}\n", T::DTYPE, s[0], s[1], s[2], s[3]).as_bytes());
        }
        out.extend_from_slice(b"end\n");
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Header {
            path: path.to_path_buf(),
            reason,
        };
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.line().ok_or_else(|| bad("truncated header".into()))? != MAGIC {
            return Err(bad("not a glioaug archive".into()));
        }
        let mut a = Archive::new();
        let mut decls: Vec<(String, String, [usize; 4])> = Vec::new();
        loop {
            let l = cur.line().ok_or_else(|| bad("truncated header".into()))?;
            let mut parts = l.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("end"), None, None) => break,
                (Some("meta"), Some(k), v) => {
                    a.meta.insert(k.to_string(), unescape(v.unwrap_or("")));
                }
                (Some("text"), Some(k), Some(len)) => {
                    let len: usize = len.parse().map_err(|_| bad(format!("bad text length in {l:?}")))?;
                    let body = cur.take(len + 1).ok_or_else(|| bad(format!("text {k} truncated")))?;
                    let body = String::from_utf8(body[..len].to_vec()).map_err(|_| bad(format!("text {k} is not UTF-8")))?;
                    a.texts.insert(k.to_string(), body);
                }
                (Some("tensor"), Some(k), Some(rest)) => {
                    let (dtype, dims) = rest.split_once(' ').ok_or_else(|| bad(format!("bad tensor line {l:?}")))?;
                    let d: Vec<usize> = dims
                        .split(',')
                        .map(|x| x.parse().map_err(|_| bad(format!("bad dims in {l:?}"))))
                        .collect::<Result<_>>()?;
                    if d.len() != 4 {
                        return Err(bad(format!("tensor {k} needs 4 dims")));
                    }
                    decls.push((k.to_string(), dtype.to_string(), [d[0], d[1], d[2], d[3]]));
                }
                _ => return Err(bad(format!("unrecognized header line {l:?}"))),
            }
        }
        for (k, dtype, shape) in decls {
            let width = match dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(bad(format!("tensor {k}: unsupported dtype {other}"))),
            };
            let n: usize = shape.iter().product();
            let body = cur.take(n * width).ok_or_else(|| bad(format!("tensor {k} truncated")))?;
            let data = body
                .chunks_exact(width)
                .map(|c| T::lit(read_f64(&dtype, c).expect("dtype checked")))
                .collect();
            a.tensors.push((k, Tensor::new(shape, data)?));
        }
        Ok(a)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Invalid(format!("archive lacks metadata key {key:?}")))
    }
}
