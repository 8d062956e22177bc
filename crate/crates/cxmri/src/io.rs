//! On-disk formats: the CXT1 tensor container, checkpoint manifests, and the
//! flat key=value config format.
//!
//! CXT1 layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "CXT1"
//! dtype   u8       0 = real, 1 = complex
//! ndim    u8
//! dims    ndim x u64
//! payload row-major IEEE-754 f32: full real plane, then (complex) imag plane
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

const MAGIC: &[u8; 4] = b"CXT1";

/// Write `t` as a CXT1 container. `real_only` stores just the real plane
/// with dtype 0; the imaginary plane is dropped (callers use this for masks
/// and other structurally real tensors).
pub fn write_cxt(path: &Path, t: &ComplexTensor, real_only: bool) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.numel() * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(if real_only { 0 } else { 1 });
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.re() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if !real_only {
        for &v in t.im() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a CXT1 container. Returns the tensor and whether it was stored real.
pub fn read_cxt(path: &Path) -> Result<(ComplexTensor, bool)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cxt(&bytes).map_err(|e| match e {
        Error::Container(msg) => Error::Container(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_cxt(bytes: &[u8]) -> Result<(ComplexTensor, bool)> {
    if bytes.len() < 6 {
        return Err(Error::Container("truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Container(format!(
            "bad magic {:02x?}, expected \"CXT1\"",
            &bytes[..4]
        )));
    }
    let dtype = bytes[4];
    if dtype > 1 {
        return Err(Error::Container(format!("bad dtype code {dtype}")));
    }
    let ndim = bytes[5] as usize;
    let dims_end = 6 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::Container("truncated dims".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&bytes[6 + 8 * i..6 + 8 * (i + 1)]);
        shape.push(u64::from_le_bytes(raw) as usize);
    }
    let n: usize = shape.iter().product();
    let planes = if dtype == 0 { 1 } else { 2 };
    let expect = dims_end + planes * 4 * n;
    if bytes.len() != expect {
        return Err(Error::Container(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - dims_end,
            expect - dims_end
        )));
    }
    let read_plane = |offset: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut raw = [0u8; 4];
                raw.copy_from_slice(&bytes[offset + 4 * i..offset + 4 * (i + 1)]);
                f32::from_le_bytes(raw) as f64
            })
            .collect()
    };
    let re = read_plane(dims_end);
    let im = if dtype == 1 {
        read_plane(dims_end + 4 * n)
    } else {
        vec![0.0; n]
    };
    Ok((ComplexTensor::from_parts(shape, re, im)?, dtype == 0))
}

// ---------------------------------------------------------------------------
// Flat key=value config files.
// ---------------------------------------------------------------------------

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped,
/// duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, got '{raw}'",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

pub fn write_kv_file(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// FNV-1a digest of the canonical (sorted) key=value form, as 16 hex chars.
pub fn config_digest(pairs: &BTreeMap<String, String>) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for (k, v) in pairs {
        for b in k.bytes().chain(*b"=").chain(v.bytes()).chain(*b"\n") {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    format!("{hash:016x}")
}

// ---------------------------------------------------------------------------
// Checkpoint manifest.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    KernelX,
    KernelY,
    Bias,
    Scalar,
}

impl EntryKind {
    fn as_str(&self) -> &'static str {
        match self {
            EntryKind::KernelX => "kernel-X",
            EntryKind::KernelY => "kernel-Y",
            EntryKind::Bias => "bias",
            EntryKind::Scalar => "scalar",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "kernel-X" => Ok(EntryKind::KernelX),
            "kernel-Y" => Ok(EntryKind::KernelY),
            "bias" => Ok(EntryKind::Bias),
            "scalar" => Ok(EntryKind::Scalar),
            other => Err(Error::Data(format!("unknown manifest kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub kind: EntryKind,
}

/// Text manifest tying parameter names to container files plus the config
/// digest of the run that produced them.
#[derive(Clone, Debug)]
pub struct CheckpointManifest {
    pub digest: String,
    pub entries: Vec<ManifestEntry>,
}

impl CheckpointManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("digest={}\n", self.digest));
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.name,
                e.file,
                dims.join(","),
                e.kind.as_str()
            ));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut digest = String::new();
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(d) = line.strip_prefix("digest=") {
                digest = d.to_string();
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!("malformed manifest line '{line}'")));
            }
            let shape = fields[2]
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Data(format!("bad shape '{}'", fields[2])))
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(ManifestEntry {
                name: fields[0].to_string(),
                file: fields[1].to_string(),
                shape,
                kind: EntryKind::parse(fields[3])?,
            });
        }
        Ok(CheckpointManifest { digest, entries })
    }

    /// Every entry must resolve to an existing file of the recorded shape.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            let path = dir.join(&e.file);
            let (tensor, _) = read_cxt(&path)?;
            if tensor.shape() != e.shape.as_slice() {
                return Err(Error::Data(format!(
                    "manifest entry '{}': file shape {:?} != recorded {:?}",
                    e.name,
                    tensor.shape(),
                    e.shape
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn sanitize_filename(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
