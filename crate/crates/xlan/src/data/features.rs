//! Region feature files: a small binary container, one file per image.
//!
//! Layout (all integers little-endian):
//!   magic   4 bytes  "XLRF"
//!   version u32      = 1
//!   regions u32      N
//!   dim     u32      feature dimension
//!   payload N·dim f32 row-major
//!
//! A plain-text sidecar manifest maps image ids to files, one
//! `id<TAB>relative-path` per line.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"XLRF";
pub const VERSION: u32 = 1;

/// Write one image's `[N×dim]` region matrix. Values are stored at f32
/// precision.
pub fn write_region_file(path: &Path, regions: &Tensor) -> Result<()> {
    if !regions.is_matrix() {
        return Err(Error::Shape {
            op: "write_region_file",
            expected: "[N×dim] matrix".into(),
            found: format!("{:?}", regions.shape),
        });
    }
    let (n, dim) = (regions.shape[0], regions.shape[1]);
    let mut buf = Vec::with_capacity(16 + 4 * n * dim);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in &regions.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a region file back as f64, validating magic and version.
pub fn read_region_file(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 {
        return Err(fail(format!("truncated header, {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!(
            "bad magic, expected {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version, expected {VERSION}, found {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * n * dim;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload length mismatch, expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(vec![n, dim], data)
}

/// One `id<TAB>path` line per entry, in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (id, file) in entries {
        out.push_str(id);
        out.push('\t');
        out.push_str(file);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, file) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected id<TAB>path, found {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        entries.push((id.to_string(), file.to_string()));
    }
    Ok(entries)
}
