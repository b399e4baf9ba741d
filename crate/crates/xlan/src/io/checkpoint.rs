//! Versioned binary checkpoints: model config, named parameter tensors,
//! optimizer state, step counter, and the seed that drives every
//! stream-derived RNG. Round-trips are bit-exact.
//!
//! Layout (integers little-endian, floats IEEE-754 f64 little-endian):
//!   magic    4 bytes "XLCK"
//!   version  u32 = 1
//!   config   u32 length + UTF-8 key=value block
//!   step     u64
//!   phase    u8 (0 = ce, 1 = scst)
//!   seed     u64
//!   params   u32 count, then per parameter:
//!              u32 name length + name bytes
//!              u32 ndims + u32 dims…
//!              numel × f64 data
//!   adam     u8 present flag; when 1: u64 step, then per parameter
//!            (same order) numel × f64 first moments, numel × f64 second
//! The file must end exactly after the last record.

use crate::error::{Error, Result};
use crate::model::{CaptionModel, ModelConfig};
use crate::tensor::Tensor;
use crate::training::{AdamState, Phase};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"XLCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub phase: Phase,
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn of_model(
        model: &CaptionModel,
        adam: Option<&AdamState>,
        step: u64,
        phase: Phase,
        seed: u64,
    ) -> Self {
        Checkpoint {
            config: model.cfg.clone(),
            step,
            phase,
            seed,
            params: model
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            adam: adam.cloned(),
        }
    }

    /// Rebuild a model from the stored config and overwrite its
    /// parameters with the stored tensors, validating names and shapes.
    pub fn restore(&self) -> Result<CaptionModel> {
        let mut model = CaptionModel::new(self.config.clone(), 0);
        if model.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, config implies {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (idx, (name, tensor)) in self.params.iter().enumerate() {
            let p = model.params.get_mut(crate::tensor::ParamId(idx));
            if p.name != *name {
                return Err(Error::Format(format!(
                    "parameter {idx} name mismatch: checkpoint {name:?}, config implies {:?}",
                    p.name
                )));
            }
            if p.value.shape != tensor.shape {
                return Err(Error::Format(format!(
                    "parameter {name:?} shape mismatch: checkpoint {:?}, config implies {:?}",
                    tensor.shape, p.value.shape
                )));
            }
            p.value = tensor.clone();
        }
        Ok(model)
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize and write atomically (temp file + rename).
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    let config = ckpt.config.to_kv();
    push_u32(&mut buf, config.len() as u32);
    buf.extend_from_slice(config.as_bytes());
    push_u64(&mut buf, ckpt.step);
    buf.push(match ckpt.phase {
        Phase::Ce => 0,
        Phase::Scst => 1,
    });
    push_u64(&mut buf, ckpt.seed);
    push_u32(&mut buf, ckpt.params.len() as u32);
    for (name, tensor) in &ckpt.params {
        push_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        push_u32(&mut buf, tensor.shape.len() as u32);
        for d in &tensor.shape {
            push_u32(&mut buf, *d as u32);
        }
        push_f64s(&mut buf, &tensor.data);
    }
    match &ckpt.adam {
        None => buf.push(0),
        Some(adam) => {
            buf.push(1);
            push_u64(&mut buf, adam.step);
            for (m, v) in adam.m.iter().zip(&adam.v) {
                push_f64s(&mut buf, m);
                push_f64s(&mut buf, v);
            }
        }
    }

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated, needed {} bytes at offset {}, file has {}",
                self.path,
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse a checkpoint, validating magic, version, and exact length. A
/// failing load leaves no partial state behind.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.display().to_string() };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, expected {:?}, found {:?}",
            path.display(),
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version, expected {VERSION}, found {version}",
            path.display()
        )));
    }
    let config_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|e| Error::Format(format!("{}: config not UTF-8: {e}", path.display())))?;
    let config = ModelConfig::from_kv(&config_text)?;
    let step = r.u64()?;
    let phase = match r.u8()? {
        0 => Phase::Ce,
        1 => Phase::Scst,
        other => {
            return Err(Error::Format(format!(
                "{}: unknown phase tag {other}",
                path.display()
            )))
        }
    };
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Format(format!("{}: name not UTF-8: {e}", path.display())))?;
        let ndims = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel)?;
        params.push((name, Tensor { shape, data }));
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let adam_step = r.u64()?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for (_, tensor) in &params {
                m.push(r.f64s(tensor.numel())?);
                v.push(r.f64s(tensor.numel())?);
            }
            Some(AdamState { step: adam_step, m, v })
        }
        other => {
            return Err(Error::Format(format!(
                "{}: bad optimizer flag {other}",
                path.display()
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after the last record",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { config, step, phase, seed, params, adam })
}
