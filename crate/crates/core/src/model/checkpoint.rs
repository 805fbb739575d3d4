//! Binary checkpoints: magic, version, a TOML echo of the config, the
//! training step, then named little-endian f32 tensors.

use std::io::Write as _;
use std::path::Path;

use super::config::TransformerConfig;
use super::transformer::Model;
use crate::codebook::{check_magic, read_file, read_u32};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MVCK";

/// A model together with the step it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn take<'a>(r: &mut &'a [u8], n: usize, path: &Path) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::format(path, "truncated checkpoint"));
    }
    let (head, rest) = r.split_at(n);
    *r = rest;
    Ok(head)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let model = &self.model;
        let cfg = toml::to_string(&model.cfg).map_err(|e| Error::format(path, e.to_string()))?;
        let mut buf = Vec::with_capacity(64 + cfg.len() + 4 * model.params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut buf, crate::codebook::FORMAT_VERSION as usize);
        put_u32(&mut buf, cfg.len());
        buf.extend_from_slice(cfg.as_bytes());
        buf.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut buf, model.layout.tensors.len());
        for t in &model.layout.tensors {
            put_u32(&mut buf, t.name.len());
            buf.extend_from_slice(t.name.as_bytes());
            put_u32(&mut buf, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut buf, d);
            }
            for v in &model.params[t.range()] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = bytes.as_slice();
        check_magic(&mut r, CHECKPOINT_MAGIC, path)?;
        let bad = |m: &str| Error::format(path, m.to_string());
        let cfg_len = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
        let cfg_text = std::str::from_utf8(take(&mut r, cfg_len, path)?).map_err(|_| bad("config echo is not UTF-8"))?;
        let cfg: TransformerConfig = toml::from_str(cfg_text).map_err(|e| Error::format(path, e.to_string()))?;
        let step = u64::from_le_bytes(take(&mut r, 8, path)?.try_into().expect("8 bytes"));
        let mut model = Model::<f32>::init(cfg, 0)?;
        let count = read_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
        if count != model.layout.tensors.len() {
            return Err(bad("tensor count does not match the config"));
        }
        for t in model.layout.tensors.clone() {
            let name_len = read_u32(&mut r).ok_or_else(|| bad("truncated tensor header"))? as usize;
            let name = take(&mut r, name_len, path)?;
            if name != t.name.as_bytes() {
                return Err(Error::format(path, format!("expected tensor {}", t.name)));
            }
            let ndim = read_u32(&mut r).ok_or_else(|| bad("truncated tensor header"))? as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| read_u32(&mut r).map(|v| v as usize).ok_or_else(|| bad("truncated tensor header")))
                .collect::<Result<_>>()?;
            if shape != t.shape {
                return Err(Error::format(path, format!("tensor {} has shape {shape:?}, expected {:?}", t.name, t.shape)));
            }
            let data = take(&mut r, 4 * t.len(), path)?;
            for (dst, c) in model.params[t.range()].iter_mut().zip(data.chunks_exact(4)) {
                *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint { model, step })
    }
}
