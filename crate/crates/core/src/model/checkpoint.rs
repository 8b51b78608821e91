//! Binary checkpoint: magic, config header, named little-endian `f32`
//! parameter blocks, then a SHA-256 of everything before it.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ClassifierModel, EncoderConfig, ModelError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EHRSQCK1";

pub fn write_checkpoint<W: Write>(model: &ClassifierModel, mut w: W) -> Result<(), ModelError> {
    let c = model.config();
    let mut buf = Vec::with_capacity(64 + model.n_params() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_len] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout.to_le_bytes());
    buf.extend_from_slice(&c.seed.to_le_bytes());
    let blocks = model.layout().blocks();
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        buf.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.len as u64).to_le_bytes());
        for &p in &model.params()[b.offset..b.offset + b.len] {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    w.write_all(&buf)?;
    w.write_all(&digest)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Parameters come back rounded through `f32`.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ClassifierModel, ModelError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() < CHECKPOINT_MAGIC.len() + 32 || &data[..8] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, digest) = data.split_at(data.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::Checkpoint("checksum mismatch".into()));
    }
    let mut cur = Cursor { data: body, pos: 8 };
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = cur.u64()? as usize;
    }
    let dropout = f64::from_le_bytes(cur.array()?);
    let seed = cur.u64()?;
    let config = EncoderConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        max_len: dims[5],
        dropout,
        seed,
    };
    config.validate()?;
    let template = ClassifierModel::from_parts(config.clone(), vec![0.0; super::Layout::new(&config).total])?;
    let n_blocks = u32::from_le_bytes(cur.array()?) as usize;
    let expected = template.layout().blocks();
    if n_blocks != expected.len() {
        return Err(ModelError::Checkpoint(format!("{n_blocks} blocks, expected {}", expected.len())));
    }
    let mut params = vec![0.0; template.n_params()];
    for b in expected {
        let name_len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ModelError::Checkpoint("block name is not UTF-8".into()))?;
        let len = cur.u64()? as usize;
        if name != b.name || len != b.len {
            return Err(ModelError::Checkpoint(format!(
                "block {name} ({len}) where {} ({}) expected",
                b.name, b.len
            )));
        }
        let raw = cur.take(len.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("block too large".into()))?)?;
        for (dst, chunk) in params[b.offset..b.offset + len].iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if cur.pos != body.len() {
        return Err(ModelError::Checkpoint("trailing bytes after parameter blocks".into()));
    }
    ClassifierModel::from_parts(config, params)
}

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<(), ModelError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel, ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
