//! Binary parameter checkpoints.
//!
//! Layout: magic `CTXG`, format version `u32`, then one record per parameter:
//! name length `u32`, UTF-8 name, rank `u32`, dims (`u64` each), precision
//! tag (`0` = f32, `1` = f64), little-endian values. Loading validates every
//! name and shape against the receiving [`ParamSet`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"CTXG";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint ends mid-record")]
    Truncated,
    #[error("unknown precision tag {0}")]
    BadPrecision(u8),
    #[error("checkpoint names unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("checkpoint repeats parameter {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint is missing parameter {0:?}")]
    MissingParam(String),
    #[error("shape of {name:?} is {found:?}, model expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Writes every parameter, insertion-ordered, at 64-bit precision.
pub fn save_params(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, value) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.shape().len() as u32).to_le_bytes())?;
        for d in value.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&[1u8])?;
        for v in value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Replaces the values of `params` from a checkpoint. The file must cover
/// exactly the parameters the set declares, each with a matching shape.
pub fn load_params(path: &Path, params: &mut ParamSet) -> Result<(), CheckpointError> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let mut seen = vec![false; params.len()];
    while cur.pos < cur.bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::BadMagic)?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let tag = cur.take(1)?[0];
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        match tag {
            0 => {
                for chunk in cur.take(4 * len)?.chunks_exact(4) {
                    data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
                }
            }
            1 => {
                for chunk in cur.take(8 * len)?.chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
            }
            t => return Err(CheckpointError::BadPrecision(t)),
        }

        let id = params
            .id(&name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        if seen[id.0] {
            return Err(CheckpointError::DuplicateParam(name));
        }
        seen[id.0] = true;
        let expected = params.value(id).shape().to_vec();
        if expected != shape {
            return Err(CheckpointError::ShapeMismatch { name, expected, found: shape });
        }
        *params.value_mut(id) = Tensor::from_vec(&shape, data);
    }

    for id in params.ids() {
        if !seen[id.0] {
            return Err(CheckpointError::MissingParam(params.name(id).to_string()));
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
