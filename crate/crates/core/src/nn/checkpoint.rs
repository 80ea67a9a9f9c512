//! Versioned binary checkpoint format.
//!
//! All integers are little-endian `u32`, all values little-endian `f32`:
//!
//! ```text
//! magic     8 bytes  "RAMVOCKP"
//! version   u32      currently 1
//! meta_len  u32      followed by meta_len bytes of UTF-8 `key=value` lines
//! count     u32      number of tensors
//! repeated count times:
//!   path_len u32, path bytes (UTF-8)
//!   rank     u32, rank dims (u32 each)
//!   values   product(dims) f32
//! ```
//!
//! Readers reject unknown versions; new versions only ever append fields.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RAMVOCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form `key=value` metadata (run configuration, target statistics).
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_params(params: &ParameterSet<f32>, meta: String) -> Self {
        let tensors = params.ids().map(|id| (params.path(id).to_string(), params.tensor(id).clone())).collect();
        Self { meta, tensors }
    }

    /// Copies every stored tensor into `params`; paths and shapes must match exactly.
    pub fn apply_to(&self, params: &mut ParameterSet<f32>) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (path, t) in &self.tensors {
            params.set(path, t.clone())?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_bytes(&mut w, self.meta.as_bytes())?;
        put_u32(&mut w, self.tensors.len() as u32)?;
        for (path, t) in &self.tensors {
            put_bytes(&mut w, path.as_bytes())?;
            put_u32(&mut w, t.shape().len() as u32)?;
            for &d in t.shape() {
                put_u32(&mut w, d as u32)?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta = String::from_utf8(get_bytes(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
        let count = get_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let path = String::from_utf8(get_bytes(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
            let rank = get_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut buf = vec![0u8; len * 4];
            r.read_exact(&mut buf)?;
            let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((path, Tensor::new(&shape, data)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}
