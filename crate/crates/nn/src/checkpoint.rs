//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "MRQCKPT\0"
//! version    u32
//! count      u32      number of parameter records
//! scenario   u64      hash of the scenario the parameters belong to
//! iteration  u64      training iterations completed
//! count x {
//!   name_len u32, name bytes (utf-8)
//!   ndims u32, dims u32 x ndims
//!   data f32 x numel
//! }
//! ```
//! All integers and reals are little-endian. Adam moments are not stored.

use std::io::{Read, Write};

use crate::{DenseArray, NnError, ParameterStore, Result, Shape};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MRQCKPT\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scenario_hash: u64,
    pub iteration: u64,
    pub params: ParameterStore<f32>,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    w.write_all(&ckpt.scenario_hash.to_le_bytes())?;
    w.write_all(&ckpt.iteration.to_le_bytes())?;
    for (name, value) in ckpt.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let dims = value.shape().dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u64::from_le_bytes(b))
}

// Guards against allocating from a corrupted length field.
const MAX_NAME: u32 = 4096;
const MAX_NUMEL: usize = 1 << 28;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = read_u32(&mut r)?;
    let scenario_hash = read_u64(&mut r)?;
    let iteration = read_u64(&mut r)?;
    let mut params = ParameterStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)?;
        if len > MAX_NAME {
            return Err(bad(format!("parameter name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not utf-8"))?;
        let ndims = read_u32(&mut r)?;
        let dims = (0..ndims)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = Shape::from_dims(&dims).ok_or_else(|| bad(format!("`{name}` has rank {ndims}")))?;
        if shape.numel() > MAX_NUMEL {
            return Err(bad(format!("`{name}` is implausibly large")));
        }
        let mut raw = vec![0u8; shape.numel() * 4];
        r.read_exact(&mut raw).map_err(|_| bad(format!("truncated data for `{name}`")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, DenseArray::from_vec(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(Checkpoint {
        scenario_hash,
        iteration,
        params,
    })
}
