//! Binary container of named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "STDNPARM"
//! version    u32      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name utf-8 bytes
//!   rank     u32, dims u64 × rank
//!   values   f64 × product(dims)
//! meta_len   u64      length of trailing JSON metadata (0 if none)
//! meta       utf-8 JSON
//! ```

use std::io::{Read, Write};

use super::param::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 8] = b"STDNPARM";
pub const PARAM_VERSION: u32 = 1;

pub fn write_params<W: Write>(out: &mut W, params: &ParamStore, meta: Option<&str>) -> Result<()> {
    out.write_all(PARAM_MAGIC)?;
    out.write_all(&PARAM_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    let meta = meta.unwrap_or("");
    out.write_all(&(meta.len() as u64).to_le_bytes())?;
    out.write_all(meta.as_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Read a container back into a fresh store plus its metadata string.
pub fn read_params<R: Read>(input: &mut R) -> Result<(ParamStore, String)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != PARAM_MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let version = read_u32(input)?;
    if version != PARAM_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(input)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let rank = read_u32(input)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(input)? as usize);
        }
        let n = shape.iter().product();
        let values = read_f64s(input, n)?;
        store.add(name, Tensor::new(&shape, values)?)?;
    }
    let meta_len = read_u64(input)? as usize;
    let mut meta = vec![0u8; meta_len];
    input.read_exact(&mut meta)?;
    let meta =
        String::from_utf8(meta).map_err(|_| Error::Format("metadata is not utf-8".into()))?;
    Ok((store, meta))
}
