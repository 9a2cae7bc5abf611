//! NETP checkpoint format.
//!
//! Layout: magic `NETP1`, u32 tensor count, then per tensor a u32 name
//! length, the UTF-8 name, four u32 dimensions and the f64 data, all
//! little-endian.

use std::io::{Read, Write};

use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

pub const NETP_MAGIC: &[u8; 5] = b"NETP1";

pub fn write_netp<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(NETP_MAGIC)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for e in store.entries() {
        out.write_all(&(e.name.len() as u32).to_le_bytes())?;
        out.write_all(e.name.as_bytes())?;
        for d in e.tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in e.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads `(name, tensor)` pairs in file order.
pub fn read_netp<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != NETP_MAGIC {
        return Err(Error::Format("not a NETP1 checkpoint".into()));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(Error::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = read_u32(&mut r)? as usize;
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}
