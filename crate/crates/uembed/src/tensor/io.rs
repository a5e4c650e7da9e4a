//! Flat binary tensor files.
//!
//! Layout: magic "GTEN", format version (u32 LE), dtype code (u8, 0 = f64,
//! 1 = raw u8 payload), rank (u32 LE), one u64 LE extent per axis, then the
//! payload in little-endian order.

use super::{Result, Tensor, TensorError};
use std::io::{Read, Write};

pub const GTEN_MAGIC: &[u8; 4] = b"GTEN";
pub const GTEN_VERSION: u32 = 1;

pub(crate) const DTYPE_F64: u8 = 0;
pub(crate) const DTYPE_U8: u8 = 1;

fn io_err(detail: impl Into<String>) -> TensorError {
    TensorError::Io {
        detail: detail.into(),
    }
}

pub fn write_tensor(w: &mut impl Write, tensor: &Tensor) -> Result<()> {
    write_header(w, DTYPE_F64, tensor.shape())?;
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes()).map_err(|e| io_err(e.to_string()))?;
    }
    Ok(())
}

pub(crate) fn write_bytes_payload(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    write_header(w, DTYPE_U8, &[bytes.len()])?;
    w.write_all(bytes).map_err(|e| io_err(e.to_string()))
}

fn write_header(w: &mut impl Write, dtype: u8, shape: &[usize]) -> Result<()> {
    w.write_all(GTEN_MAGIC).map_err(|e| io_err(e.to_string()))?;
    w.write_all(&GTEN_VERSION.to_le_bytes())
        .map_err(|e| io_err(e.to_string()))?;
    w.write_all(&[dtype]).map_err(|e| io_err(e.to_string()))?;
    w.write_all(&(shape.len() as u32).to_le_bytes())
        .map_err(|e| io_err(e.to_string()))?;
    for &extent in shape {
        w.write_all(&(extent as u64).to_le_bytes())
            .map_err(|e| io_err(e.to_string()))?;
    }
    Ok(())
}

pub(crate) enum Payload {
    F64(Tensor),
    Bytes(Vec<u8>),
}

pub(crate) fn read_payload(r: &mut impl Read) -> Result<Payload> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(e.to_string()))?;
    if &magic != GTEN_MAGIC {
        return Err(io_err(format!("bad magic {magic:?}, expected GTEN")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|e| io_err(e.to_string()))?;
    let version = u32::from_le_bytes(buf4);
    if version != GTEN_VERSION {
        return Err(io_err(format!("unsupported GTEN version {version}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype).map_err(|e| io_err(e.to_string()))?;
    r.read_exact(&mut buf4).map_err(|e| io_err(e.to_string()))?;
    let rank = u32::from_le_bytes(buf4) as usize;
    if rank > 16 {
        return Err(io_err(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut buf8 = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut buf8).map_err(|e| io_err(e.to_string()))?;
        shape.push(u64::from_le_bytes(buf8) as usize);
    }
    let numel: usize = shape.iter().product();
    match dtype[0] {
        DTYPE_F64 => {
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                r.read_exact(&mut buf8).map_err(|e| io_err(e.to_string()))?;
                data.push(f64::from_le_bytes(buf8));
            }
            Ok(Payload::F64(Tensor::new(shape, data)?))
        }
        DTYPE_U8 => {
            let mut data = vec![0u8; numel];
            r.read_exact(&mut data).map_err(|e| io_err(e.to_string()))?;
            Ok(Payload::Bytes(data))
        }
        other => Err(io_err(format!("unknown dtype code {other}"))),
    }
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    match read_payload(r)? {
        Payload::F64(t) => Ok(t),
        Payload::Bytes(_) => Err(io_err("expected f64 tensor, found byte payload".to_string())),
    }
}
