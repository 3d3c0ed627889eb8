//! Little-endian tensor encoding.
//!
//! Layout: magic `IVT1`, rank as `u32`, each extent as `u64`, dtype code as
//! `u8` (1 = f32, 2 = f64), then the raw values.

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"IVT1";

/// Largest rank accepted when decoding; guards against garbage headers.
const MAX_RANK: u32 = 16;

pub fn write_tensor<T: Real, W: Write>(out: &mut W, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * t.rank() + t.numel() * T::DTYPE.size_of());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.push(T::DTYPE as u8);
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Decode(format!("truncated while reading {what}")),
        _ => TensorError::Io(e),
    })
}

/// Decode one tensor; values stored at the other precision are converted.
pub fn read_tensor<T: Real, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Decode(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    read_exact(input, &mut word, "rank")?;
    let rank = u32::from_le_bytes(word);
    if rank == 0 || rank > MAX_RANK {
        return Err(TensorError::Decode(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut ext = [0u8; 8];
        read_exact(input, &mut ext, "extent")?;
        shape.push(u64::from_le_bytes(ext) as usize);
    }
    let mut code = [0u8; 1];
    read_exact(input, &mut code, "dtype")?;
    let dtype = DType::from_code(code[0])
        .ok_or_else(|| TensorError::Decode(format!("unknown dtype code {}", code[0])))?;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n < (1 << 34))
        .ok_or_else(|| TensorError::Decode(format!("implausible shape {shape:?}")))?;
    let mut raw = vec![0u8; numel * dtype.size_of()];
    read_exact(input, &mut raw, "values")?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::read_le(c)))
            .collect(),
    };
    Tensor::new(shape, data)
}
