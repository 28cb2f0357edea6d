//! Binary latent dump.
//!
//! Little-endian, 32-byte header followed by the row-major payload
//! (channel outermost, then T, H, W):
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `LPZ0`                           |
//! | 4      | 2    | format version (1)                     |
//! | 6      | 1    | dtype code: bytes per element (2/4/8)  |
//! | 7      | 1    | reserved, 0                            |
//! | 8      | 16   | shape `C, T, H, W` as `u32`            |
//! | 24     | 8    | reserved, 0                            |
//!
//! Elements are bf16, f32 or f64 bit patterns matching the dtype code.

use std::io::{Read, Write};

use crate::error::{LpError, Result};
use crate::latent::{Dtype, LatentTensor, Shape};

pub const MAGIC: [u8; 4] = *b"LPZ0";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

pub fn write_latent<W: Write>(z: &LatentTensor, mut out: W) -> Result<()> {
    let shape = z.shape();
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6] = z.dtype().bytes() as u8;
    for (i, d) in shape.dims().into_iter().enumerate() {
        let d = u32::try_from(d)
            .map_err(|_| LpError::Format(format!("dimension {d} does not fit in u32")))?;
        header[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    out.write_all(&header)?;

    let mut payload = Vec::with_capacity(z.size_bytes());
    for &v in z.data() {
        match z.dtype() {
            Dtype::Bf16 => payload.extend_from_slice(&half::bf16::from_f64(v).to_le_bytes()),
            Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

pub fn read_latent<R: Read>(mut input: R) -> Result<LatentTensor> {
    let mut header = [0u8; HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|e| LpError::Format(format!("short header: {e}")))?;
    if header[0..4] != MAGIC {
        return Err(LpError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(LpError::Format(format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_bytes(header[6] as usize)
        .map_err(|_| LpError::Format(format!("unknown dtype code {}", header[6])))?;
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let b = &header[8 + 4 * i..12 + 4 * i];
        *d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);

    let width = dtype.bytes();
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    if payload.len() != shape.numel() * width {
        return Err(LpError::Format(format!(
            "payload has {} bytes, shape {shape} needs {}",
            payload.len(),
            shape.numel() * width
        )));
    }
    let data = payload
        .chunks_exact(width)
        .map(|b| match dtype {
            Dtype::Bf16 => half::bf16::from_le_bytes([b[0], b[1]]).to_f64(),
            Dtype::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Dtype::F64 => f64::from_le_bytes(b.try_into().expect("8-byte chunk")),
        })
        .collect();
    LatentTensor::from_vec(shape, dtype, data).map_err(|e| LpError::Format(e.to_string()))
}
