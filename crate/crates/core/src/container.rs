//! Shared binary layout for adapter and model files: 4 magic bytes, a
//! little-endian `u32` version, a little-endian `u32` byte length followed by
//! a UTF-8 JSON header, then raw row-major little-endian `f32` payloads.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed JSON header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("file is truncated")]
    Truncated,
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("payload value {value} does not fit in f32")]
    Overflow { value: f64 },
    #[error("header is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for ContainerError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated
        } else {
            ContainerError::Io(e)
        }
    }
}

pub(crate) fn write_header<W: Write, H: Serialize>(
    w: &mut W,
    magic: &[u8; 4],
    version: u32,
    header: &H,
) -> Result<(), ContainerError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, t: &Tensor) -> Result<(), ContainerError> {
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        let f = v as f32;
        if v.is_finite() && !f.is_finite() {
            return Err(ContainerError::Overflow { value: v });
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_header<R: Read, H: DeserializeOwned>(
    r: &mut R,
    magic: &[u8; 4],
    version: u32,
) -> Result<H, ContainerError> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(ContainerError::BadMagic {
            found: m,
            expected: *magic,
        });
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(ContainerError::UnsupportedVersion(v));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor, ContainerError> {
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape.to_vec(), data).map_err(|e| ContainerError::Inconsistent(e.to_string()))
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<(), ContainerError> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(ContainerError::TrailingBytes(rest.len()))
    }
}
