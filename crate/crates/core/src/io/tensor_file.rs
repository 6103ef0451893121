use std::path::Path;

use super::write_bytes;
use crate::error::{Error, Result};
use crate::tensor::{c64, ComplexTensor};

pub const MAGIC: &[u8; 4] = b"CTNS";
pub const VERSION: u8 = 1;

/// Scalar type of the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Complex64,
    Complex32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::Complex64 => 0,
            DType::Complex32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::Complex64 => 8,
            DType::Complex32 => 4,
        }
    }
}

/// Header: magic, version, dtype code, rank, little-endian u64 dims.
/// Payload: row-major little-endian (re, im) pairs.
pub fn encode_tensor(t: &ComplexTensor, dtype: DType) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::config(format!("rank {} does not fit the header", t.ndim())));
    }
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + t.len() * 2 * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        match dtype {
            DType::Complex64 => {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
            DType::Complex32 => {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses a tensor file; `path` only labels errors.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(ComplexTensor, DType)> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 7 {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(fail(4, format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::Complex64,
        1 => DType::Complex32,
        c => return Err(fail(5, format!("unknown dtype code {c}"))),
    };
    let ndim = bytes[6] as usize;
    let header = 7 + 8 * ndim;
    if bytes.len() < header {
        return Err(fail(bytes.len(), format!("truncated dims, expected {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for i in 0..ndim {
        let off = 7 + 8 * i;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        let d = usize::try_from(d).map_err(|_| fail(off, format!("dimension {d} too large")))?;
        count = count.checked_mul(d).ok_or_else(|| fail(off, "element count overflows".into()))?;
        dims.push(d);
    }
    let w = dtype.width();
    let expected = count
        .checked_mul(2 * w)
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| fail(header, "payload size overflows".into()))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("payload is {} bytes, expected {}", bytes.len() - header, expected - header),
        ));
    }
    let payload = &bytes[header..];
    let data = (0..count)
        .map(|i| {
            let o = 2 * w * i;
            match dtype {
                DType::Complex64 => c64::new(
                    f64::from_le_bytes(payload[o..o + 8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(payload[o + 8..o + 16].try_into().expect("8 bytes")),
                ),
                DType::Complex32 => c64::new(
                    f32::from_le_bytes(payload[o..o + 4].try_into().expect("4 bytes")) as f64,
                    f32::from_le_bytes(payload[o + 4..o + 8].try_into().expect("4 bytes")) as f64,
                ),
            }
        })
        .collect();
    Ok((ComplexTensor::from_vec(&dims, data)?, dtype))
}

pub fn write_tensor(path: &Path, t: &ComplexTensor, dtype: DType) -> Result<()> {
    write_bytes(path, &encode_tensor(t, dtype)?)
}

pub fn read_tensor(path: &Path) -> Result<ComplexTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_tensor(&bytes, path)?.0)
}
