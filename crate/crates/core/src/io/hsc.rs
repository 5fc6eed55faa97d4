use std::path::Path;

use super::{format_err, io_err};
use crate::cube::HyperCube;
use crate::error::{Error, Result};

pub const HSC_MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 16;

/// Serializes a cube; values are stored as 32-bit floats.
pub fn encode_hsc(cube: &HyperCube) -> Result<Vec<u8>> {
    let (b, h, w) = cube.dims();
    let dim = |n: usize| u32::try_from(n).map_err(|_| Error::dim(format!("dimension {n} does not fit in 32 bits")));
    if !cube.is_finite() {
        return Err(Error::arg("cube holds non-finite values"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * cube.data().len());
    out.extend_from_slice(HSC_MAGIC);
    for n in [b, h, w] {
        out.extend_from_slice(&dim(n)?.to_le_bytes());
    }
    for &v in cube.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses an HSC byte buffer; `path` only labels errors.
pub fn decode_hsc(bytes: &[u8], path: &Path) -> Result<HyperCube> {
    if bytes.len() < 4 || &bytes[..4] != HSC_MAGIC {
        return Err(format_err(path, "bad magic: not an HSC1 cube"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, "truncated header"));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (b, h, w) = (read_u32(4), read_u32(8), read_u32(12));
    let count = b
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| format_err(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < 4 * count {
        return Err(format_err(
            path,
            format!(
                "truncated payload: {b}×{h}×{w} needs {} bytes, found {}",
                4 * count,
                payload.len()
            ),
        ));
    }
    if payload.len() > 4 * count {
        return Err(format_err(
            path,
            format!("{} trailing bytes after the payload", payload.len() - 4 * count),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "payload holds non-finite values"));
    }
    HyperCube::new(b, h, w, data).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_hsc(path: &Path, cube: &HyperCube) -> Result<()> {
    let bytes = encode_hsc(cube)?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_hsc(path: &Path) -> Result<HyperCube> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_hsc(&bytes, path)
}
