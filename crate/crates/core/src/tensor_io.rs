//! The `MTB1` on-disk tensor format.
//!
//! Layout, all little-endian, no padding, no trailer:
//!
//! ```text
//! bytes 0–3    magic "MTB1" (4D 54 42 31)
//! byte  4      dtype: 1 = f32, 2 = f64
//! bytes 5–7    reserved, must be zero
//! bytes 8–15   rows, u64
//! bytes 16–23  cols, u64
//! bytes 24–    payload, row-major, rows·cols elements
//! ```
//!
//! Files written as `f64` round-trip bit-exactly. `f32` files are legal on
//! disk and are promoted to `f64` on read (the widening is exact, so values
//! compare equal after an `f32 → f64` cast of the original). Every parse
//! failure reports the byte offset at which it was detected, which makes
//! corrupt-checkpoint triage a one-glance affair.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{MoftError, Result};
use crate::matrix::DenseMatrix;

const MAGIC: [u8; 4] = [0x4D, 0x54, 0x42, 0x31];
const HEADER_LEN: usize = 24;
/// Defensive cap on element count; this library is desk-scale by design.
const MAX_ELEMENTS: u64 = 1 << 26;

/// dtype byte for 32-bit floats.
pub const DTYPE_F32: u8 = 1;
/// dtype byte for 64-bit floats.
pub const DTYPE_F64: u8 = 2;

pub(crate) struct ParsedTensor {
    pub rows: u64,
    pub cols: u64,
    pub data: Vec<f64>,
    /// Total encoded length in bytes, header included.
    pub consumed: usize,
}

/// Serializes a matrix as an `f64` `MTB1` blob. This is also the canonical
/// byte string used for content hashing.
pub fn tensor_bytes(m: &DenseMatrix) -> Vec<u8> {
    encode(m.rows() as u64, m.cols() as u64, m.data(), DTYPE_F64)
}

pub(crate) fn encode(rows: u64, cols: u64, data: &[f64], dtype: u8) -> Vec<u8> {
    let elem = if dtype == DTYPE_F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * elem);
    out.extend_from_slice(&MAGIC);
    out.push(dtype);
    out.extend_from_slice(&[0, 0, 0]);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in data {
        if dtype == DTYPE_F32 {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses one `MTB1` blob starting at `bytes[0]`; `base` is the absolute file
/// offset of `bytes[0]`, used only to report error positions.
pub(crate) fn parse(bytes: &[u8], base: u64, allow_zero_dims: bool) -> Result<ParsedTensor> {
    let fail = |offset: u64, reason: String| MoftError::FormatError {
        offset: base + offset,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len() as u64,
            format!("truncated header: need {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:02x?}", &bytes[0..4])));
    }
    let dtype = bytes[4];
    let elem_size: u64 = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(fail(4, format!("unsupported dtype {other}"))),
    };
    for (i, &b) in bytes[5..8].iter().enumerate() {
        if b != 0 {
            return Err(fail(5 + i as u64, format!("reserved byte is {b}, must be 0")));
        }
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if !allow_zero_dims {
        if rows == 0 {
            return Err(fail(8, "rows is zero".to_string()));
        }
        if cols == 0 {
            return Err(fail(16, "cols is zero".to_string()));
        }
    }
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= MAX_ELEMENTS)
        .ok_or_else(|| fail(8, format!("element count {rows}x{cols} out of range")))?;
    let payload_len = (count * elem_size) as usize;
    let available = bytes.len() - HEADER_LEN;
    if available < payload_len {
        return Err(fail(
            bytes.len() as u64,
            format!("truncated payload: expected {payload_len} bytes, found {available}"),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let mut data = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let off = i * elem_size as usize;
        let v = if dtype == DTYPE_F32 {
            f32::from_le_bytes(payload[off..off + 4].try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(payload[off..off + 8].try_into().unwrap())
        };
        if !v.is_finite() {
            return Err(fail(
                (HEADER_LEN + off) as u64,
                format!("non-finite value {v}"),
            ));
        }
        data.push(v);
    }
    Ok(ParsedTensor {
        rows,
        cols,
        data,
        consumed: HEADER_LEN + payload_len,
    })
}

/// Writes `m` to `path` as a 64-bit `MTB1` file.
///
/// # Errors
///
/// `Io` on filesystem failures.
pub fn write_tensor(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    fs::write(path, tensor_bytes(m))?;
    Ok(())
}

/// Writes `m` to `path` as a 32-bit `MTB1` file. Values are rounded to the
/// nearest `f32`; values outside the `f32` range would round to infinity and
/// be rejected on read, so keep this to well-scaled data.
///
/// # Errors
///
/// `Io` on filesystem failures.
pub fn write_tensor_f32(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    fs::write(
        path,
        encode(m.rows() as u64, m.cols() as u64, m.data(), DTYPE_F32),
    )?;
    Ok(())
}

/// Reads an `MTB1` file. `f32` payloads are promoted to `f64` in memory.
///
/// # Errors
///
/// `Io` on filesystem failures; `FormatError` (with byte offset) on bad
/// magic, unsupported dtype, nonzero reserved bytes, zero dimensions,
/// truncated payloads, non-finite values, or trailing bytes.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let parsed = parse(&bytes, 0, false)?;
    if parsed.consumed != bytes.len() {
        return Err(MoftError::FormatError {
            offset: parsed.consumed as u64,
            reason: format!(
                "trailing bytes: file is {} bytes, tensor ends at {}",
                bytes.len(),
                parsed.consumed
            ),
        });
    }
    DenseMatrix::new(parsed.rows as usize, parsed.cols as usize, parsed.data)
}

/// Lowercase hex SHA-256 of `bytes`; the crate's content-hash primitive.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
