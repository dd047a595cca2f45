//! Shared layout of the binary asset containers (`.btpl`, `.gam`, `.wvol`).
//!
//! ```text
//! magic (6 bytes) | header_len: u64 LE | header (UTF-8 JSON) | pad to 16 | buffers...
//! ```
//!
//! The data section starts at the first 16-byte aligned file offset after the
//! header. Every buffer starts 16-byte aligned; buffer offsets written into
//! headers are relative to the start of the data section.

use serde::Serialize;
use thiserror::Error;

pub const ALIGN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
}

pub fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Offsets (relative to the data section) of consecutively packed, aligned buffers.
pub fn buffer_offsets(lens: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(lens.len());
    let mut cursor = 0;
    for &len in lens {
        offsets.push(cursor);
        cursor = align_up(cursor + len);
    }
    offsets
}

pub fn encode<H: Serialize>(magic: &[u8; 6], header: &H, buffers: &[&[u8]]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(align_up(out.len()), 0);
    let data_start = out.len();
    let lens: Vec<usize> = buffers.iter().map(|b| b.len()).collect();
    for (buf, off) in buffers.iter().zip(buffer_offsets(&lens)) {
        out.resize(data_start + off, 0);
        out.extend_from_slice(buf);
    }
    out
}

pub struct Decoded<'a> {
    pub header: &'a [u8],
    pub data: &'a [u8],
}

pub fn decode<'a>(magic: &[u8; 6], bytes: &'a [u8]) -> Result<Decoded<'a>, ContainerError> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).trim_end().to_string(),
        });
    }
    let len_end = magic.len() + 8;
    if bytes.len() < len_end {
        return Err(ContainerError::Truncated("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[magic.len()..len_end].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(len_end))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| ContainerError::Truncated("header extends past end of file".into()))?;
    let data_start = align_up(header_end).min(bytes.len());
    Ok(Decoded {
        header: &bytes[len_end..header_end],
        data: &bytes[data_start..],
    })
}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn u32_bytes(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn u16_bytes(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn read_u32s(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn read_u16s(bytes: &[u8]) -> Vec<u16> {
    bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_are_aligned() {
        let bytes = encode(b"TEST1\n", &serde_json::json!({"a": 1}), &[&[1, 2, 3], &[4; 20], &[5]]);
        let d = decode(b"TEST1\n", &bytes).unwrap();
        assert_eq!(d.header, br#"{"a":1}"#);
        let offs = buffer_offsets(&[3, 20, 1]);
        assert_eq!(offs, vec![0, 16, 48]);
        assert_eq!(&d.data[16..36], &[4; 20]);
        assert_eq!(d.data[48], 5);
        let start = bytes.len() - d.data.len();
        assert_eq!(start % ALIGN, 0);
    }

    #[test]
    fn wrong_magic_rejected() {
        let bytes = encode(b"TEST1\n", &1, &[]);
        assert!(matches!(decode(b"OTHER\n", &bytes), Err(ContainerError::BadMagic { .. })));
    }

    #[test]
    fn truncated_header_rejected() {
        let mut bytes = encode(b"TEST1\n", &serde_json::json!({"abc": [1, 2, 3]}), &[]);
        bytes.truncate(18);
        assert!(matches!(decode(b"TEST1\n", &bytes), Err(ContainerError::Truncated(_))));
    }
}
