//! `.emb` container: a fixed 25-byte little-endian header followed by the
//! row-major `f32` payload.
//!
//! ```text
//! offset size field
//! 0      4    magic "VDTE"
//! 4      4    version (u32, = 1)
//! 8      8    rows (u64)
//! 16     8    dim (u64)
//! 24     1    dtype tag (1 = f32)
//! 25     4*rows*dim payload
//! ```

use std::path::Path;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const EMB_MAGIC: [u8; 4] = *b"VDTE";
pub const EMB_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 25;

pub fn encode_emb(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.values().len() * 4);
    out.extend_from_slice(&EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    out.push(DTYPE_F32);
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_emb(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != EMB_MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
                expected: EMB_MAGIC,
            });
        }
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != EMB_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: EMB_MAGIC,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMB_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidInput(format!("header shape {rows}x{dim} overflows")))?;
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows as usize, dim as usize, values)
}

pub fn read_emb(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_emb(&bytes)
}

/// Writes atomically; readers never observe a partial file.
pub fn write_emb(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    super::atomic_write(path, &encode_emb(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::new(2, 3, vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, -0.0]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let back = decode_emb(&encode_emb(&m)).unwrap();
        let bits = |m: &EmbeddingMatrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!((back.rows(), back.dim()), (2, 3));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_emb(&sample());
        assert_eq!(&bytes[..4], b"VDTE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &[3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[24], 1);
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 25 + 24);
    }

    #[test]
    fn corrupted_headers() {
        let mut bad = encode_emb(&sample());
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_emb(&bad), Err(Error::BadMagic { .. })));

        let mut dtype = encode_emb(&sample());
        dtype[24] = 2;
        assert!(matches!(decode_emb(&dtype), Err(Error::UnsupportedDtype(2))));

        let mut version = encode_emb(&sample());
        version[4] = 9;
        assert!(matches!(decode_emb(&version), Err(Error::UnsupportedVersion(9))));

        let short = encode_emb(&sample());
        assert!(matches!(
            decode_emb(&short[..short.len() - 4]),
            Err(Error::TruncatedPayload { expected: 24, found: 20 })
        ));
        assert!(matches!(decode_emb(&short[..10]), Err(Error::TruncatedPayload { .. })));

        let mut long = encode_emb(&sample());
        long.push(0);
        assert!(matches!(decode_emb(&long), Err(Error::TrailingBytes(1))));
    }
}
