//! Fixed-width bit packing, little-endian and LSB-first within each byte.

use crate::error::{MixqError, Result};

pub fn pack_codes(codes: &[u32], bits: u8) -> Vec<u8> {
    let bits = bits as usize;
    let mut out = vec![0u8; (codes.len() * bits).div_ceil(8)];
    let mut pos = 0usize;
    for &c in codes {
        for b in 0..bits {
            if (c >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

/// Unpacks `count` codes of `bits` width. Padding bits in the final byte must be zero.
pub fn unpack_codes(bytes: &[u8], bits: u8, count: usize) -> Result<Vec<u32>> {
    let width = bits as usize;
    let needed = (count * width).div_ceil(8);
    if bytes.len() != needed {
        return Err(MixqError::Corrupt(format!(
            "{} code bytes, expected {needed}",
            bytes.len()
        )));
    }
    let mut codes = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let mut c = 0u32;
        for b in 0..width {
            if (bytes[pos / 8] >> (pos % 8)) & 1 == 1 {
                c |= 1 << b;
            }
            pos += 1;
        }
        codes.push(c);
    }
    if !pos.is_multiple_of(8) && bytes[pos / 8] >> (pos % 8) != 0 {
        return Err(MixqError::Corrupt("non-zero padding bits".into()));
    }
    Ok(codes)
}
