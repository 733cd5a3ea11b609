//! LSB-first bit packing of code entries.

use crate::error::{Error, Result};
use crate::types::{Code, QuantizerSpec};

/// Bytes needed for `count` codes under `spec`.
pub fn packed_len(count: usize, spec: &QuantizerSpec) -> usize {
    (count * spec.books() * spec.bits_per_entry() as usize).div_ceil(8)
}

/// Pack codes entry by entry, `bits_per_entry` bits each, least significant bit first.
/// The last byte is zero-padded.
pub fn pack_codes(codes: &[Code], spec: &QuantizerSpec) -> Result<Vec<u8>> {
    let bits = spec.bits_per_entry();
    let mut out = vec![0u8; packed_len(codes.len(), spec)];
    let mut pos = 0usize;
    for code in codes {
        spec.validate_code(code)?;
        for &e in code.entries() {
            let mut value = u64::from(e);
            let mut left = bits;
            while left > 0 {
                let byte = pos / 8;
                let offset = (pos % 8) as u32;
                let take = left.min(8 - offset);
                let mask = (1u64 << take) - 1;
                out[byte] |= ((value & mask) as u8) << offset;
                value >>= take;
                left -= take;
                pos += take as usize;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_codes`]. Padding bits are ignored.
pub fn unpack_codes(bytes: &[u8], count: usize, spec: &QuantizerSpec) -> Result<Vec<Code>> {
    let expected = packed_len(count, spec);
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: bytes.len(),
        });
    }
    let bits = spec.bits_per_entry();
    let mut pos = 0usize;
    let mut codes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut entries = Vec::with_capacity(spec.books());
        for _ in 0..spec.books() {
            let mut value = 0u64;
            let mut got = 0u32;
            while got < bits {
                let byte = pos / 8;
                let offset = (pos % 8) as u32;
                let take = (bits - got).min(8 - offset);
                let chunk = (u64::from(bytes[byte]) >> offset) & ((1u64 << take) - 1);
                value |= chunk << got;
                got += take;
                pos += take as usize;
            }
            entries.push(value as u32);
        }
        let code = Code::new(entries);
        spec.validate_code(&code)?;
        codes.push(code);
    }
    Ok(codes)
}
