//! Bit packing of residual codes.
//!
//! Codes are packed low-index-first: for `b = 4` the low nibble of each byte
//! holds the even dimension, for `b = 2` the two least significant bits hold
//! the first of four dimensions. This order is part of the on-disk format.

use crate::error::{Error, Result};

/// Number of packed bytes needed for `n` codes of `bits` bits.
pub fn packed_len(n: usize, bits: u8) -> usize {
    (n * bits as usize).div_ceil(8)
}

/// Packs `codes` (each `< 2^bits`) into `out`, which must be `packed_len` bytes.
pub fn pack_codes_into(codes: &[u8], bits: u8, out: &mut [u8]) {
    debug_assert!(bits == 2 || bits == 4);
    debug_assert_eq!(out.len(), packed_len(codes.len(), bits));
    let per_byte = 8 / bits as usize;
    let mask = (1u8 << bits) - 1;
    out.fill(0);
    for (i, &c) in codes.iter().enumerate() {
        debug_assert!(c <= mask);
        out[i / per_byte] |= (c & mask) << ((i % per_byte) * bits as usize);
    }
}

pub fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    pack_codes_into(codes, bits, &mut out);
    out
}

/// Decodes `n` codes from `packed`.
pub fn unpack_codes(packed: &[u8], bits: u8, n: usize) -> Result<Vec<u8>> {
    if bits != 2 && bits != 4 {
        return Err(Error::InvalidConfig(format!(
            "bits must be 2 or 4, got {bits}"
        )));
    }
    let need = packed_len(n, bits);
    if packed.len() < need {
        return Err(Error::CodesLengthMismatch {
            expected: need,
            found: packed.len(),
        });
    }
    let per_byte = 8 / bits as usize;
    let mask = (1u8 << bits) - 1;
    Ok((0..n)
        .map(|i| (packed[i / per_byte] >> ((i % per_byte) * bits as usize)) & mask)
        .collect())
}
