//! CRC-24A: generator `0x864CFB`, register initialized to zero, no
//! reflection, no final xor. Check bits are appended most significant first,
//! so the CRC of `data ∥ crc(data)` is zero.

pub const POLY: u32 = 0x86_4CFB;
pub const CHECK_BITS: usize = 24;

const TABLE: [u32; 256] = build_table();

const fn build_table() -> [u32; 256] {
    let mut t = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut reg = (i as u32) << 16;
        let mut b = 0;
        while b < 8 {
            reg = if reg & 0x80_0000 != 0 { (reg << 1) ^ POLY } else { reg << 1 };
            b += 1;
        }
        t[i] = reg & 0xFF_FFFF;
        i += 1;
    }
    t
}

/// Register after shifting in `bits` (each 0 or 1), one bit at a time.
pub fn crc24(bits: &[u8]) -> u32 {
    let mut reg = 0u32;
    for &b in bits {
        let top = ((reg >> 23) & 1) as u8 ^ (b & 1);
        reg = (reg << 1) & 0xFF_FFFF;
        if top != 0 {
            reg ^= POLY & 0xFF_FFFF;
        }
    }
    reg
}

/// Table-driven CRC over whole bytes, most significant bit first.
pub fn crc24_bytes(data: &[u8]) -> u32 {
    data.iter().fold(0u32, |reg, &byte| {
        let idx = ((reg >> 16) as u8 ^ byte) as usize;
        ((reg << 8) & 0xFF_FFFF) ^ TABLE[idx]
    })
}

/// The 24 check bits of `bits`, most significant first.
pub fn crc24_bits(bits: &[u8]) -> Vec<u8> {
    let c = crc24(bits);
    (0..CHECK_BITS).rev().map(|i| ((c >> i) & 1) as u8).collect()
}

/// True iff `bits` ends in the valid CRC of everything before it.
pub fn crc24_verify(bits: &[u8]) -> bool {
    bits.len() >= CHECK_BITS && crc24(bits) == 0
}

/// Appends the three check bytes.
pub fn attach_bytes(data: &[u8]) -> Vec<u8> {
    let c = crc24_bytes(data);
    let mut out = data.to_vec();
    out.extend_from_slice(&[(c >> 16) as u8, (c >> 8) as u8, c as u8]);
    out
}

pub fn verify_bytes(data: &[u8]) -> bool {
    data.len() >= 3 && crc24_bytes(data) == 0
}

pub fn bytes_to_bits(data: &[u8]) -> Vec<u8> {
    data.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1)).collect()
}

/// Packs bits most significant first; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_message_has_zero_crc() {
        assert_eq!(crc24(&[0; 100]), 0);
        assert_eq!(crc24_bytes(&[0; 13]), 0);
    }

    #[test]
    fn table_matches_bit_serial() {
        let data: Vec<u8> = (0..64u32).map(|i| (i * 37 + 11) as u8).collect();
        assert_eq!(crc24_bytes(&data), crc24(&bytes_to_bits(&data)));
    }

    #[test]
    fn appended_check_verifies() {
        let data = b"semantic harq";
        assert!(verify_bytes(&attach_bytes(data)));
        let mut bits = bytes_to_bits(data);
        bits.extend(crc24_bits(&bits));
        assert!(crc24_verify(&bits));
        bits[3] ^= 1;
        assert!(!crc24_verify(&bits));
    }

    #[test]
    fn bit_packing_round_trip() {
        let data = [0xA5, 0x01, 0xFF];
        assert_eq!(bits_to_bytes(&bytes_to_bits(&data)), data);
    }
}
