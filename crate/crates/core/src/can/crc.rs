//! CRC-15 as used by classical CAN.
//!
//! Generator x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1, zero initial
//! value, no final XOR. Bits are consumed most-significant first, so the
//! result is the remainder of `M(x) * x^15` divided by the generator.

/// Generator polynomial without the implicit x^15 term.
pub const CRC15_POLY: u16 = 0x4599;

/// Full 16-bit generator pattern including the x^15 term.
pub const CRC15_GENERATOR: u16 = 0xC599;

const CRC15_MASK: u16 = 0x7FFF;

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut reg = (i as u16) << 7;
        let mut k = 0;
        while k < 8 {
            reg = if reg & 0x4000 != 0 {
                (reg << 1) ^ CRC15_POLY
            } else {
                reg << 1
            };
            k += 1;
        }
        table[i] = reg & CRC15_MASK;
        i += 1;
    }
    table
}

static TABLE: [u16; 256] = build_table();

/// Computes the CRC-15 over a sequence of logical bits (`true` = 1).
///
/// Whole octets go through a 256-entry table; the remaining tail is shifted
/// in one bit at a time.
pub fn compute_crc15(bits: &[bool]) -> u16 {
    let mut crc: u16 = 0;
    let mut chunks = bits.chunks_exact(8);
    for chunk in &mut chunks {
        let byte = chunk
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
        let idx = ((crc >> 7) as u8 ^ byte) as usize;
        crc = ((crc << 8) ^ TABLE[idx]) & CRC15_MASK;
    }
    for &bit in chunks.remainder() {
        let feedback = bit ^ (crc & 0x4000 != 0);
        crc = (crc << 1) & CRC15_MASK;
        if feedback {
            crc ^= CRC15_POLY;
        }
    }
    crc
}

/// Expands the low `width` bits of `value`, most significant first.
pub(crate) fn push_bits(out: &mut Vec<bool>, value: u32, width: usize) {
    for shift in (0..width).rev() {
        out.push((value >> shift) & 1 == 1);
    }
}
