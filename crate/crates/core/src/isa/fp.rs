//! IEEE encodings for the float opcodes. Single precision occupies one 32-bit
//! word; double precision a hi/lo register pair.

pub fn f32_to_word(x: f32) -> u64 {
    x.to_bits() as u64
}

pub fn word_to_f32(w: u64) -> f32 {
    f32::from_bits(w as u32)
}

pub fn f64_to_pair(x: f64) -> (u64, u64) {
    let b = x.to_bits();
    (b >> 32, b & 0xffff_ffff)
}

pub fn pair_to_f64(hi: u64, lo: u64) -> f64 {
    f64::from_bits((hi & 0xffff_ffff) << 32 | (lo & 0xffff_ffff))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_roundtrip() {
        for x in [0.0f32, -1.5, 3.25e7, f32::MIN_POSITIVE, f32::INFINITY] {
            assert_eq!(word_to_f32(f32_to_word(x)), x);
        }
        assert_eq!(f32_to_word(1.0), 0x3f80_0000);
    }

    #[test]
    fn double_roundtrip() {
        for x in [0.0f64, -2.5, 1e300, std::f64::consts::PI] {
            let (h, l) = f64_to_pair(x);
            assert_eq!(pair_to_f64(h, l), x);
        }
        assert_eq!(f64_to_pair(1.0), (0x3ff0_0000, 0));
    }
}
