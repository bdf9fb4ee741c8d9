//! Aliased, padded, keyed block encryption.
//!
//! A plaintext word of `w` bits is joined with a padding field (context tag +
//! random nonce) and sealed by an 8-round balanced Feistel permutation over the
//! whole block. Equality of ciphertexts is plaintext equality; identity is block
//! identity. Different paddings of the same word give different blocks (aliases).

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Number of Feistel rounds.
pub const ROUNDS: usize = 8;

/// Bits reserved for the context tag in the standard layouts.
pub const STANDARD_TAG_BITS: u32 = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CipherError {
    #[error("value {value:#x} does not fit in {width} bits")]
    ValueRange { value: u64, width: u32 },
    #[error("tag {tag} does not fit in {bits} tag bits")]
    TagRange { tag: u8, bits: u32 },
    #[error("nonce {nonce:#x} does not fit in {bits} nonce bits")]
    NonceRange { nonce: u64, bits: u32 },
    #[error("invalid block layout: {0}")]
    Layout(String),
    #[error("unsupported word width {0} (expected 8, 16 or 32)")]
    Width(u32),
    #[error("bad key: {0}")]
    Key(String),
}

/// Word width `w` in bits. Plaintext arithmetic is modulo `2^w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Width(u32);

impl Width {
    pub const W8: Width = Width(8);
    pub const W16: Width = Width(16);
    pub const W32: Width = Width(32);

    pub fn new(bits: u32) -> Result<Width, CipherError> {
        match bits {
            8 | 16 | 32 => Ok(Width(bits)),
            _ => Err(CipherError::Width(bits)),
        }
    }

    /// Any width from 1 to 32 bits; only for exhaustive small-domain checks.
    pub fn small(bits: u32) -> Result<Width, CipherError> {
        if (1..=32).contains(&bits) {
            Ok(Width(bits))
        } else {
            Err(CipherError::Width(bits))
        }
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn mask(self) -> u64 {
        (1u64 << self.0) - 1
    }

    pub fn modulus(self) -> u64 {
        1u64 << self.0
    }

    pub fn wrap(self, v: i128) -> u64 {
        (v.rem_euclid(self.modulus() as i128)) as u64
    }

    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    pub fn mul(self, a: u64, b: u64) -> u64 {
        a.wrapping_mul(b) & self.mask()
    }

    pub fn neg(self, a: u64) -> u64 {
        0u64.wrapping_sub(a) & self.mask()
    }

    /// Two's-complement reading of a word.
    pub fn signed(self, a: u64) -> i64 {
        let a = a & self.mask();
        if a >> (self.0 - 1) & 1 == 1 {
            a as i64 - self.modulus() as i64
        } else {
            a as i64
        }
    }

    pub fn from_signed(self, v: i64) -> u64 {
        self.wrap(v as i128)
    }

    /// Signed division truncating toward zero; division by zero gives all ones.
    pub fn div(self, a: u64, b: u64) -> u64 {
        let (sa, sb) = (self.signed(a), self.signed(b));
        if sb == 0 {
            return self.mask();
        }
        self.wrap(sa as i128 / sb as i128)
    }

    /// Remainder matching [`Width::div`]; remainder by zero gives the dividend.
    pub fn rem(self, a: u64, b: u64) -> u64 {
        let (sa, sb) = (self.signed(a), self.signed(b));
        if sb == 0 {
            return a & self.mask();
        }
        self.wrap(sa as i128 % sb as i128)
    }

    /// The doubled width used by long operands, as a plain bit count.
    pub fn double_bits(self) -> u32 {
        self.0 * 2
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Context tag stored in the top padding bits. Tag 0 marks runtime data; every
/// (opcode, constant position) pair owns a distinct nonzero tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub u8);

impl Tag {
    pub const DATA: Tag = Tag(0);

    pub fn is_data(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Padding {
    pub tag: Tag,
    pub nonce: u64,
}

impl Padding {
    pub fn data(nonce: u64) -> Padding {
        Padding { tag: Tag::DATA, nonce }
    }
}

/// Bit layout of a block: `[tag | nonce | value]`, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    width: Width,
    tag_bits: u32,
    nonce_bits: u32,
}

impl Layout {
    /// Standard layout: 64-bit blocks, 7 tag bits, the rest nonce.
    pub fn standard(width: Width) -> Layout {
        Layout {
            width,
            tag_bits: STANDARD_TAG_BITS,
            nonce_bits: 64 - STANDARD_TAG_BITS - width.bits(),
        }
    }

    pub fn custom(width: Width, tag_bits: u32, nonce_bits: u32) -> Result<Layout, CipherError> {
        let total = width.bits() + tag_bits + nonce_bits;
        if total > 64 || !total.is_multiple_of(2) {
            return Err(CipherError::Layout(format!(
                "block of {total} bits must be even and at most 64"
            )));
        }
        if tag_bits == 0 || tag_bits > 8 || nonce_bits == 0 {
            return Err(CipherError::Layout(format!(
                "tag bits {tag_bits} must be 1..=8 and nonce bits nonzero"
            )));
        }
        Ok(Layout {
            width,
            tag_bits,
            nonce_bits,
        })
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn tag_bits(&self) -> u32 {
        self.tag_bits
    }

    pub fn nonce_bits(&self) -> u32 {
        self.nonce_bits
    }

    pub fn block_bits(&self) -> u32 {
        self.width.bits() + self.tag_bits + self.nonce_bits
    }

    pub fn nonce_mask(&self) -> u64 {
        (1u64 << self.nonce_bits) - 1
    }

    fn half_bits(&self) -> u32 {
        self.block_bits() / 2
    }

    fn half_mask(&self) -> u64 {
        (1u64 << self.half_bits()) - 1
    }

    pub fn block_mask(&self) -> u64 {
        if self.block_bits() == 64 {
            u64::MAX
        } else {
            (1u64 << self.block_bits()) - 1
        }
    }

    fn pack(&self, value: u64, padding: Padding) -> Result<u64, CipherError> {
        let w = self.width.bits();
        if value > self.width.mask() {
            return Err(CipherError::ValueRange { value, width: w });
        }
        if u32::from(padding.tag.0) >= (1u32 << self.tag_bits) {
            return Err(CipherError::TagRange {
                tag: padding.tag.0,
                bits: self.tag_bits,
            });
        }
        if padding.nonce > self.nonce_mask() {
            return Err(CipherError::NonceRange {
                nonce: padding.nonce,
                bits: self.nonce_bits,
            });
        }
        Ok(value | padding.nonce << w | u64::from(padding.tag.0) << (w + self.nonce_bits))
    }

    fn unpack(&self, plain: u64) -> (u64, Padding) {
        let w = self.width.bits();
        let value = plain & self.width.mask();
        let nonce = (plain >> w) & self.nonce_mask();
        let tag = (plain >> (w + self.nonce_bits)) as u8;
        (value, Padding { tag: Tag(tag), nonce })
    }
}

/// A sealed block. Compare with `==` for identity; plaintext equality needs a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ciphertext(pub u64);

impl fmt::Display for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::LowerHex for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

/// Key material for the permutation (16 bytes).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Key([u8; 16]);

impl Key {
    pub fn new(bytes: [u8; 16]) -> Key {
        Key(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Key, CipherError> {
        let bytes = hex::decode(s.trim()).map_err(|e| CipherError::Key(e.to_string()))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| CipherError::Key(format!("expected 16 bytes, got {}", b.len())))?;
        Ok(Key(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key(..)")
    }
}

impl Default for Key {
    fn default() -> Key {
        Key(*b"chaotic-default!")
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Plaintext binary operators usable through [`Cipher::lift_op`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlainOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Xor,
    And,
    Or,
}

impl PlainOp {
    pub fn apply(self, width: Width, a: u64, b: u64) -> u64 {
        match self {
            PlainOp::Add => width.add(a, b),
            PlainOp::Sub => width.sub(a, b),
            PlainOp::Mul => width.mul(a, b),
            PlainOp::Div => width.div(a, b),
            PlainOp::Rem => width.rem(a, b),
            PlainOp::Xor => (a ^ b) & width.mask(),
            PlainOp::And => a & b & width.mask(),
            PlainOp::Or => (a | b) & width.mask(),
        }
    }
}

/// Keyed permutation over blocks of a fixed [`Layout`].
#[derive(Clone, Debug)]
pub struct Cipher {
    layout: Layout,
    round_keys: [u64; ROUNDS],
    hash_key: u64,
}

impl Cipher {
    pub fn new(key: &Key, layout: Layout) -> Cipher {
        let b = key.bytes();
        let lo = u64::from_le_bytes(b[..8].try_into().unwrap());
        let hi = u64::from_le_bytes(b[8..].try_into().unwrap());
        let mut state = mix64(lo ^ mix64(hi ^ 0x6a09_e667_f3bc_c908));
        let mut round_keys = [0u64; ROUNDS];
        for rk in round_keys.iter_mut() {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            *rk = mix64(state ^ hi);
        }
        let hash_key = mix64(state ^ lo ^ 0xbb67_ae85_84ca_a73b);
        Cipher {
            layout,
            round_keys,
            hash_key,
        }
    }

    pub fn standard(key: &Key, width: Width) -> Cipher {
        Cipher::new(key, Layout::standard(width))
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn width(&self) -> Width {
        self.layout.width
    }

    fn round(&self, half: u64, i: usize) -> u64 {
        mix64(half ^ self.round_keys[i] ^ ((i as u64) << 56)) & self.layout.half_mask()
    }

    fn permute(&self, block: u64) -> u64 {
        let h = self.layout.half_bits();
        let m = self.layout.half_mask();
        let (mut l, mut r) = (block >> h & m, block & m);
        for i in 0..ROUNDS {
            let next = l ^ self.round(r, i);
            l = r;
            r = next;
        }
        l << h | r
    }

    fn unpermute(&self, block: u64) -> u64 {
        let h = self.layout.half_bits();
        let m = self.layout.half_mask();
        let (mut l, mut r) = (block >> h & m, block & m);
        for i in (0..ROUNDS).rev() {
            let prev = r ^ self.round(l, i);
            r = l;
            l = prev;
        }
        l << h | r
    }

    pub fn encrypt(&self, value: u64, padding: Padding) -> Result<Ciphertext, CipherError> {
        Ok(Ciphertext(self.permute(self.layout.pack(value, padding)?)))
    }

    /// Total on the block space; bits above the block width are ignored.
    pub fn decrypt(&self, c: Ciphertext) -> (u64, Padding) {
        self.layout
            .unpack(self.unpermute(c.0 & self.layout.block_mask()))
    }

    pub fn value(&self, c: Ciphertext) -> u64 {
        self.decrypt(c).0
    }

    pub fn tag(&self, c: Ciphertext) -> Tag {
        self.decrypt(c).1.tag
    }

    pub fn random_nonce<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.gen::<u64>() & self.layout.nonce_mask()
    }

    /// Encrypt runtime data with a random nonce.
    pub fn encrypt_data<R: Rng + ?Sized>(&self, value: u64, rng: &mut R) -> Ciphertext {
        let nonce = self.random_nonce(rng);
        self.encrypt(value & self.width().mask(), Padding::data(nonce))
            .expect("masked value and nonce fit the layout")
    }

    /// Same plaintext and tag, fresh nonce.
    pub fn fresh_alias<R: Rng + ?Sized>(&self, c: Ciphertext, rng: &mut R) -> Ciphertext {
        let (value, pad) = self.decrypt(c);
        let nonce = self.random_nonce(rng);
        self.encrypt(value, Padding { tag: pad.tag, nonce })
            .expect("decrypted fields fit the layout")
    }

    /// Keyed hash of a word sequence, used for deterministic result padding and
    /// for violation garbage.
    pub fn keyed_hash(&self, parts: &[u64]) -> u64 {
        let mut h = self.hash_key;
        for &p in parts {
            h = mix64(h ^ p).rotate_left(17).wrapping_add(0x9e37_79b9_7f4a_7c15);
        }
        mix64(h)
    }

    /// Runtime-data block for `value` whose nonce is a keyed hash of `context`.
    pub fn seal_derived(&self, value: u64, context: &[u64]) -> Ciphertext {
        let nonce = self.keyed_hash(context) & self.layout.nonce_mask();
        self.encrypt(value & self.width().mask(), Padding::data(nonce))
            .expect("masked fields fit the layout")
    }

    /// Decrypt, apply, re-encrypt as runtime data. The result nonce is a keyed
    /// hash of the operand blocks, so it is fresh but reproducible.
    pub fn lift_op(&self, op: PlainOp, a: Ciphertext, b: Ciphertext) -> Ciphertext {
        let x = self.value(a);
        let y = self.value(b);
        let v = op.apply(self.width(), x, y);
        self.seal_derived(v, &[op as u64, a.0, b.0])
    }

    /// Nonsense block produced when a constant is consumed in the wrong position.
    pub fn garbage(&self, context: &[u64]) -> Ciphertext {
        let h = self.keyed_hash(context);
        let v = mix64(h ^ 0x5555) & self.width().mask();
        self.seal_derived(v, &[h])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn key() -> Key {
        Key::from_hex("000102030405060708090a0b0c0d0e0f").unwrap()
    }

    #[test]
    fn roundtrip_identity() {
        let c = Cipher::standard(&key(), Width::W16);
        let p = Padding::data(12345);
        let ct = c.encrypt(5, p).unwrap();
        assert_eq!(c.decrypt(ct), (5, p));
    }

    #[test]
    fn aliases_are_distinct_blocks_with_equal_plaintext() {
        let c = Cipher::standard(&key(), Width::W16);
        let a = c.encrypt(5, Padding::data(1)).unwrap();
        let b = c.encrypt(5, Padding::data(2)).unwrap();
        assert_ne!(a, b);
        assert_eq!(c.value(a), 5);
        assert_eq!(c.value(b), 5);
    }

    #[test]
    fn bijection_at_width_four() {
        let layout = Layout::custom(Width::small(4).unwrap(), 2, 2).unwrap();
        let c = Cipher::new(&key(), layout);
        let mut seen = HashSet::new();
        for v in 0..16u64 {
            for tag in 0..4u8 {
                for nonce in 0..4u64 {
                    let p = Padding { tag: Tag(tag), nonce };
                    let ct = c.encrypt(v, p).unwrap();
                    assert!(ct.0 < 256);
                    assert!(seen.insert(ct.0));
                    assert_eq!(c.decrypt(ct), (v, p));
                }
            }
        }
        assert_eq!(seen.len(), 256);
    }

    #[test]
    fn wrong_key_scrambles() {
        let c = Cipher::standard(&key(), Width::W16);
        let other = Cipher::standard(&Key::from_hex("ff0102030405060708090a0b0c0d0e0f").unwrap(), Width::W16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut same = 0;
        for _ in 0..1000 {
            let v = rng.gen::<u64>() & 0xffff;
            let ct = c.encrypt_data(v, &mut rng);
            if other.decrypt(ct) == c.decrypt(ct) {
                same += 1;
            }
        }
        assert_eq!(same, 0);
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let c = Cipher::standard(&key(), Width::W8);
        assert!(matches!(
            c.encrypt(256, Padding::data(0)),
            Err(CipherError::ValueRange { .. })
        ));
        assert!(matches!(
            c.encrypt(1, Padding { tag: Tag(200), nonce: 0 }),
            Err(CipherError::TagRange { .. })
        ));
        assert!(matches!(
            c.encrypt(1, Padding::data(u64::MAX)),
            Err(CipherError::NonceRange { .. })
        ));
    }

    #[test]
    fn fresh_alias_keeps_value_and_tag() {
        let c = Cipher::standard(&key(), Width::W16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = c.encrypt(77, Padding::data(4)).unwrap();
        let mut blocks = HashSet::new();
        for _ in 0..100 {
            let a = c.fresh_alias(base, &mut rng);
            assert_eq!(c.value(a), 77);
            assert!(c.tag(a).is_data());
            blocks.insert(a);
        }
        // 41 nonce bits: P(any collision among 100) is about 2.3e-9.
        assert!(blocks.len() >= 99);
    }

    #[test]
    fn lift_op_examples() {
        let c = Cipher::standard(&key(), Width::W8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e5 = c.encrypt_data(5, &mut rng);
        let e7 = c.encrypt_data(7, &mut rng);
        assert_eq!(c.value(c.lift_op(PlainOp::Add, e5, e7)), 12);
        assert_eq!(
            c.value(c.lift_op(PlainOp::Add, e5, e7)),
            c.value(c.lift_op(PlainOp::Add, e7, e5))
        );
        let e200 = c.encrypt_data(200, &mut rng);
        let e3 = c.encrypt_data(3, &mut rng);
        // 600 mod 256
        assert_eq!(c.value(c.lift_op(PlainOp::Mul, e200, e3)), 88);
        assert!(c.tag(c.lift_op(PlainOp::Mul, e200, e3)).is_data());
    }

    #[test]
    fn width_arithmetic() {
        let w = Width::W8;
        assert_eq!(w.signed(0xff), -1);
        assert_eq!(w.div(w.from_signed(-7), 2), w.from_signed(-3));
        assert_eq!(w.div(5, 0), 0xff);
        assert_eq!(w.rem(w.from_signed(-7), 2), w.from_signed(-1));
        assert_eq!(w.rem(9, 0), 9);
        assert!(Width::new(12).is_err());
    }

    #[test]
    fn same_key_same_blocks() {
        let a = Cipher::standard(&key(), Width::W32);
        let b = Cipher::standard(&key(), Width::W32);
        for v in [0u64, 1, 0xdead_beef] {
            let p = Padding { tag: Tag(3), nonce: 99 };
            assert_eq!(a.encrypt(v, p).unwrap(), b.encrypt(v, p).unwrap());
        }
    }
}
