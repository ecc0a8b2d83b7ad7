//! Deterministic seed derivation.
//!
//! Every stochastic step in the pipeline draws from a `ChaCha8Rng` whose seed is
//! derived from a root seed plus a few stable keys (epoch, sample id, ...). The
//! hash is FNV-1a over the key bytes followed by a splitmix64 finalizer, so the
//! derived seeds are identical on every platform and toolchain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A component of a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    U64(u64),
    Str(&'a str),
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::U64(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::U64(v as u64)
    }
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(v: &'a str) -> Self {
        Key::Str(v)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a root seed and an ordered list of keys.
pub fn derive_seed(root: u64, keys: &[Key<'_>]) -> u64 {
    let mut h = fnv(FNV_OFFSET, &root.to_le_bytes());
    for key in keys {
        match key {
            Key::U64(v) => {
                h = fnv(h, &[0x01]);
                h = fnv(h, &v.to_le_bytes());
            }
            Key::Str(s) => {
                h = fnv(h, &[0x02]);
                h = fnv(h, &(s.len() as u64).to_le_bytes());
                h = fnv(h, s.as_bytes());
            }
        }
    }
    splitmix(h)
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, keys: &[Key<'_>]) -> Rng {
    rng_from(derive_seed(root, keys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_key_sensitive() {
        let a = derive_seed(7, &[Key::U64(1), Key::Str("img_001")]);
        assert_eq!(a, derive_seed(7, &[Key::U64(1), Key::Str("img_001")]));
        assert_ne!(a, derive_seed(7, &[Key::U64(2), Key::Str("img_001")]));
        assert_ne!(a, derive_seed(8, &[Key::U64(1), Key::Str("img_001")]));
        // string and integer keys never alias
        assert_ne!(
            derive_seed(0, &[Key::Str("1")]),
            derive_seed(0, &[Key::U64(1)])
        );
    }
}
