//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of the top-level seed and a list of keys (stage name, sample id,
//! epoch, ...). Streams never share state, so the order in which samples or
//! stages are processed cannot change what any of them draws.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// A key component mixed into a stream seed.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
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

/// Derives a 64-bit stream seed from a base seed and keys.
pub fn derive_seed(seed: u64, keys: &[Key<'_>]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    for key in keys {
        match key {
            Key::Str(s) => {
                h = fnv1a(h, &[0x01]);
                h = fnv1a(h, s.as_bytes());
            }
            Key::Int(v) => {
                h = fnv1a(h, &[0x02]);
                h = fnv1a(h, &v.to_le_bytes());
            }
        }
    }
    splitmix(h)
}

pub fn keyed_rng(seed: u64, keys: &[Key<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}
