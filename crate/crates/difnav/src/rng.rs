//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded through
//! [`derive_seed`], so a run is fully determined by its base seed. The mix
//! uses FNV-1a rather than `DefaultHasher`, whose keys change per process.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Mix a base seed with a stream tag and index into a new 64-bit seed.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    h = fnv1a(h, tag.as_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    // splitmix finalizer to spread low-entropy tags
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// ChaCha8 stream for `(base, tag, index)`.
pub fn stream(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}

/// Incremental FNV-1a fingerprint, stable across processes and releases.
#[derive(Debug, Clone)]
pub struct Digest(u64);

impl Digest {
    pub fn new() -> Self {
        Digest(FNV_OFFSET)
    }

    pub fn update_bytes(&mut self, bytes: &[u8]) {
        self.0 = fnv1a(self.0, bytes);
    }

    pub fn update_u64(&mut self, v: u64) {
        self.update_bytes(&v.to_le_bytes());
    }

    pub fn update_f64(&mut self, v: f64) {
        self.update_bytes(&v.to_bits().to_le_bytes());
    }

    /// Hashes the string with a terminator so concatenations cannot collide.
    pub fn update_str(&mut self, s: &str) {
        self.update_bytes(s.as_bytes());
        self.update_bytes(&[0xff]);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Digest {
    fn default() -> Self {
        Self::new()
    }
}
