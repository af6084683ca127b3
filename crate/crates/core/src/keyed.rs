//! Keyed pseudorandom streams and digests.
//!
//! Everything that has to be reproduced by both parties (grille cells,
//! message padding) is drawn from a ChaCha20 keystream whose key is
//! `SHA-256(domain || secret)`. The sampling routines here are written out
//! by hand so the derived values never depend on the sampling algorithms of
//! a particular `rand` release.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// A 256-bit shared secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Secret(pub [u8; 32]);

impl Secret {
    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Secret(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Expand an integer seed into a secret. Only meant for reproducible
    /// experiments, where the key space is deliberately small.
    pub fn from_u64(seed: u64) -> Self {
        Secret(sha256_parts(&[
            b"grille/secret-from-u64",
            &seed.to_le_bytes(),
        ]))
    }
}

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(..)")
    }
}

pub fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256_parts(&[bytes]))
}

/// Counter-mode keystream bound to a domain label.
pub struct KeyStream {
    rng: ChaCha20Rng,
}

impl KeyStream {
    pub fn new(domain: &str, secret: &[u8]) -> Self {
        let key = sha256_parts(&[domain.as_bytes(), &[0u8], secret]);
        KeyStream {
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn next_bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }

    /// Uniform integer in `0..bound` by rejection sampling.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// Partial Fisher-Yates: a uniformly random ordered selection of `k`
    /// items from `items`.
    pub fn choose_prefix<T: Copy>(&mut self, items: &[T], k: usize) -> Vec<T> {
        let mut pool = items.to_vec();
        let n = pool.len();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

/// Derive a child seed for an indexed sub-task of an experiment.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let d = sha256_parts(&[
        b"grille/derive-seed",
        &master.to_le_bytes(),
        tag.as_bytes(),
        &index.to_le_bytes(),
    ]);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Deterministic experiment RNG.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
