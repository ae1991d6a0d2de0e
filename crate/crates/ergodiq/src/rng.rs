//! Deterministic random-number streams.
//!
//! Every stochastic routine draws from a stream addressed by
//! `(master seed, path index, role tag)`. The address is mixed through
//! splitmix64 into a 256-bit seed for a counter-based ChaCha generator, so
//!
//! * distinct paths get statistically independent streams,
//! * the same address always reproduces the same draws, regardless of how
//!   many worker threads execute the ensemble or in which order, and
//! * adding draws to one role never shifts the draws of another.
//!
//! Tags are short ASCII role names ("primary", "coupling", ...); see
//! [`StreamSpec`].

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Address of one reproducible stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamSpec {
    pub master_seed: u64,
    pub path_index: u64,
    pub tag: &'static str,
}

/// splitmix64 finalizer: a fixed bijective mixer on u64.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; used to fold the role tag into the seed lane and to
/// fingerprint configurations in run manifests (stable across builds).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl StreamSpec {
    pub fn new(master_seed: u64, path_index: u64, tag: &'static str) -> Self {
        StreamSpec {
            master_seed,
            path_index,
            tag,
        }
    }

    /// 256-bit seed derived by chaining splitmix64 over the address lanes.
    pub fn seed_bytes(&self) -> [u8; 32] {
        let tag_hash = fnv1a(self.tag.as_bytes());
        // Chain the three lanes; successive splitmix states fill the seed.
        let mut state = splitmix64(self.master_seed)
            ^ splitmix64(self.path_index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            ^ tag_hash;
        let mut out = [0u8; 32];
        for chunk in out.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        out
    }

    /// Instantiate the stream. ChaCha is counter-based: the stream position
    /// is a word counter, so draws are a pure function of (seed, counter).
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.seed_bytes())
    }
}

/// Convenience: build the stream for `(master, path, tag)` in one call.
pub fn stream(master_seed: u64, path_index: u64, tag: &'static str) -> ChaCha12Rng {
    StreamSpec::new(master_seed, path_index, tag).rng()
}
