//! Seed derivation for independent deterministic random streams.
//!
//! Every randomized stage derives its own seed from the master seed, a
//! domain tag, and an index. Streams stay reproducible when stages run in
//! any order or in parallel.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags for the pipeline's random streams.
pub mod domain {
    pub const SUBJECT_PROFILE: u64 = 1;
    pub const SUBJECT_RENDER: u64 = 2;
    pub const SUBJECT_RESCAN: u64 = 3;
    pub const UMAP: u64 = 4;
    pub const NET_INIT: u64 = 5;
    pub const EPOCH_SHUFFLE: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const BLOB_TEST: u64 = 9;
    pub const COHORT: u64 = 10;
    pub const ABLATION: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes (master, domain, index) into a single stream seed.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ domain) ^ index)
}

/// ChaCha stream for a derived seed. ChaCha8 keeps generation cheap while
/// staying platform independent.
pub fn rng_for(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}
