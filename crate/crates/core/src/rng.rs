//! Seed fan-out. Every random stream in the pipeline is derived from one root
//! seed and a fixed stream tag, so disabling one consumer never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for the independent consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    InstanceBatch = 2,
    ConceptionBatch = 3,
    Augment = 4,
    Cluster = 5,
    Eval = 6,
    Split = 7,
    Generate = 8,
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(root ^ mix(stream as u64)).wrapping_add(index))
}

pub fn stream_rng(root: u64, stream: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stream, index))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
