//! Named random substreams derived from a single user seed.
//!
//! Each component (splitting, initialization, held-out selection, negative
//! sampling, bootstrap, ...) draws from its own stream so that changing how
//! much randomness one component consumes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const HELD_OUT: &str = "heldout";
pub const NEGATIVES: &str = "negatives";
pub const BOOTSTRAP: &str = "bootstrap";
pub const SYNTH: &str = "synth";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for the stream `name` under `seed`.
pub fn substream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(splitmix(seed ^ fnv1a(name.as_bytes())))
}

/// Stable 64-bit string hash, also used by the text feature encoder.
pub fn stable_hash(s: &str) -> u64 {
    fnv1a(s.as_bytes())
}
