//! Hierarchical seeding.
//!
//! One master seed fans out into named streams (`demand`, `rates`, `mcts`,
//! `sh`, ...). Each stream is a ChaCha8 generator on its own stream id, so a
//! new consumer never shifts the draws seen by an existing one. Keyed
//! substreams (`rates` per user and period, say) are derived by mixing the
//! keys into the seed, which makes the draw for a given key independent of
//! the order in which keys are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named stream of the master seed.
pub fn stream(master: u64, label: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a(label));
    rng
}

/// Stream keyed by a label plus an ordered list of integer keys.
pub fn substream(master: u64, label: &str, keys: &[u64]) -> SimRng {
    let mut seed = splitmix64(master ^ fnv1a(label));
    for &k in keys {
        seed = splitmix64(seed ^ k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label));
    rng
}
