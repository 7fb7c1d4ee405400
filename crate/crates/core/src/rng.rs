//! Named, stateless random streams.
//!
//! Every random decision in a run draws from a stream addressed by
//! `(master_seed, stream name, indices)`. Streams never share state, so
//! adding a Path A slot cannot shift the Path B mutation sequence, and a
//! resumed run replays exactly the draws of an uninterrupted one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_PATH_B: &str = "path_b";
pub const STREAM_FALLBACK: &str = "fallback";
pub const STREAM_SAMPLING: &str = "sampling";
pub const STREAM_EVALUATOR: &str = "evaluator";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `stream` at the given index path.
pub fn stream_seed(master: u64, stream: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the stream name, then fold in the indices.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = splitmix64(master ^ splitmix64(h));
    for &i in indices {
        s = splitmix64(s ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    s
}

pub fn stream_rng(master: u64, stream: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, stream, indices))
}

/// Seed derived from arbitrary text; used by the heuristic backend so its
/// responses are a pure function of the prompt.
pub fn text_seed(text: &str) -> u64 {
    stream_seed(0, text, &[])
}
