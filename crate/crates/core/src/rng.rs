//! Named random streams.
//!
//! Every random draw in an experiment comes from a stream keyed by
//! `(master seed, purpose, a, b)`, so results do not depend on the order in
//! which clients or methods are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for. The discriminant is mixed into the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Shard generation, keyed by client index.
    Shard = 1,
    /// Validation dataset generation.
    Validation = 2,
    /// The fixed mixture direction `e` of the third distribution.
    MixtureDirection = 3,
    /// Honest minibatch indices, keyed by (client, round).
    Batch = 4,
    /// Byzantine noise, keyed by (client, round).
    Attack = 5,
    /// Server-side weight solver randomness, keyed by (method, round).
    Solver = 6,
    /// Client subsampling for FedAvg, keyed by (method, round).
    Sampling = 7,
    /// Held-out test data.
    Test = 8,
    /// Class centers of the softmax task.
    Centers = 9,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from the master seed and a key.
pub fn stream(master: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    let mut state = master;
    let mut seed = [0u8; 32];
    let words = [
        splitmix64(&mut state),
        splitmix64(&mut state) ^ (purpose as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93),
        splitmix64(&mut state) ^ a.wrapping_mul(0xA076_1D64_78BD_642F),
        splitmix64(&mut state) ^ b.wrapping_mul(0xE703_7ED1_A0B4_28DB),
    ];
    // One more mixing pass so nearby keys do not share seed words.
    let mut mix = words[0] ^ words[1] ^ words[2] ^ words[3];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        let v = w ^ splitmix64(&mut mix);
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
