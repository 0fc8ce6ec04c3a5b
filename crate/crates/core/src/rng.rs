// SPDX-License-Identifier: Apache-2.0

//! Seed derivation. Every random draw in the crate comes from a ChaCha stream
//! keyed by a root seed and a tuple of stream identifiers, so any sub-stream can
//! be regenerated independently of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a stream for the same ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Phantom = 1,
    Sensitivity = 2,
    TrainingNoise = 3,
    Shuffle = 4,
    Perturbation = 5,
    EvaluationNoise = 6,
    Simulation = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a stream domain and identifiers into a child seed.
pub fn derive_seed(root: u64, stream: Stream, ids: &[u64]) -> u64 {
    let mut h = splitmix(root ^ 0x6B64_6573_6967_6E00);
    h = splitmix(h ^ stream as u64);
    for &id in ids {
        h = splitmix(h ^ id);
    }
    h
}

pub fn stream_rng(root: u64, stream: Stream, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, ids))
}
