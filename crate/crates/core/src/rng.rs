//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, worker, round, purpose)`, so results do not depend on the order in
//! which workers execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Batch,
    Quant,
    Participation,
    /// Synthetic data generation.
    Data,
    /// Initialization (e.g. sampled component means).
    Init,
    /// Secant probes for constant estimation.
    Probe,
    /// Free-form Monte-Carlo experiments.
    MonteCarlo,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Batch => 1,
            Purpose::Quant => 2,
            Purpose::Participation => 3,
            Purpose::Data => 4,
            Purpose::Init => 5,
            Purpose::Probe => 6,
            Purpose::MonteCarlo => 7,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit key derived from the stream coordinates.
fn key(seed: u64, worker: u64, round: u64, purpose: Purpose) -> [u8; 32] {
    let mut h = splitmix(seed);
    h = splitmix(h ^ worker);
    h = splitmix(h ^ round.rotate_left(17));
    h = splitmix(h ^ purpose.tag().rotate_left(43));
    let mut out = [0u8; 32];
    let mut x = h;
    for chunk in out.chunks_mut(8) {
        x = splitmix(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    out
}

/// The stream for `(seed, worker, round, purpose)`.
pub fn stream(seed: u64, worker: usize, round: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(key(seed, worker as u64, round, purpose))
}
