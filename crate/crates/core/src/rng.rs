//! Seed derivation.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(seed, domain, sub_key)` with the ChaCha stream id set to an item index
//! (frame, sample, ...). The 256-bit key is the little-endian concatenation
//! `seed || domain || sub_key || 0u64`. Because each item owns its stream,
//! results do not depend on how items are partitioned across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent uses of a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 1,
    Channel = 2,
    Symbols = 3,
    Shuffle = 4,
    Init = 5,
    TrainingData = 6,
}

pub fn stream(seed: u64, domain: Domain, sub_key: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&sub_key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
