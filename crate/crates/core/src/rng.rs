//! Seed handling.
//!
//! All randomness in a run flows from one user-supplied 64-bit seed. Each
//! consumer (mask sampling, weight initialisation, dropout, shuffles, folds,
//! synthetic data) gets its own substream:
//!
//! ```text
//! substream_seed = splitmix64(seed ^ splitmix64((purpose << 32) ^ index))
//! ```
//!
//! and draws from a `ChaCha8Rng` seeded with that value. ChaCha8 is
//! specified independently of platform and word size, so masks and
//! initialisations are reproducible everywhere. Expander masks go one step
//! further and give every smaller-side unit its own ChaCha stream id, which
//! makes a mask independent of the order in which units are sampled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumer of a substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Mask = 1,
    Init = 2,
    Dropout = 3,
    Shuffle = 4,
    Folds = 5,
    Synth = 6,
    Split = 7,
}

/// One round of the splitmix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(((purpose as u64) << 32) ^ index))
}

pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

/// Generator for unit `unit` of a mask sampled with `mask_seed`.
pub fn unit_stream(mask_seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    rng.set_stream(unit);
    rng
}
