//! Named, seedable random streams.
//!
//! Every consumer of randomness (channel noise, SNR sampling, shuffling,
//! initialization, cropping) owns its own stream derived from a base seed, a
//! stream tag and a list of indices. Derivation is a pure function, so work
//! can be split across threads in any order with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stream in the crate.
pub type Stream = ChaCha8Rng;

/// Stream tags. Distinct tags give statistically independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Init = 1,
    Snr = 2,
    ChannelNoise = 3,
    Shuffle = 4,
    Crop = 5,
    EvalChannel = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed, a tag and indices into a 64-bit stream seed.
pub fn derive_seed(seed: u64, tag: StreamTag, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(tag as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA5A5_A5A5)));
    }
    h
}

pub fn stream(seed: u64, tag: StreamTag, indices: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tag, indices))
}
