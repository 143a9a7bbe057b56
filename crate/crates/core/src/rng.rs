//! Seed handling.
//!
//! Every random stream in the toolkit is a ChaCha8 generator keyed by a
//! 64-bit seed. Independent sub-streams (one per pulse sequence, per lag,
//! per replica) are derived with [`derive_seed`], so results never depend on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One round of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under `seed`: `splitmix64(seed ^ splitmix64(stream))`.
///
/// Worker/sequence `i` of a run seeded with `s` always uses
/// `derive_seed(s, i)`, whatever the worker count.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Chained derivation for nested streams, e.g. `(sparsity, trial, lag)`.
pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &p| derive_seed(s, p))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
