//! Counter-based random-number plumbing.
//!
//! Every stochastic routine in this crate takes either an explicit seed or
//! an explicit generator; there is no global RNG. Reproducibility across
//! worker counts comes from a counter-based construction: a master seed
//! plus a trial index select an independent ChaCha stream, so trial `k`
//! draws the same numbers whether it runs first, last, or on another
//! thread.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator handed to a single simulation trial.
pub type TrialRng = ChaCha8Rng;

/// SplitMix64 finalizer. Bijective on u64, used to decorrelate seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a salt.
///
/// Children with distinct salts are statistically independent; the mapping
/// is pure, so any worker can recompute it.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    splitmix64(master ^ splitmix64(salt))
}

/// Generator for one trial: stream `trial_index` of the master-seeded
/// cipher. Trials never share a stream, whatever order they run in.
pub fn trial_rng(master_seed: u64, trial_index: u32) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::from(trial_index));
    rng
}

/// Generator for non-trial sampling tasks (particle synthesis, bootstrap
/// resampling). Uses a stream outside the 32-bit trial range so it can
/// never collide with [`trial_rng`].
pub fn task_rng(seed: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(u32::MAX) + 1);
    rng
}
