//! Seeded generators.
//!
//! Every stochastic step draws from a ChaCha8 stream built with
//! `seed_from_u64`. A Bernoulli(p) trial is one `f64` sample `u` in `[0, 1)`
//! with success iff `u < p`, so `p = 0` never fires and `p = 1` always does.
//! Because the same seed yields the same `u` sequence at every level, the set
//! of slots spaced at a lower `p` is contained in the set spaced at a higher
//! `p` for random-slot fragmentation. Changing any of this changes every
//! stored sweep, so it is kept fixed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from `seed` for a named purpose, so that
/// e.g. needle sampling never shares draws with target selection.
pub fn derived(seed: u64, purpose: &str) -> SeededRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes().chain(seed.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub(crate) fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.gen::<f64>() < p
}
