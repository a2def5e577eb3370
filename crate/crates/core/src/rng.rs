//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha20 stream keyed by the run
//! seed and selected by a stream index (normally the draw index), so a draw is
//! reproducible on its own, whatever order or thread it runs on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha20Rng;

pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
