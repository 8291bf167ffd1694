//! Seeded random streams. Every consumer of randomness draws from its own
//! ChaCha stream so that results do not depend on call order elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream used for parameter initialization.
pub const INIT_STREAM: u64 = u64::MAX;
/// Stream used by the synthetic data generator.
pub const DATA_STREAM: u64 = u64::MAX - 1;
/// Stream used for the labeled/test split of the target domain.
pub const SPLIT_STREAM: u64 = u64::MAX - 2;
/// Base of the streams used by the target-only baseline.
pub const BASELINE_STREAM: u64 = 1 << 62;

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
