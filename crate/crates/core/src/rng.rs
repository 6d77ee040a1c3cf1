//! Per-unit random streams keyed by `(seed, index)`, so draws never depend on
//! scheduling or on how many units are generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type UnitRng = ChaCha8Rng;

pub fn unit_rng(seed: u64, index: u64) -> UnitRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
