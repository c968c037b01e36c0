//! Seeded random streams. Every stochastic routine takes a [`SimRng`]
//! explicitly so runs are reproducible from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The simulation generator: ChaCha with 12 rounds, seeded from a `u64`.
pub type SimRng = ChaCha12Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Child seed for stream `index` of `master`. Two rounds of the splitmix64
/// finalizer, so neighbouring indices give unrelated seeds and the seed of
/// item `i` never depends on how many items are drawn.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child(master: u64, index: u64) -> SimRng {
    seeded(derive_seed(master, index))
}
