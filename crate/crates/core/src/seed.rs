//! Named sub-seeds so every random draw in the pipeline can be replayed from
//! the one run seed plus a path like `("fire", 3) / ("aug", 17)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the `index`-th draw of stream `label` under `parent`.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label keeps streams with different names apart.
    let tag = label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3));
    splitmix64(splitmix64(parent ^ tag).wrapping_add(index))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
