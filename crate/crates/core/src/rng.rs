//! Seeded random streams.
//!
//! Every random consumer owns an independent xoshiro256** stream whose seed
//! is derived from a master seed and a list of labels (component name,
//! dataset, fold, model family, ...). Derivation is a fixed FNV-1a/SplitMix64
//! construction, so seeds are stable across platforms and releases and adding
//! a new label combination never perturbs existing ones.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Stream = Xoshiro256StarStar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Derives a child seed from `master` and an ordered list of labels.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = splitmix64(master);
    for label in labels {
        // Length-prefix so ("ab", "c") and ("a", "bc") differ.
        h = splitmix64(h ^ (label.len() as u64));
        h = splitmix64(h ^ fnv1a(label.as_bytes()));
    }
    h
}

/// Opens the stream for `(component, seed)`.
pub fn stream(seed: u64, component: &str) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, &[component]))
}
