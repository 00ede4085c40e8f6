//! Seed derivation.
//!
//! One master seed expands into independent per-component streams through a
//! labelled hash, so that e.g. changing how many augmentation draws a run makes
//! never perturbs weight initialisation. The hash is fixed (FNV-1a followed by
//! a SplitMix64 finaliser) and therefore stable across platforms and compiler
//! versions, unlike `std::hash`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a textual label.
pub fn derive(parent: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in parent.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

/// Derives a child seed from `parent` and a numeric index.
pub fn derive_index(parent: u64, index: u64) -> u64 {
    splitmix(parent ^ splitmix(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-component seeds of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub init: u64,
    pub augment: u64,
    pub mining: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            data: derive(master, "data"),
            init: derive(master, "init"),
            augment: derive(master, "augment"),
            mining: derive(master, "mining"),
        }
    }
}
