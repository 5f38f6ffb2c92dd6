//! Keyed `(t, ε)` draws.
//!
//! Every draw is generated from its own ChaCha stream whose 256-bit key is
//! `(seed, stream tag, group, index)`. Draws therefore depend only on those
//! indices, never on the order in which groups or captions are visited.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{NoiseDraw, NoiseSharing, ScoringConfig};

const SHARED_TAG: u64 = 0x5348_4152_4544; // "SHARED"
const GROUP_TAG: u64 = 0x4752_4f55_50; // "GROUP"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DrawKey {
    seed: u64,
    tag: u64,
    group: u64,
}

impl DrawKey {
    /// One sequence shared by every group of an object.
    pub fn shared(seed: u64) -> Self {
        DrawKey {
            seed,
            tag: SHARED_TAG,
            group: 0,
        }
    }

    /// Independent sequence per group.
    pub fn per_group(seed: u64, group: u32) -> Self {
        DrawKey {
            seed,
            tag: GROUP_TAG,
            group: group as u64,
        }
    }

    pub fn for_config(config: &ScoringConfig, group: u32) -> Self {
        match config.noise_sharing {
            NoiseSharing::PerObject => DrawKey::shared(config.seed),
            NoiseSharing::PerView => DrawKey::per_group(config.seed, group),
        }
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.tag.to_le_bytes());
        key[16..24].copy_from_slice(&self.group.to_le_bytes());
        key[24..].copy_from_slice(&(index as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Draw `index` of the sequence identified by `key`: `t ~ U[0, 1)`, `ε ~ N(0, I_dim)`.
pub fn noise_draw(key: DrawKey, index: usize, dim: usize) -> NoiseDraw {
    let mut rng = key.rng(index);
    let t: f64 = rng.random();
    let epsilon = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    NoiseDraw { index, t, epsilon }
}

pub fn draw_sequence(key: DrawKey, count: usize, dim: usize) -> Vec<NoiseDraw> {
    (0..count).map(|k| noise_draw(key, k, dim)).collect()
}
