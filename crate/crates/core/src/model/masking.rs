use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizerModel, MASK_ID, SPECIAL_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_fraction: f64,
    pub replace_with_mask: f64,
    pub random_token: f64,
    pub keep: f64,
    pub seed: u64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_fraction: 0.15,
            replace_with_mask: 0.8,
            random_token: 0.1,
            keep: 0.1,
            seed: 0,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<(), super::ModelError> {
        let parts = [self.mask_fraction, self.replace_with_mask, self.random_token, self.keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(super::ModelError::InvalidConfig("masking fractions must be in [0, 1]".into()));
        }
        if (self.replace_with_mask + self.random_token + self.keep - 1.0).abs() > 1e-9 {
            return Err(super::ModelError::InvalidConfig(
                "mask/random/keep fractions must sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<u32>,
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    /// Original token at each selected position.
    pub targets: Vec<u32>,
}

impl MaskedSequence {
    pub fn target_pairs(&self) -> Vec<(usize, u32)> {
        self.positions.iter().copied().zip(self.targets.iter().copied()).collect()
    }
}

/// Selects each non-special position independently with probability
/// `mask_fraction`, then replaces it with `[MASK]`, a random ordinary
/// token, or leaves it as is.
pub fn mask_sequence(ids: &[u32], policy: &MaskingPolicy, vocab_size: usize, rng: &mut impl Rng) -> MaskedSequence {
    let mut out = MaskedSequence {
        input_ids: ids.to_vec(),
        positions: Vec::new(),
        targets: Vec::new(),
    };
    let first_ordinary = SPECIAL_TOKENS.len() as u32;
    for (pos, &id) in ids.iter().enumerate() {
        if TokenizerModel::is_special(id) || !rng.random_bool(policy.mask_fraction) {
            continue;
        }
        out.positions.push(pos);
        out.targets.push(id);
        let r: f64 = rng.random();
        if r < policy.replace_with_mask {
            out.input_ids[pos] = MASK_ID;
        } else if r < policy.replace_with_mask + policy.random_token && vocab_size as u32 > first_ordinary {
            out.input_ids[pos] = rng.random_range(first_ordinary..vocab_size as u32);
        }
    }
    out
}

/// Masks a batch; sequence `i` uses an RNG derived from `(policy.seed, salt, i)`.
pub fn mask_batch(batch: &[Vec<u32>], policy: &MaskingPolicy, vocab_size: usize, salt: u64) -> Vec<MaskedSequence> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ids)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(policy.seed, salt, i as u64));
            mask_sequence(ids, policy, vocab_size, &mut rng)
        })
        .collect()
}

/// SplitMix64-style combination of three words into one seed.
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(c.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
