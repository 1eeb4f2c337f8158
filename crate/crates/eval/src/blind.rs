use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Source, Trial};

/// Server-side record of how one trial was shown to one rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindPresentation {
    pub trial_id: String,
    pub rater_id: String,
    /// `permutation[position]` is the index into `Trial::responses` shown there.
    pub permutation: [usize; 3],
    /// Source shown at each position. Never sent to raters.
    pub position_sources: [Source; 3],
    pub blinded_items: Vec<BlindedItem>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub position: usize,
    pub text: String,
}

/// What a rater is allowed to see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterView {
    pub trial_id: String,
    pub rater_id: String,
    pub query: String,
    pub items: Vec<BlindedItem>,
}

impl BlindPresentation {
    pub fn rater_view(&self, query: &str) -> RaterView {
        RaterView {
            trial_id: self.trial_id.clone(),
            rater_id: self.rater_id.clone(),
            query: query.to_string(),
            items: self.blinded_items.clone(),
        }
    }

    pub fn source_at(&self, position: usize) -> Option<Source> {
        self.position_sources.get(position).copied()
    }
}

/// Deterministic uniform permutation of three positions for one
/// (seed, rater, trial). Each triple gets its own ChaCha stream seeded from a
/// hash of the three, so permutations are independent across trials and
/// raters and do not depend on trial order.
pub fn permutation_for(seed: u64, rater_id: &str, trial_id: &str) -> [usize; 3] {
    let mut hasher = Sha256::new();
    hasher.update(b"blind-permutation-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((rater_id.len() as u64).to_le_bytes());
    hasher.update(rater_id.as_bytes());
    hasher.update((trial_id.len() as u64).to_le_bytes());
    hasher.update(trial_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut perm = [0usize, 1, 2];
    perm.shuffle(&mut rng);
    perm
}

/// One presentation per trial for `rater_id`.
pub fn blind_shuffle(trials: &[Trial], rater_id: &str, seed: u64) -> Vec<BlindPresentation> {
    trials
        .iter()
        .map(|trial| {
            let permutation = permutation_for(seed, rater_id, &trial.trial_id);
            let position_sources = permutation.map(|i| trial.responses[i].source);
            let blinded_items = permutation
                .iter()
                .enumerate()
                .map(|(position, &i)| BlindedItem {
                    position,
                    text: trial.responses[i].text.clone(),
                })
                .collect();
            BlindPresentation {
                trial_id: trial.trial_id.clone(),
                rater_id: rater_id.to_string(),
                permutation,
                position_sources,
                blinded_items,
                seed,
            }
        })
        .collect()
}

/// Split trials across raters in contiguous blocks of `per_rater`, in the
/// given trial order. Trials beyond `raters.len() * per_rater` are left out.
pub fn assign_raters(trial_ids: &[String], raters: &[String], per_rater: usize) -> BTreeMap<String, Vec<String>> {
    raters
        .iter()
        .enumerate()
        .map(|(i, rater)| {
            let start = (i * per_rater).min(trial_ids.len());
            let end = ((i + 1) * per_rater).min(trial_ids.len());
            (rater.clone(), trial_ids[start..end].to_vec())
        })
        .collect()
}
