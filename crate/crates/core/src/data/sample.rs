use serde::{Deserialize, Serialize};

use super::container::DatasetSplit;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stratified few-shot selection from a training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSample {
    pub shots_per_class: usize,
    pub seed: u64,
    /// Selected split indices, grouped by ascending class.
    pub indices: Vec<usize>,
}

/// Draws `min(k, available)` indices per class without replacement.
pub fn few_shot_sample(split: &DatasetSplit, k: usize, seed: u64) -> Result<FewShotSample> {
    let mut rng = Rng::new(seed);
    let indices = few_shot_indices(split, k, &mut rng)?;
    Ok(FewShotSample {
        shots_per_class: k,
        seed,
        indices,
    })
}

/// Stratified draw from an existing stream; used when sampling is one step
/// of a larger seeded run.
pub fn few_shot_indices(split: &DatasetSplit, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Usage("shots per class must be at least 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); split.class_count()];
    for i in 0..split.len() {
        by_class[split.label(i)].push(i);
    }
    let mut out = Vec::new();
    for (class, mut pool) in by_class.into_iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::Sampling { class });
        }
        let take = k.min(pool.len());
        // Partial Fisher-Yates: the first `take` slots end up a uniform draw.
        for i in 0..take {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        out.extend_from_slice(&pool[..take]);
    }
    Ok(out)
}
