use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Majority,
    Random,
}

/// Most frequent label, lowest id on ties.
pub fn majority_class(labels: &[usize], n_classes: usize) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::NoLabeledSubjects);
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: n_classes,
            });
        }
        counts[l] += 1;
    }
    let max = *counts.iter().max().expect("at least one class");
    Ok(counts
        .iter()
        .position(|&c| c == max)
        .expect("max is present"))
}

/// Predictions for `n_eval` items: a constant majority class, or uniform
/// seeded draws.
pub fn baseline_predict(
    mode: Baseline,
    train_labels: &[usize],
    n_classes: usize,
    n_eval: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    match mode {
        Baseline::Majority => Ok(vec![majority_class(train_labels, n_classes)?; n_eval]),
        Baseline::Random => {
            if n_classes == 0 {
                return Err(Error::InvalidConfig("no classes to draw from".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n_eval)
                .map(|_| rng.random_range(0..n_classes))
                .collect())
        }
    }
}
