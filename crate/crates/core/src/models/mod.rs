//! Classifiers: baselines, one-vs-all logistic regression over embedding
//! features, and the convolutional network in single- and multi-task form.

mod baseline;
mod cnn;
mod logreg;
mod trainer;

pub use baseline::{baseline_predict, majority_class, Baseline};
pub use cnn::{
    alpha_pretrained, effective_alpha, multitask_loss, pretrained_table, CnnModel, CnnObjective,
    ConvBlock, NetworkSpec, ALPHA_RANDOM_INIT, ALPHA_TOL,
};
pub use logreg::{train_logreg, LogReg, LogRegConfig};
pub use trainer::{train_model, CnnTrainConfig, EpochRecord, TrainedCnn, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActivitySequence, SymbolId, Task};
use crate::ingest::Dataset;

/// One subject's encoded sequence and whatever labels it has.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub subject_id: String,
    pub ids: Vec<SymbolId>,
    pub labels: [Option<u8>; 4],
}

impl Example {
    pub fn label(&self, task: Task) -> Option<usize> {
        self.labels[task.index()].map(usize::from)
    }
}

/// Pairs encoded sequences with the dataset's labels; unlabeled subjects
/// get all-missing labels.
pub fn examples(seqs: &[ActivitySequence], ds: &Dataset) -> Vec<Example> {
    seqs.iter()
        .map(|s| Example {
            subject_id: s.subject_id.clone(),
            ids: s.symbols.clone(),
            labels: ds.label(&s.subject_id).map_or([None; 4], |r| r.labels),
        })
        .collect()
}

/// Per-task depths used when no depth is configured.
pub fn default_depth(tasks: &[Task]) -> usize {
    match tasks {
        [Task::Diabetes] => 4,
        _ => 3,
    }
}

/// Argmax with ties going to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Generator for one epoch of a seeded run: the same `(seed, epoch)`
/// always yields the same stream regardless of what ran before.
pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}
