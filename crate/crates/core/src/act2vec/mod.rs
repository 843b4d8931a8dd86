//! Unsupervised segment embeddings for activity sequences.
//!
//! Each sequence is cut into segments at a chosen granularity. A segment
//! vector is trained to predict symbols sampled from its own span, to
//! predict the ids of adjacent segments, and to stay close to those
//! neighbors. At sample granularity the model reduces to skip-gram over
//! symbols.

mod infer;
mod loss;
mod noise;
mod train;

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{concat_features, ActivitySequence, Granularity, Level};
use crate::error::{Error, Result};

pub use infer::{infer_sequence, InferConfig};
pub use loss::{
    loss_grad_neighbor, loss_grad_segment, loss_grad_smoothing, neg_log_sigmoid, ns_loss_grad,
    sigmoid, NsGradient,
};
pub use noise::{build_noise_table, NoiseTable, NOISE_POWER};
pub use train::{segment_neighbors, train, EpochLoss, Trained};

/// Which loss terms the trainer applies per sampled target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objectives {
    pub segment: bool,
    pub neighbor: bool,
    pub smoothing: bool,
}

impl Objectives {
    pub fn for_level(level: Level) -> Self {
        match level {
            // sample granularity is handled by the skip-gram path
            Level::Sample => Objectives {
                segment: false,
                neighbor: false,
                smoothing: false,
            },
            Level::Hour | Level::Day => Objectives {
                segment: true,
                neighbor: true,
                smoothing: true,
            },
            Level::Week => Objectives {
                segment: true,
                neighbor: false,
                smoothing: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub level: Level,
    pub dim: usize,
    /// Target window for segment levels, context radius at sample level.
    pub window: usize,
    pub negatives: usize,
    pub eta: f64,
    pub neighbor_set_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub convergence_tol: f64,
    /// Overrides the per-level loss selection.
    pub objectives: Option<Objectives>,
    /// 1 runs the deterministic single-writer trainer.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_level(Level::Day)
    }
}

impl TrainConfig {
    /// Tuned defaults for each level.
    pub fn for_level(level: Level) -> Self {
        let (window, eta) = match level {
            Level::Sample => (20, 0.0),
            Level::Hour => (20, 0.5),
            Level::Day => (30, 0.25),
            Level::Week => (50, 0.0),
        };
        Self {
            level,
            dim: 100,
            window,
            negatives: 5,
            eta,
            neighbor_set_size: 2,
            epochs: 20,
            lr_start: 0.025,
            lr_end: 1e-4,
            seed: 7,
            convergence_tol: 1e-4,
            objectives: None,
            threads: 1,
        }
    }

    pub fn objectives(&self) -> Objectives {
        self.objectives
            .unwrap_or_else(|| Objectives::for_level(self.level))
    }

    /// Smoothing strength actually applied; always 0 at week level.
    pub fn effective_eta(&self) -> f64 {
        if self.level == Level::Week {
            0.0
        } else {
            self.eta
        }
    }

    pub fn validate(&self, g: &Granularity) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if self.level != Level::Sample && self.window > g.samples_per_segment {
            return bad(format!(
                "window {} exceeds segment length {}",
                self.window, g.samples_per_segment
            ));
        }
        if self.negatives == 0 {
            return bad("negatives must be positive".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!(
                "eta must be a non-negative number, got {}",
                self.eta
            ));
        }
        if !matches!(self.neighbor_set_size, 2 | 4) {
            return bad(format!(
                "neighbor set size must be 2 or 4, got {}",
                self.neighbor_set_size
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return bad("learning rates must satisfy 0 < lr_end <= lr_start".into());
        }
        if self.threads == 0 {
            return bad("threads must be positive".into());
        }
        Ok(())
    }
}

/// Segment range of one subject inside the space's segment tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSegments {
    pub subject_id: String,
    pub first: usize,
    pub count: usize,
}

/// Learned tables: segment input vectors, segment and symbol output
/// weights, and (at sample level) symbol input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub(crate) granularity: Granularity,
    pub(crate) sampling_period_s: u32,
    pub(crate) dim: usize,
    pub(crate) segment_vectors: Array2<f64>,
    pub(crate) segment_out: Array2<f64>,
    pub(crate) symbol_vectors: Option<Array2<f64>>,
    pub(crate) symbol_out: Array2<f64>,
    pub(crate) symbol_counts: Vec<u64>,
    pub(crate) subjects: Vec<SubjectSegments>,
    pub(crate) subject_index: HashMap<String, usize>,
    pub(crate) config: TrainConfig,
    pub(crate) corpus_digest: String,
}

/// Uniform draw from (-0.5/d, 0.5/d) for every entry.
pub(crate) fn init_table<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let half = 0.5 / dim as f64;
    Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-half..half))
}

impl EmbeddingSpace {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        granularity: Granularity,
        sampling_period_s: u32,
        segment_vectors: Array2<f64>,
        segment_out: Array2<f64>,
        symbol_vectors: Option<Array2<f64>>,
        symbol_out: Array2<f64>,
        symbol_counts: Vec<u64>,
        subjects: Vec<SubjectSegments>,
        config: TrainConfig,
        corpus_digest: String,
    ) -> Result<Self> {
        let dim = symbol_out.ncols();
        let tables = [
            Some(&segment_vectors),
            Some(&segment_out),
            symbol_vectors.as_ref(),
        ];
        for t in tables.into_iter().flatten() {
            if t.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.ncols(),
                });
            }
        }
        if segment_vectors.nrows() != segment_out.nrows() {
            return Err(Error::ShapeMismatch(
                "segment tables differ in row count".into(),
            ));
        }
        if symbol_counts.len() != symbol_out.nrows() {
            return Err(Error::ShapeMismatch(
                "symbol counts do not match symbol table".into(),
            ));
        }
        let covered: usize = subjects.iter().map(|s| s.count).sum();
        if covered != segment_vectors.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "subject index covers {covered} segments, table has {}",
                segment_vectors.nrows()
            )));
        }
        let subject_index = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.subject_id.clone(), i))
            .collect();
        Ok(Self {
            granularity,
            sampling_period_s,
            dim,
            segment_vectors,
            segment_out,
            symbol_vectors,
            symbol_out,
            symbol_counts,
            subjects,
            subject_index,
            config,
            corpus_digest,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn sampling_period_s(&self) -> u32 {
        self.sampling_period_s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn corpus_digest(&self) -> &str {
        &self.corpus_digest
    }

    pub fn segment_vectors(&self) -> &Array2<f64> {
        &self.segment_vectors
    }

    pub fn segment_out(&self) -> &Array2<f64> {
        &self.segment_out
    }

    pub fn symbol_vectors(&self) -> Option<&Array2<f64>> {
        self.symbol_vectors.as_ref()
    }

    pub fn symbol_out(&self) -> &Array2<f64> {
        &self.symbol_out
    }

    pub fn symbol_counts(&self) -> &[u64] {
        &self.symbol_counts
    }

    pub fn subjects(&self) -> &[SubjectSegments] {
        &self.subjects
    }

    pub fn n_segments(&self) -> usize {
        self.segment_vectors.nrows()
    }

    pub fn vocab_len(&self) -> usize {
        self.symbol_out.nrows()
    }

    /// Mutable segment table, for tests and tooling that set vectors directly.
    pub fn segment_vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.segment_vectors
    }

    pub fn segment_out_mut(&mut self) -> &mut Array2<f64> {
        &mut self.segment_out
    }

    pub fn symbol_out_mut(&mut self) -> &mut Array2<f64> {
        &mut self.symbol_out
    }

    pub fn segment_row(&self, global_id: usize) -> Result<&[f64]> {
        if global_id >= self.segment_vectors.nrows() {
            return Err(Error::IdOutOfRange {
                id: global_id,
                rows: self.segment_vectors.nrows(),
            });
        }
        Ok(self
            .segment_vectors
            .row(global_id)
            .to_slice()
            .expect("standard layout"))
    }

    pub fn subject_segments(&self, subject_id: &str) -> Option<&SubjectSegments> {
        self.subject_index
            .get(subject_id)
            .map(|&i| &self.subjects[i])
    }

    /// Stored segment vectors of a training subject, in temporal order.
    pub fn subject_vectors(&self, subject_id: &str) -> Result<Vec<&[f64]>> {
        let s = self
            .subject_segments(subject_id)
            .ok_or_else(|| Error::UnknownSegment(subject_id.to_string()))?;
        (s.first..s.first + s.count)
            .map(|g| self.segment_row(g))
            .collect()
    }

    /// Untrained space over the given shape, initialized as training would.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        granularity: Granularity,
        sampling_period_s: u32,
        subjects: Vec<SubjectSegments>,
        symbol_counts: Vec<u64>,
        config: TrainConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dim = config.dim;
        let n_seg: usize = subjects.iter().map(|s| s.count).sum();
        let segment_vectors = init_table(n_seg, dim, rng);
        let segment_out = init_table(n_seg, dim, rng);
        let symbol_out = init_table(symbol_counts.len(), dim, rng);
        let symbol_vectors =
            (granularity.level == Level::Sample).then(|| init_table(symbol_counts.len(), dim, rng));
        Self::from_parts(
            granularity,
            sampling_period_s,
            segment_vectors,
            segment_out,
            symbol_vectors,
            symbol_out,
            symbol_counts,
            subjects,
            config,
            String::new(),
        )
    }
}

/// Feature vector of a sequence: its segment vectors concatenated in
/// temporal order. At sample level the symbol vectors of every position
/// are concatenated instead.
pub fn sequence_features(space: &EmbeddingSpace, seq: &ActivitySequence) -> Result<Vec<f64>> {
    if space.granularity.level == Level::Sample {
        let table = space.symbol_vectors().ok_or(Error::NoSymbolVectors)?;
        let rows = table.nrows();
        let mut out = Vec::with_capacity(seq.len() * space.dim);
        for &t in &seq.symbols {
            let t = t as usize;
            if t >= rows {
                return Err(Error::IdOutOfRange { id: t, rows });
            }
            out.extend(table.row(t).iter());
        }
        return Ok(out);
    }
    concat_features(&space.subject_vectors(&seq.subject_id)?)
}
