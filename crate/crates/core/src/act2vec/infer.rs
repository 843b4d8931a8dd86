use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ns_sgd_step_frozen, smoothing_sgd_step};
use super::noise::{build_noise_table, NOISE_POWER};
use super::train::segment_neighbors;
use super::{init_table, EmbeddingSpace};
use crate::domain::{ActivitySequence, Granularity, Level};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub steps: usize,
    pub seed: u64,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            seed: 7,
            lr_start: 0.025,
            lr_end: 1e-4,
        }
    }
}

/// Fits segment vectors for a sequence against a frozen space.
///
/// Vectors start from the same uniform initialization as training and take
/// `steps` passes of segment-loss steps (plus smoothing when the space was
/// trained with it); output weights are never written. At sample level the
/// stored symbol vectors are returned as-is.
pub fn infer_sequence(
    space: &EmbeddingSpace,
    seq: &ActivitySequence,
    cfg: &InferConfig,
) -> Result<Vec<Vec<f64>>> {
    let g = Granularity::new(space.granularity.level, seq.sampling_period_s)?;
    if g != space.granularity || seq.sampling_period_s != space.sampling_period_s {
        return Err(Error::GranularityMismatch {
            space: format!("{} @ {}s", space.granularity, space.sampling_period_s),
            request: format!("{} @ {}s", g, seq.sampling_period_s),
        });
    }
    let v = space.vocab_len();
    if let Some(&bad) = seq.symbols.iter().find(|&&t| t as usize >= v) {
        return Err(Error::IdOutOfRange {
            id: bad as usize,
            rows: v,
        });
    }

    if g.level == Level::Sample {
        let table = space.symbol_vectors().ok_or(Error::NoSymbolVectors)?;
        return Ok(seq
            .symbols
            .iter()
            .map(|&t| table.row(t as usize).to_vec())
            .collect());
    }

    let k = g.segments_in(seq.len())?;
    let tc = &space.config;
    let d = space.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut table = init_table(k, d, &mut rng);
    if cfg.steps == 0 {
        return Ok(table.rows().into_iter().map(|r| r.to_vec()).collect());
    }

    let noise = build_noise_table(&space.symbol_counts, NOISE_POWER)?;
    let eta = if tc.objectives().smoothing {
        tc.effective_eta()
    } else {
        0.0
    };
    let l = g.samples_per_segment;
    let windows = l.div_ceil(tc.window);
    let total = (cfg.steps * k * windows).max(1) as f64;
    let mut done = 0usize;
    let mut scratch = vec![0.0; d];
    let mut negs = Vec::with_capacity(tc.negatives);

    for _ in 0..cfg.steps {
        for seg in 0..k {
            let neighbors = segment_neighbors(seg, k, tc.neighbor_set_size);
            let (s0, s1) = (seg * l, (seg + 1) * l);
            let mut start = s0;
            while start < s1 {
                let end = (start + tc.window).min(s1);
                let lr = cfg.lr_start - (cfg.lr_start - cfg.lr_end) * (done as f64 / total);
                done += 1;
                let target = seq.symbols[rng.random_range(start..end)] as usize;
                negs.clear();
                for _ in 0..tc.negatives {
                    let n = noise.sample(&mut rng);
                    if n != target {
                        negs.push(n);
                    }
                }
                let row = table.row_mut(seg).into_slice().expect("standard layout");
                ns_sgd_step_frozen(row, &space.symbol_out, target, &negs, lr, &mut scratch);
                if eta > 0.0 {
                    smoothing_sgd_step(&mut table, seg, &neighbors, eta, lr);
                }
                start = end;
            }
        }
    }
    let out: Vec<Vec<f64>> = table.rows().into_iter().map(|r| r.to_vec()).collect();
    if out.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("inferred segment vectors".into()));
    }
    Ok(out)
}
