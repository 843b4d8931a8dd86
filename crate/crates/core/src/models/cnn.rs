use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, default_depth, epoch_rng, Example};
use crate::act2vec::EmbeddingSpace;
use crate::domain::{SymbolId, Task};
use crate::error::{Error, Result};
use crate::nn::{
    ce_elasticnet, softmax, AvgPool, BatchNorm, Conv1d, Dense, Differentiable, Dropout, Embedding,
    Mode, Param,
};
use crate::persist::Checkpoint;

/// Tolerance on `Σα = 1`.
pub const ALPHA_TOL: f64 = 1e-9;

/// Mixture weights in [`Task::ALL`] order for a randomly initialized embedding.
pub const ALPHA_RANDOM_INIT: [f64; 4] = [0.2, 0.2, 0.2, 0.4];

/// Mixture weights in [`Task::ALL`] order for a pretrained embedding:
/// (0.3, 0.25, 0.15, 0.35) rescaled, since those sum to 1.05.
pub fn alpha_pretrained() -> [f64; 4] {
    let raw = [0.3, 0.25, 0.15, 0.35];
    let sum: f64 = raw.iter().sum();
    raw.map(|a| a / sum)
}

/// Architecture: embedding, `depth` blocks of wide conv + ReLU, average
/// pooling and batch norm, a ReLU dense layer, dropout, and one zero-initialized
/// softmax head per task on the shared dense output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub vocab: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Defaults to the pool window.
    pub pool_stride: Option<usize>,
    pub hidden: usize,
    pub dropout: f64,
    pub tasks: Vec<Task>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            vocab: 0,
            seq_len: 0,
            embed_dim: 100,
            depth: 3,
            filters: 64,
            kernel: 5,
            pool: 4,
            pool_stride: None,
            hidden: 64,
            dropout: 0.5,
            tasks: vec![Task::Apnea],
        }
    }
}

impl NetworkSpec {
    /// Defaults for the given tasks, with the per-task depth.
    pub fn new(tasks: Vec<Task>, vocab: usize, seq_len: usize) -> Self {
        Self {
            vocab,
            seq_len,
            depth: default_depth(&tasks),
            tasks,
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        self.pool_stride.unwrap_or(self.pool)
    }

    /// Width of the flattened feature map fed to the dense layer.
    pub fn flat_len(&self) -> Result<usize> {
        let mut len = self.seq_len;
        let pool = AvgPool::new(self.pool, self.stride());
        for _ in 0..self.depth {
            len = len + self.kernel - 1;
            len = pool.out_len(len)?;
        }
        Ok(len * self.filters)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vocab == 0 || self.seq_len == 0 {
            return bad("network needs a vocabulary size and a sequence length");
        }
        if self.embed_dim == 0
            || self.depth == 0
            || self.filters == 0
            || self.kernel == 0
            || self.hidden == 0
        {
            return bad("layer sizes must be positive");
        }
        if self.pool == 0 || self.stride() == 0 {
            return bad("pool window and stride must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required");
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return bad("tasks must be distinct");
        }
        self.flat_len().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub pool: AvgPool,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub spec: NetworkSpec,
    pub embedding: Embedding,
    pub blocks: Vec<ConvBlock>,
    pub dense: Dense,
    pub dropout: Dropout,
    /// Aligned with `spec.tasks`.
    pub heads: Vec<Dense>,
    map_shape: (usize, usize, usize),
}

/// Mixture weights actually applied to a batch: the configured `alpha`
/// when every task is present, otherwise renormalized over present tasks.
pub fn effective_alpha(present: &[bool], alpha: &[f64]) -> Result<Vec<f64>> {
    if present.len() != alpha.len() {
        return Err(Error::LengthMismatch {
            expected: alpha.len(),
            got: present.len(),
        });
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "mixture weights must be non-negative, got {alpha:?}"
        )));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > ALPHA_TOL {
        return Err(Error::AlphaSumViolation(sum));
    }
    if present.iter().all(|&p| p) {
        return Ok(alpha.to_vec());
    }
    let mass: f64 = alpha
        .iter()
        .zip(present)
        .filter(|(_, &p)| p)
        .map(|(a, _)| a)
        .sum();
    Ok(alpha
        .iter()
        .zip(present)
        .map(|(&a, &p)| if p && mass > 0.0 { a / mass } else { 0.0 })
        .collect())
}

/// `Σ α_m L_m` over tasks with a loss; absent tasks (`None`) give their
/// weight to the present ones.
pub fn multitask_loss(losses: &[Option<f64>], alpha: &[f64]) -> Result<f64> {
    let present: Vec<bool> = losses.iter().map(Option::is_some).collect();
    let a = effective_alpha(&present, alpha)?;
    Ok(losses
        .iter()
        .zip(&a)
        .filter_map(|(l, w)| l.map(|l| w * l))
        .sum())
}

/// Symbol-level table of a sample-granularity space, checked against the
/// network's vocabulary and embedding width.
pub fn pretrained_table(space: &EmbeddingSpace, vocab: usize, dim: usize) -> Result<Array2<f64>> {
    let t = space.symbol_vectors().ok_or(Error::NoSymbolVectors)?;
    if t.nrows() != vocab {
        return Err(Error::DimensionMismatch {
            expected: vocab,
            got: t.nrows(),
        });
    }
    if t.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: t.ncols(),
        });
    }
    Ok(t.clone())
}

/// Loss of one batch and the logit gradients that realize it.
#[derive(Debug, Clone)]
pub(crate) struct BatchObjective {
    pub loss: f64,
    pub task_losses: Vec<Option<f64>>,
    d_logits: Vec<Option<Array2<f64>>>,
    d_weights: Vec<Option<Array2<f64>>>,
}

impl CnnModel {
    /// Fresh model. `E` is drawn from `U(-0.5/d, 0.5/d)` and then replaced by
    /// `embedding` when given, so other layers do not depend on the choice.
    pub fn new(spec: NetworkSpec, seed: u64, embedding: Option<Array2<f64>>) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut emb = Embedding::random(spec.vocab, spec.embed_dim, &mut rng);
        if let Some(table) = embedding {
            if table.dim() != (spec.vocab, spec.embed_dim) {
                return Err(Error::DimensionMismatch {
                    expected: spec.embed_dim,
                    got: table.ncols(),
                });
            }
            emb = Embedding::new(table);
        }
        let mut c_in = spec.embed_dim;
        let blocks = (0..spec.depth)
            .map(|_| {
                let conv = Conv1d::wide(c_in, spec.filters, spec.kernel, &mut rng);
                c_in = spec.filters;
                ConvBlock {
                    conv,
                    pool: AvgPool::new(spec.pool, spec.stride()),
                    bn: BatchNorm::new(spec.filters),
                }
            })
            .collect();
        let dense = Dense::random(spec.flat_len()?, spec.hidden, true, &mut rng);
        let heads = spec
            .tasks
            .iter()
            .map(|t| Dense::zeros(spec.hidden, t.n_classes(), false))
            .collect();
        Ok(Self {
            dropout: Dropout::new(spec.dropout)?,
            spec,
            embedding: emb,
            blocks,
            dense,
            heads,
            map_shape: (0, 0, 0),
        })
    }

    /// Named parameters in update order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out: Vec<(String, &mut Param)> = vec![("E".into(), &mut self.embedding.table)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("conv{i}.U"), &mut b.conv.weight));
            out.push((format!("conv{i}.b"), &mut b.conv.bias));
            out.push((format!("bn{i}.gamma"), &mut b.bn.gamma));
            out.push((format!("bn{i}.beta"), &mut b.bn.beta));
        }
        out.push(("dense.V".into(), &mut self.dense.weight));
        out.push(("dense.b".into(), &mut self.dense.bias));
        for (t, h) in self.spec.tasks.iter().zip(&mut self.heads) {
            out.push((format!("head.{t}.W"), &mut h.weight));
            out.push((format!("head.{t}.b"), &mut h.bias));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Per-task class probabilities for a batch of equal-length sequences.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &[&[SymbolId]],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<Array2<f64>>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(s) = batch.iter().find(|s| s.len() != self.spec.seq_len) {
            return Err(Error::LengthMismatch {
                expected: self.spec.seq_len,
                got: s.len(),
            });
        }
        let mut h = self.embedding.forward(batch)?;
        for b in &mut self.blocks {
            h = b.conv.forward(&h)?;
            h = b.pool.forward(&h)?;
            h = b.bn.forward3(&h, mode)?;
        }
        self.map_shape = h.dim();
        let (n, l, c) = self.map_shape;
        let flat = h
            .into_shape_with_order((n, l * c))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let z = self.dense.forward(&flat)?;
        let z = self.dropout.forward(&z, mode, rng);
        let mut out = Vec::with_capacity(self.heads.len());
        for h in &mut self.heads {
            let p = softmax(&h.forward(&z)?);
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("class probabilities".into()));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Cross-entropy with elastic net on each head, over the rows labeled
    /// for that head's task, mixed by `alpha`.
    pub(crate) fn objective(
        &self,
        probs: &[Array2<f64>],
        labels: &[[Option<u8>; 4]],
        alpha: &[f64],
        l1: f64,
        l2: f64,
    ) -> Result<BatchObjective> {
        let mut task_losses = Vec::with_capacity(self.heads.len());
        let mut per_task = Vec::with_capacity(self.heads.len());
        for ((task, head), p) in self.spec.tasks.iter().zip(&self.heads).zip(probs) {
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i][task.index()].is_some())
                .collect();
            if rows.is_empty() {
                task_losses.push(None);
                per_task.push(None);
                continue;
            }
            let gold: Vec<usize> = rows
                .iter()
                .map(|&i| labels[i][task.index()].expect("filtered") as usize)
                .collect();
            let ce = ce_elasticnet(&p.select(Axis(0), &rows), &gold, &head.weight.value, l1, l2)?;
            task_losses.push(Some(ce.loss));
            per_task.push(Some((rows, ce)));
        }
        let loss = multitask_loss(&task_losses, alpha)?;
        let present: Vec<bool> = task_losses.iter().map(Option::is_some).collect();
        let weights = effective_alpha(&present, alpha)?;
        let mut d_logits = Vec::with_capacity(per_task.len());
        let mut d_weights = Vec::with_capacity(per_task.len());
        for ((entry, &w), p) in per_task.into_iter().zip(&weights).zip(probs) {
            match entry {
                Some((rows, ce)) if w > 0.0 => {
                    let mut d = Array2::zeros(p.raw_dim());
                    for (r, &i) in rows.iter().enumerate() {
                        d.row_mut(i).scaled_add(w, &ce.d_logits.row(r));
                    }
                    d_logits.push(Some(d));
                    d_weights.push(Some(ce.d_weights * w));
                }
                _ => {
                    d_logits.push(None);
                    d_weights.push(None);
                }
            }
        }
        Ok(BatchObjective {
            loss,
            task_losses,
            d_logits,
            d_weights,
        })
    }

    /// Accumulates gradients of a batch objective from the last forward pass.
    pub(crate) fn backward(&mut self, obj: &BatchObjective) {
        let mut dz: Option<Array2<f64>> = None;
        for ((head, d), dw) in self.heads.iter_mut().zip(&obj.d_logits).zip(&obj.d_weights) {
            let (Some(d), Some(dw)) = (d, dw) else {
                continue;
            };
            head.weight.grad += dw;
            let g = head.backward(d);
            dz = Some(match dz {
                None => g,
                Some(acc) => acc + g,
            });
        }
        let Some(dz) = dz else { return };
        let dz = self.dropout.backward(&dz);
        let dflat = self.dense.backward(&dz);
        let mut dh = dflat
            .into_shape_with_order(self.map_shape)
            .expect("flattened map shape");
        for b in self.blocks.iter_mut().rev() {
            dh = b.bn.backward3(&dh);
            dh = b.pool.backward(&dh);
            dh = b.conv.backward(&dh);
        }
        self.embedding.backward(&dh);
    }

    /// Eval-mode probabilities, `batch` sequences at a time.
    pub fn probabilities(
        &mut self,
        seqs: &[&[SymbolId]],
        batch: usize,
    ) -> Result<Vec<Array2<f64>>> {
        let mut out: Vec<Vec<Array2<f64>>> = vec![Vec::new(); self.heads.len()];
        // dropout is inactive in eval mode, so the generator is never drawn
        let mut rng = epoch_rng(0, 0);
        for chunk in seqs.chunks(batch.max(1)) {
            for (acc, p) in out
                .iter_mut()
                .zip(self.forward(chunk, Mode::Eval, &mut rng)?)
            {
                acc.push(p);
            }
        }
        out.into_iter()
            .map(|parts| {
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                ndarray::concatenate(Axis(0), &views)
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))
            })
            .collect()
    }

    /// Predicted class per task (outer) and sequence (inner).
    pub fn predict(&mut self, seqs: &[&[SymbolId]], batch: usize) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .probabilities(seqs, batch)?
            .iter()
            .map(|p| {
                p.rows()
                    .into_iter()
                    .map(|r| argmax(r.iter().copied()))
                    .collect()
            })
            .collect())
    }

    pub fn predict_examples(
        &mut self,
        examples: &[Example],
        batch: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let ids: Vec<&[SymbolId]> = examples.iter().map(|e| e.ids.as_slice()).collect();
        self.predict(&ids, batch)
    }

    pub fn head_index(&self, task: Task) -> Option<usize> {
        self.spec.tasks.iter().position(|&t| t == task)
    }

    /// Parameters and batch-norm running statistics as named matrices.
    pub fn tensors(&mut self, prefix: &str) -> Vec<(String, Array2<f64>)> {
        let mut out: Vec<(String, Array2<f64>)> = self
            .params_mut()
            .into_iter()
            .map(|(n, p)| (format!("{prefix}{n}"), p.value.clone()))
            .collect();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((
                format!("{prefix}bn{i}.running_mean"),
                b.bn.running_mean.clone().insert_axis(Axis(0)),
            ));
            out.push((
                format!("{prefix}bn{i}.running_var"),
                b.bn.running_var.clone().insert_axis(Axis(0)),
            ));
        }
        out
    }

    /// Overwrites every tensor from `ckpt` entries named `prefix + name`.
    pub fn load_tensors(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<()> {
        let fetch = |name: &str, shape: (usize, usize)| -> Result<Array2<f64>> {
            let key = format!("{prefix}{name}");
            let t = ckpt
                .tensor(&key)
                .ok_or_else(|| Error::HeaderMismatch(format!("checkpoint lacks tensor `{key}`")))?;
            if t.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{key}` is {:?}, expected {shape:?}",
                    t.dim()
                )));
            }
            Ok(t.clone())
        };
        for (name, p) in self.params_mut() {
            p.value = fetch(&name, p.value.dim())?;
            p.zero_grad();
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let f = b.bn.features();
            b.bn.running_mean = fetch(&format!("bn{i}.running_mean"), (1, f))?
                .row(0)
                .to_owned();
            b.bn.running_var = fetch(&format!("bn{i}.running_var"), (1, f))?
                .row(0)
                .to_owned();
        }
        Ok(())
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        Checkpoint {
            header: serde_json::json!({ "kind": "cnn", "spec": self.spec }),
            tensors: self.tensors(""),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header.get("kind").and_then(|k| k.as_str()) != Some("cnn") {
            return Err(Error::HeaderMismatch(
                "checkpoint does not hold a model".into(),
            ));
        }
        let spec: NetworkSpec = serde_json::from_value(ckpt.header["spec"].clone())?;
        let mut model = Self::new(spec, 0, None)?;
        model.load_tensors(ckpt, "")?;
        Ok(model)
    }
}

/// A model bound to one fixed batch, exposing the training objective to
/// the gradient checker. Dropout masks come from a fixed seed so the loss
/// is a deterministic function of the parameters.
pub struct CnnObjective {
    pub model: CnnModel,
    pub batch: Vec<Example>,
    pub alpha: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
    pub dropout_seed: u64,
}

impl CnnObjective {
    fn run(&mut self, grads: bool) -> Result<f64> {
        let ids: Vec<&[SymbolId]> = self.batch.iter().map(|e| e.ids.as_slice()).collect();
        let labels: Vec<[Option<u8>; 4]> = self.batch.iter().map(|e| e.labels).collect();
        let mut rng = epoch_rng(self.dropout_seed, 0);
        let probs = self.model.forward(&ids, Mode::Train, &mut rng)?;
        let obj = self
            .model
            .objective(&probs, &labels, &self.alpha, self.l1, self.l2)?;
        if grads {
            self.model.backward(&obj);
        }
        Ok(obj.loss)
    }
}

impl Differentiable for CnnObjective {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.model.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        self.run(false)
    }

    fn loss_and_grads(&mut self) -> Result<f64> {
        self.model.zero_grad();
        self.run(true)
    }
}
