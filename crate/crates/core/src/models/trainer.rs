use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cnn::{effective_alpha, pretrained_table, CnnModel, NetworkSpec};
use super::{epoch_rng, Example};
use crate::act2vec::EmbeddingSpace;
use crate::domain::SymbolId;
use crate::error::{Error, Result};
use crate::eval::{confusion, multiclass_metrics};
use crate::nn::{adam_step, AdamState, Mode};
use crate::persist::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l1: f64,
    pub l2: f64,
    /// One weight per network task; uniform when absent.
    pub alpha: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            l1: 0.25,
            l2: 0.25,
            alpha: None,
            seed: 7,
        }
    }
}

impl CnnTrainConfig {
    pub fn alpha_for(&self, n_tasks: usize) -> Vec<f64> {
        self.alpha
            .clone()
            .unwrap_or_else(|| vec![1.0 / n_tasks as f64; n_tasks])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective.
    pub loss: f64,
    /// Mean per-task loss over the batches where the task was present.
    pub task_losses: Vec<Option<f64>>,
    /// Mean macro-F1 over tasks labeled in the dev set.
    pub dev_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedCnn {
    pub model: CnnModel,
    pub trace: Vec<EpochRecord>,
    /// Epoch whose dev score selected the returned model.
    pub best_epoch: Option<usize>,
}

/// Resumable training state. Each epoch draws its shuffle and dropout masks
/// from a generator keyed by `(seed, epoch)`, so stopping after any epoch
/// and resuming from a checkpoint replays the same run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: CnnModel,
    pub adam: AdamState,
    pub cfg: CnnTrainConfig,
    pub epoch: usize,
    pub trace: Vec<EpochRecord>,
    pub best: Option<(usize, f64, CnnModel)>,
}

fn labeled_for(model: &CnnModel, ex: &Example) -> bool {
    model
        .spec
        .tasks
        .iter()
        .any(|t| ex.labels[t.index()].is_some())
}

impl Trainer {
    pub fn new(model: CnnModel, cfg: CnnTrainConfig) -> Result<Self> {
        let alpha = cfg.alpha_for(model.spec.tasks.len());
        effective_alpha(&vec![true; model.spec.tasks.len()], &alpha)?;
        if cfg.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if cfg.l1 < 0.0 || cfg.l2 < 0.0 {
            return Err(Error::InvalidConfig(
                "regularization strengths must be non-negative".into(),
            ));
        }
        Ok(Self {
            adam: AdamState::new(cfg.lr),
            model,
            cfg,
            epoch: 0,
            trace: Vec::new(),
            best: None,
        })
    }

    pub fn run_epoch(&mut self, train: &[Example], dev: Option<&[Example]>) -> Result<EpochRecord> {
        let alpha = self.cfg.alpha_for(self.model.spec.tasks.len());
        let mut order: Vec<usize> = (0..train.len())
            .filter(|&i| labeled_for(&self.model, &train[i]))
            .collect();
        if order.is_empty() {
            return Err(Error::NoLabeledSubjects);
        }
        let mut rng = epoch_rng(self.cfg.seed, self.epoch);
        order.shuffle(&mut rng);

        let n_tasks = self.model.heads.len();
        let mut loss_sum = 0.0;
        let mut task_sums = vec![(0.0, 0usize); n_tasks];
        let batches = order.chunks(self.cfg.batch_size);
        let n_batches = batches.len();
        for chunk in batches {
            let ids: Vec<&[SymbolId]> = chunk.iter().map(|&i| train[i].ids.as_slice()).collect();
            let labels: Vec<[Option<u8>; 4]> = chunk.iter().map(|&i| train[i].labels).collect();
            self.model.zero_grad();
            let probs = self.model.forward(&ids, Mode::Train, &mut rng)?;
            let obj = self
                .model
                .objective(&probs, &labels, &alpha, self.cfg.l1, self.cfg.l2)?;
            if !obj.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {}",
                    self.epoch
                )));
            }
            self.model.backward(&obj);
            let mut params: Vec<_> = self
                .model
                .params_mut()
                .into_iter()
                .map(|(_, p)| p)
                .collect();
            adam_step(&mut params, &mut self.adam)?;
            loss_sum += obj.loss;
            for (acc, l) in task_sums.iter_mut().zip(&obj.task_losses) {
                if let Some(l) = l {
                    acc.0 += l;
                    acc.1 += 1;
                }
            }
        }

        let dev_score = match dev {
            Some(d) => self.dev_score(d)?,
            None => None,
        };
        let record = EpochRecord {
            epoch: self.epoch,
            loss: loss_sum / n_batches as f64,
            task_losses: task_sums
                .iter()
                .map(|&(s, n)| (n > 0).then(|| s / n as f64))
                .collect(),
            dev_score,
        };
        if let Some(score) = dev_score {
            if self.best.as_ref().is_none_or(|b| score > b.1) {
                self.best = Some((self.epoch, score, self.model.clone()));
            }
        }
        self.epoch += 1;
        self.trace.push(record.clone());
        Ok(record)
    }

    pub fn run(&mut self, train: &[Example], dev: Option<&[Example]>, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            self.run_epoch(train, dev)?;
        }
        Ok(())
    }

    /// Mean macro-F1 over tasks with at least one dev label.
    pub fn dev_score(&mut self, dev: &[Example]) -> Result<Option<f64>> {
        if dev.is_empty() {
            return Ok(None);
        }
        let preds = self.model.predict_examples(dev, self.cfg.batch_size)?;
        let mut scores = Vec::new();
        for (task, p) in self.model.spec.tasks.iter().zip(&preds) {
            let (pp, gg): (Vec<usize>, Vec<usize>) = dev
                .iter()
                .zip(p)
                .filter_map(|(e, &p)| e.label(*task).map(|g| (p, g)))
                .unzip();
            if !gg.is_empty() {
                scores.push(multiclass_metrics(&confusion(&pp, &gg, task.n_classes())?).macro_f1);
            }
        }
        Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
    }

    pub fn finish(self) -> TrainedCnn {
        match self.best {
            Some((epoch, _, model)) => TrainedCnn {
                model,
                trace: self.trace,
                best_epoch: Some(epoch),
            },
            None => TrainedCnn {
                model: self.model,
                trace: self.trace,
                best_epoch: None,
            },
        }
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let mut tensors = self.model.tensors("model.");
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            tensors.push((format!("adam.m.{i}"), m.clone()));
            tensors.push((format!("adam.v.{i}"), v.clone()));
        }
        let best = self.best.as_mut().map(|(epoch, score, model)| {
            tensors.extend(model.tensors("best."));
            serde_json::json!({ "epoch": epoch, "score": score })
        });
        Checkpoint {
            header: serde_json::json!({
                "kind": "cnn-trainer",
                "spec": self.model.spec,
                "cfg": self.cfg,
                "epoch": self.epoch,
                "trace": self.trace,
                "adam": {
                    "lr": self.adam.lr,
                    "beta1": self.adam.beta1,
                    "beta2": self.adam.beta2,
                    "eps": self.adam.eps,
                    "step": self.adam.step,
                    "moments": self.adam.m.len(),
                },
                "best": best,
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        if h.get("kind").and_then(|k| k.as_str()) != Some("cnn-trainer") {
            return Err(Error::HeaderMismatch(
                "checkpoint does not hold a training run".into(),
            ));
        }
        let spec: NetworkSpec = serde_json::from_value(h["spec"].clone())?;
        let cfg: CnnTrainConfig = serde_json::from_value(h["cfg"].clone())?;
        let mut model = CnnModel::new(spec.clone(), 0, None)?;
        model.load_tensors(ckpt, "model.")?;
        let mut trainer = Self::new(model, cfg)?;
        trainer.epoch = serde_json::from_value(h["epoch"].clone())?;
        trainer.trace = serde_json::from_value(h["trace"].clone())?;

        let a = &h["adam"];
        trainer.adam.lr = serde_json::from_value(a["lr"].clone())?;
        trainer.adam.beta1 = serde_json::from_value(a["beta1"].clone())?;
        trainer.adam.beta2 = serde_json::from_value(a["beta2"].clone())?;
        trainer.adam.eps = serde_json::from_value(a["eps"].clone())?;
        trainer.adam.step = serde_json::from_value(a["step"].clone())?;
        let moments: usize = serde_json::from_value(a["moments"].clone())?;
        for i in 0..moments {
            for (key, dst) in [("m", &mut trainer.adam.m), ("v", &mut trainer.adam.v)] {
                let name = format!("adam.{key}.{i}");
                let t = ckpt.tensor(&name).ok_or_else(|| {
                    Error::HeaderMismatch(format!("checkpoint lacks tensor `{name}`"))
                })?;
                dst.push(t.clone());
            }
        }

        if !h["best"].is_null() {
            let epoch: usize = serde_json::from_value(h["best"]["epoch"].clone())?;
            let score: f64 = serde_json::from_value(h["best"]["score"].clone())?;
            let mut best = CnnModel::new(spec, 0, None)?;
            best.load_tensors(ckpt, "best.")?;
            trainer.best = Some((epoch, score, best));
        }
        Ok(trainer)
    }
}

/// Trains a network on the examples labeled for any of its tasks. With a
/// dev set the returned model is the one from the best dev epoch.
pub fn train_model(
    spec: NetworkSpec,
    train: &[Example],
    dev: Option<&[Example]>,
    cfg: &CnnTrainConfig,
    pretrained: Option<&EmbeddingSpace>,
) -> Result<TrainedCnn> {
    spec.validate()?;
    let table = pretrained
        .map(|s| pretrained_table(s, spec.vocab, spec.embed_dim))
        .transpose()?;
    let model = CnnModel::new(spec, cfg.seed, table)?;
    if !train.iter().any(|e| labeled_for(&model, e)) {
        return Err(Error::NoLabeledSubjects);
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.run(train, dev, cfg.epochs)?;
    Ok(trainer.finish())
}
