use std::path::PathBuf;

use acton::domain::{SymbolId, Vocabulary};
use acton::ingest::load_dataset;
use acton::models::{argmax, CnnModel};
use acton::persist::{Checkpoint, CHECKPOINT_MAGIC};
use clap::Args;

use super::linear::LinearModel;
use super::NoSettings;
use crate::failure::{CmdResult, Failure};
use crate::manifest::{beside, Recorder};
use crate::settings::{layered, read_config};
use crate::tables::{read_features, write_predictions, Prediction};
use crate::Global;

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint from train-cnn/train-multi or JSON from train-linear
    #[arg(long)]
    model: PathBuf,
    /// Activity files, for network models
    #[arg(long, num_args = 1..)]
    activity: Vec<PathBuf>,
    /// Feature CSV, for linear models
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Predictions CSV to write
    #[arg(long)]
    out: PathBuf,
}

pub fn run(g: &Global, a: InferArgs) -> CmdResult {
    let settings: NoSettings = layered(NoSettings {}, &read_config(g.config.as_deref())?)?;
    let mut rec = Recorder::new("infer");
    rec.input(&a.model)?;
    let bytes = std::fs::read(&a.model).map_err(|e| Failure::data(&a.model, e))?;
    let preds = if bytes.starts_with(CHECKPOINT_MAGIC) {
        if a.activity.is_empty() {
            return Err(Failure::Usage("a network model needs --activity".into()));
        }
        rec.inputs(&a.activity)?;
        network(&Checkpoint::from_bytes(&bytes)?, &a)?
    } else {
        let features = a
            .features
            .as_deref()
            .ok_or_else(|| Failure::Usage("a linear model needs --features".into()))?;
        rec.input(features)?;
        let m: LinearModel =
            serde_json::from_slice(&bytes).map_err(|e| Failure::data(&a.model, e))?;
        let table = read_features(features)?;
        table
            .subjects
            .iter()
            .zip(&table.rows)
            .map(|(sid, row)| {
                let scores = m.model.scores(row)?;
                Ok(Prediction {
                    subject_id: sid.clone(),
                    task: m.task,
                    class: argmax(scores.iter().copied()),
                    scores,
                })
            })
            .collect::<CmdResult<Vec<_>>>()?
    };
    write_predictions(&a.out, &preds)?;
    rec.output(&a.out);
    rec.finish(&settings, &beside(&a.out))?;
    println!("{} predictions -> {}", preds.len(), a.out.display());
    Ok(())
}

fn network(ckpt: &Checkpoint, a: &InferArgs) -> CmdResult<Vec<Prediction>> {
    let mut model = CnnModel::from_checkpoint(ckpt)?;
    let h = &ckpt.header;
    let missing = |k: &str| acton::Error::HeaderMismatch(format!("model header lacks `{k}`"));
    let mut vocab: Vocabulary =
        serde_json::from_value(h.get("vocab").ok_or_else(|| missing("vocab"))?.clone())
            .map_err(acton::Error::from)?;
    vocab.reindex();
    let seq_len = h
        .get("seq_len")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| missing("seq_len"))? as usize;
    let period = h.get("sampling_period_s").and_then(|v| v.as_u64());

    let mut ds = load_dataset(&a.activity, None)?;
    if let Some(p) = period {
        ds.sampling_period_s = u32::try_from(p).map_err(|_| missing("sampling_period_s"))?;
    }
    let seqs = ds.encode(&vocab, seq_len);
    let ids: Vec<&[SymbolId]> = seqs.iter().map(|s| s.symbols.as_slice()).collect();
    let probs = model.probabilities(&ids, a.batch_size)?;
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        for (task, p) in model.spec.tasks.iter().zip(&probs) {
            let scores: Vec<f64> = p.row(i).to_vec();
            out.push(Prediction {
                subject_id: s.subject_id.clone(),
                task: *task,
                class: argmax(scores.iter().copied()),
                scores,
            });
        }
    }
    Ok(out)
}
