use std::collections::BTreeMap;
use std::path::PathBuf;

use acton::domain::Task;
use acton::eval::{confusion, format_table, MetricsReport};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::linear::read_labels;
use super::{write_json, NoSettings};
use crate::failure::CmdResult;
use crate::manifest::{beside, Recorder};
use crate::settings::{layered, read_config};
use crate::tables::read_predictions;
use crate::Global;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction CSVs from `acton infer`
    #[arg(long, required = true, num_args = 1..)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    /// Report JSON to write
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEntry {
    pub predictions: String,
    pub task: Task,
    /// Predicted subjects without a label for the task.
    pub unlabeled: usize,
    pub report: MetricsReport,
}

pub fn run(g: &Global, a: EvalArgs) -> CmdResult {
    let settings: NoSettings = layered(NoSettings {}, &read_config(g.config.as_deref())?)?;
    let mut rec = Recorder::new("eval");
    rec.inputs(&a.predictions)?;
    rec.input(&a.labels)?;
    let labels = read_labels(&a.labels)?;

    let mut entries = Vec::new();
    for path in &a.predictions {
        let mut by_task: BTreeMap<Task, (Vec<usize>, Vec<usize>, usize)> = BTreeMap::new();
        for p in read_predictions(path)? {
            let slot = by_task.entry(p.task).or_default();
            match labels.get(&p.subject_id).and_then(|r| r.get(p.task)) {
                Some(gold) => {
                    slot.0.push(p.class);
                    slot.1.push(gold as usize);
                }
                None => slot.2 += 1,
            }
        }
        let stem = path
            .file_stem()
            .map_or(String::new(), |s| s.to_string_lossy().into_owned());
        for (task, (preds, golds, unlabeled)) in by_task {
            if golds.is_empty() {
                log::warn!("{}: no labeled subject for {task}", path.display());
                continue;
            }
            entries.push(EvalEntry {
                predictions: path.display().to_string(),
                task,
                unlabeled,
                report: MetricsReport::from_confusions(
                    format!("{stem}/{task}"),
                    vec![confusion(&preds, &golds, task.n_classes())?],
                ),
            });
        }
    }
    if entries.is_empty() {
        return Err(acton::Error::NoLabeledSubjects.into());
    }
    print!(
        "{}",
        format_table(&entries.iter().map(|e| &e.report).collect::<Vec<_>>())
    );
    if let Some(out) = &a.out {
        write_json(out, &entries)?;
        rec.output(out);
        rec.finish(&settings, &beside(out))?;
    }
    Ok(())
}
