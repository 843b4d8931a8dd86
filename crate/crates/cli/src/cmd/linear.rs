use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use acton::domain::{LabelRecord, Task};
use acton::eval::{confusion, format_table, run_protocol, MetricsReport, Split, TEST_FRACTION};
use acton::ingest::parse_labels_csv;
use acton::models::{
    baseline_predict, majority_class, train_logreg, Baseline, LogReg, LogRegConfig,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::failure::{CmdResult, Failure};
use crate::manifest::{beside, Recorder};
use crate::settings::{env_seed, flag, layered, read_config};
use crate::tables::read_features;
use crate::Global;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSettings {
    pub logreg: LogRegConfig,
    pub split_seed: u64,
    pub test_fraction: f64,
    /// Runs averaged in the report, seeded from `logreg.seed` upward.
    pub repeats: usize,
}

/// Saved probe: the task it predicts and the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: String,
    pub task: Task,
    pub dim: usize,
    pub model: LogReg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitReport {
    pub task: Task,
    pub train: usize,
    pub test: usize,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Args)]
pub struct TrainLinearArgs {
    /// Feature CSV from `acton features`
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Model JSON to write
    #[arg(long)]
    out: PathBuf,
    /// Test-set report JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn read_labels(path: &Path) -> CmdResult<BTreeMap<String, LabelRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(path, e))?;
    Ok(parse_labels_csv(&text)?
        .into_iter()
        .map(|r| (r.subject_id.clone(), r))
        .collect())
}

pub fn run(g: &Global, a: TrainLinearArgs) -> CmdResult {
    let mut base = LinearSettings {
        logreg: LogRegConfig::default(),
        split_seed: 0,
        test_fraction: TEST_FRACTION,
        repeats: 1,
    };
    flag(&mut base.logreg.seed, env_seed()?);
    let mut s = layered(base, &read_config(g.config.as_deref())?)?;
    flag(&mut s.logreg.epochs, a.epochs);
    flag(&mut s.logreg.lr, a.lr);
    flag(&mut s.logreg.l2, a.l2);
    flag(&mut s.logreg.seed, a.seed);
    flag(&mut s.split_seed, a.split_seed);
    flag(&mut s.repeats, a.repeats);

    let mut rec = Recorder::new("train-linear");
    rec.seed("logreg", s.logreg.seed);
    rec.seed("split", s.split_seed);
    rec.input(&a.features)?;
    rec.input(&a.labels)?;
    let table = read_features(&a.features)?;
    let labels = read_labels(&a.labels)?;
    let k = a.task.n_classes();
    let (x, y): (Vec<&Vec<f64>>, Vec<usize>) = table
        .subjects
        .iter()
        .zip(&table.rows)
        .filter_map(|(sid, row)| {
            labels
                .get(sid)
                .and_then(|r| r.get(a.task))
                .map(|c| (row, c as usize))
        })
        .unzip();
    if y.is_empty() {
        return Err(acton::Error::NoLabeledSubjects.into());
    }
    let split = Split::new(y.len(), 0.0, s.test_fraction, s.split_seed)?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        idx.iter().map(|&i| (x[i].clone(), y[i])).unzip()
    };
    let (xtr, ytr) = pick(&split.train);
    let (xte, yte) = pick(&split.test);
    if yte.is_empty() {
        return Err(Failure::Usage("test split is empty".into()));
    }

    let probe = run_protocol("logreg", &split, s.repeats, s.logreg.seed, |seed, _| {
        let cfg = LogRegConfig {
            seed,
            ..s.logreg.clone()
        };
        let m = train_logreg(&xtr, &ytr, k, &cfg)?;
        confusion(&m.predict_all(&xte)?, &yte, k)
    })?;
    let majority = {
        let c = majority_class(&ytr, k)?;
        MetricsReport::from_confusions("majority", vec![confusion(&vec![c; yte.len()], &yte, k)?])
    };
    let random = run_protocol("random", &split, s.repeats, s.logreg.seed, |seed, _| {
        confusion(
            &baseline_predict(Baseline::Random, &ytr, k, yte.len(), seed)?,
            &yte,
            k,
        )
    })?;

    let model = train_logreg(&xtr, &ytr, k, &s.logreg)?;
    write_json(
        &a.out,
        &LinearModel {
            kind: "logreg".into(),
            task: a.task,
            dim: xtr[0].len(),
            model,
        },
    )?;
    rec.output(&a.out);
    println!(
        "{}: {} train / {} test subjects, {} run(s)",
        a.task,
        ytr.len(),
        yte.len(),
        s.repeats
    );
    print!("{}", format_table(&[&probe, &majority, &random]));
    if let Some(path) = &a.report {
        write_json(
            path,
            &SplitReport {
                task: a.task,
                train: ytr.len(),
                test: yte.len(),
                reports: vec![probe, majority, random],
            },
        )?;
        rec.output(path);
    }
    rec.finish(&s, &beside(&a.out))?;
    Ok(())
}
