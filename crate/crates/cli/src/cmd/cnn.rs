use std::path::PathBuf;

use acton::domain::{Task, DEFAULT_SAMPLING_PERIOD_S};
use acton::eval::{confusion, format_table, MetricsReport, Split};
use acton::models::{
    alpha_pretrained, examples, train_model, CnnTrainConfig, Example, NetworkSpec,
    ALPHA_RANDOM_INIT,
};
use acton::persist::{load_embeddings, save_checkpoint};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{load, sibling, write_json};
use crate::failure::{CmdResult, Failure};
use crate::manifest::{beside, Recorder};
use crate::settings::{env_seed, flag, layered, read_config};
use crate::tables::write_rows;
use crate::Global;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnSettings {
    pub network: NetworkSpec,
    pub training: CnnTrainConfig,
    pub split_seed: u64,
    pub seq_len: Option<usize>,
    pub sampling_period_s: u32,
}

/// Written next to the model: held-out scores per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnReport {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub best_epoch: Option<usize>,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Args)]
pub struct CnnArgs {
    #[arg(long, required = true, num_args = 1..)]
    activity: Vec<PathBuf>,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Seconds between readings
    #[arg(long)]
    sampling_period: Option<u32>,
    /// Sample-level embeddings to initialize the embedding layer
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Conv blocks (default 4 for diabetes alone, 3 otherwise)
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    pool_stride: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch trace CSV (default: <out>.trace.csv)
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Test report JSON (default: <out>.report.json)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCnnArgs {
    #[arg(long)]
    task: Task,
    #[command(flatten)]
    common: CnnArgs,
}

#[derive(Debug, Args)]
pub struct TrainMultiArgs {
    /// Comma-separated tasks (default: all four)
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<Task>,
    /// Task weights: random-init, pretrained, or a comma list in task order
    /// (default: uniform)
    #[arg(long)]
    alpha: Option<String>,
    #[command(flatten)]
    common: CnnArgs,
}

/// Preset weights restricted to `tasks` and rescaled to sum to one.
fn preset(all: [f64; 4], tasks: &[Task]) -> Vec<f64> {
    let picked: Vec<f64> = tasks.iter().map(|t| all[t.index()]).collect();
    let sum: f64 = picked.iter().sum();
    picked.iter().map(|a| a / sum).collect()
}

fn parse_alpha(text: &str, tasks: &[Task]) -> CmdResult<Vec<f64>> {
    match text {
        "random-init" => Ok(preset(ALPHA_RANDOM_INIT, tasks)),
        "pretrained" => Ok(preset(alpha_pretrained(), tasks)),
        list => {
            let v = list
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(format!("--alpha: {e}")))?;
            if v.len() != tasks.len() {
                return Err(Failure::Usage(format!(
                    "--alpha has {} weights for {} tasks",
                    v.len(),
                    tasks.len()
                )));
            }
            Ok(v)
        }
    }
}

pub fn train_cnn(g: &Global, a: TrainCnnArgs) -> CmdResult {
    run(g, "train-cnn", vec![a.task], None, a.common)
}

pub fn train_multi(g: &Global, a: TrainMultiArgs) -> CmdResult {
    let file = read_config(g.config.as_deref())?;
    let tasks = if !a.tasks.is_empty() {
        a.tasks
    } else if let Some(v) = file.pointer("/network/tasks") {
        serde_json::from_value(v.clone()).map_err(|e| Failure::Usage(format!("config: {e}")))?
    } else {
        Task::ALL.to_vec()
    };
    let alpha = a
        .alpha
        .as_deref()
        .map(|s| parse_alpha(s, &tasks))
        .transpose()?;
    run(g, "train-multi", tasks, alpha, a.common)
}

fn pick(all: &[Example], idx: &[usize]) -> Vec<Example> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

fn run(
    g: &Global,
    command: &str,
    tasks: Vec<Task>,
    alpha: Option<Vec<f64>>,
    a: CnnArgs,
) -> CmdResult {
    let file = read_config(g.config.as_deref())?;
    let mut training = CnnTrainConfig::default();
    flag(&mut training.seed, env_seed()?);
    let mut s = layered(
        CnnSettings {
            network: NetworkSpec::new(tasks.clone(), 0, 0),
            training,
            split_seed: 0,
            seq_len: None,
            sampling_period_s: DEFAULT_SAMPLING_PERIOD_S,
        },
        &file,
    )?;
    let n = &mut s.network;
    n.tasks = tasks;
    flag(&mut n.embed_dim, a.embed_dim);
    flag(&mut n.depth, a.depth);
    flag(&mut n.filters, a.filters);
    flag(&mut n.kernel, a.kernel);
    flag(&mut n.pool, a.pool);
    if a.pool_stride.is_some() {
        n.pool_stride = a.pool_stride;
    }
    flag(&mut n.hidden, a.hidden);
    flag(&mut n.dropout, a.dropout);
    let t = &mut s.training;
    flag(&mut t.epochs, a.epochs);
    flag(&mut t.batch_size, a.batch_size);
    flag(&mut t.lr, a.lr);
    flag(&mut t.l1, a.l1);
    flag(&mut t.l2, a.l2);
    flag(&mut t.seed, a.seed);
    if alpha.is_some() {
        t.alpha = alpha;
    }
    flag(&mut s.split_seed, a.split_seed);
    flag(&mut s.sampling_period_s, a.sampling_period);
    if a.seq_len.is_some() {
        s.seq_len = a.seq_len;
    }

    let mut rec = Recorder::new(command);
    rec.seed("training", s.training.seed);
    rec.seed("split", s.split_seed);
    let loaded = load(
        &mut rec,
        &a.activity,
        Some(&a.labels),
        a.vocab.as_deref(),
        s.seq_len,
        s.sampling_period_s,
    )?;
    let corpus = &loaded.corpus;
    s.seq_len = Some(corpus.seq_len());
    s.network.vocab = corpus.vocab.len();
    s.network.seq_len = corpus.seq_len();
    let space = match &a.embeddings {
        Some(p) => {
            rec.input(p)?;
            let space = load_embeddings(p, None)?;
            if a.embed_dim.is_none() && file.pointer("/network/embed_dim").is_none() {
                s.network.embed_dim = space.dim();
            }
            Some(space)
        }
        None => None,
    };

    let all = examples(&corpus.sequences, &loaded.ds);
    let split = Split::standard(all.len(), s.split_seed)?;
    let (train, dev, test) = (
        pick(&all, &split.train),
        pick(&all, &split.dev),
        pick(&all, &split.test),
    );
    let trained = train_model(
        s.network.clone(),
        &train,
        (!dev.is_empty()).then_some(dev.as_slice()),
        &s.training,
        space.as_ref(),
    )?;
    let mut model = trained.model;

    let mut ckpt = model.to_checkpoint();
    if let Value::Object(h) = &mut ckpt.header {
        h.insert(
            "vocab".into(),
            serde_json::to_value(&corpus.vocab).map_err(|e| Failure::Data(e.to_string()))?,
        );
        h.insert("seq_len".into(), corpus.seq_len().into());
        h.insert("sampling_period_s".into(), s.sampling_period_s.into());
    }
    save_checkpoint(&a.out, &ckpt)?;
    rec.output(&a.out);

    let trace_path = a.trace.unwrap_or_else(|| sibling(&a.out, ".trace.csv"));
    let mut header = vec!["epoch".to_string(), "loss".to_string()];
    header.extend(s.network.tasks.iter().map(|t| format!("loss_{t}")));
    header.push("dev_macro_f1".into());
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    write_rows(
        &trace_path,
        &header,
        trained.trace.iter().map(|r| {
            let mut keys = vec![r.epoch.to_string(), r.loss.to_string()];
            keys.extend(r.task_losses.iter().map(|&l| opt(l)));
            keys.push(opt(r.dev_score));
            (keys, Vec::new())
        }),
    )?;
    rec.output(&trace_path);

    let preds = model.predict_examples(&test, s.training.batch_size)?;
    let mut reports = Vec::new();
    for (task, p) in s.network.tasks.iter().zip(&preds) {
        let (pp, gg): (Vec<usize>, Vec<usize>) = test
            .iter()
            .zip(p)
            .filter_map(|(e, &p)| e.label(*task).map(|g| (p, g)))
            .unzip();
        if gg.is_empty() {
            log::warn!("no test subject is labeled for {task}");
            continue;
        }
        reports.push(MetricsReport::from_confusions(
            task.name(),
            vec![confusion(&pp, &gg, task.n_classes())?],
        ));
    }
    let report_path = a.report.unwrap_or_else(|| sibling(&a.out, ".report.json"));
    println!(
        "{} train / {} dev / {} test subjects; best dev epoch {}",
        train.len(),
        dev.len(),
        test.len(),
        trained
            .best_epoch
            .map_or("n/a".to_string(), |e| e.to_string())
    );
    print!("{}", format_table(&reports.iter().collect::<Vec<_>>()));
    write_json(
        &report_path,
        &CnnReport {
            train: train.len(),
            dev: dev.len(),
            test: test.len(),
            best_epoch: trained.best_epoch,
            reports,
        },
    )?;
    rec.output(&report_path);
    rec.finish(&s, &beside(&a.out))?;
    Ok(())
}
