use std::path::PathBuf;

use acton::act2vec::{infer_sequence, sequence_features, train, InferConfig, TrainConfig};
use acton::domain::{concat_features, Level, DEFAULT_SAMPLING_PERIOD_S};
use acton::ingest::{build_vocabulary, load_dataset};
use acton::persist::{load_embeddings, save_embeddings};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{load, sibling, write_json, NoSettings};
use crate::failure::{CmdResult, Failure};
use crate::manifest::{beside, Recorder};
use crate::settings::{env_seed, flag, layered, read_config};
use crate::tables::{write_features, write_rows, FeatureTable};
use crate::Global;

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long, required = true, num_args = 1..)]
    activity: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn vocab(g: &Global, a: VocabArgs) -> CmdResult {
    let settings: NoSettings = layered(NoSettings {}, &read_config(g.config.as_deref())?)?;
    let mut rec = Recorder::new("vocab");
    rec.inputs(&a.activity)?;
    let ds = load_dataset(&a.activity, None)?;
    let v = build_vocabulary(&ds)?;
    write_json(&a.out, &v)?;
    rec.output(&a.out);
    rec.finish(&settings, &beside(&a.out))?;
    println!(
        "{} symbols ({} distinct values + UNK); {} missing readings",
        v.len(),
        v.len() - 1,
        v.unk_count()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub embedding: TrainConfig,
    pub seq_len: Option<usize>,
    pub sampling_period_s: u32,
}

#[derive(Debug, Args)]
pub struct TrainEmbedArgs {
    #[arg(long, required = true, num_args = 1..)]
    activity: Vec<PathBuf>,
    /// Vocabulary from `acton vocab`; built from the activity otherwise
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Samples per aligned sequence (default: the longest sequence)
    #[arg(long)]
    seq_len: Option<usize>,
    /// Seconds between readings
    #[arg(long)]
    sampling_period: Option<u32>,
    /// sample, hour, day or week
    #[arg(long)]
    granularity: Option<Level>,
    #[arg(long)]
    dim: Option<usize>,
    /// Symbols per training window
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    /// Smoothing strength (default 0.25 at day, 0.5 at hour)
    #[arg(long)]
    eta: Option<f64>,
    /// Neighbor set size, 2 or 4
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    /// Stop once the relative loss change falls below this
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Embeddings file to write
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV (default: <out>.loss.csv)
    #[arg(long)]
    trace: Option<PathBuf>,
}

pub fn train_embed(g: &Global, a: TrainEmbedArgs) -> CmdResult {
    let file = read_config(g.config.as_deref())?;
    let file_level = match file.pointer("/embedding/level") {
        Some(v) => Some(
            serde_json::from_value::<Level>(v.clone())
                .map_err(|e| Failure::Usage(format!("config: {e}")))?,
        ),
        None => None,
    };
    let level = a.granularity.or(file_level).unwrap_or(Level::Day);
    let mut base = TrainConfig::for_level(level);
    flag(&mut base.seed, env_seed()?);
    let mut s = layered(
        EmbedSettings {
            embedding: base,
            seq_len: None,
            sampling_period_s: DEFAULT_SAMPLING_PERIOD_S,
        },
        &file,
    )?;
    let c = &mut s.embedding;
    c.level = level;
    flag(&mut c.dim, a.dim);
    flag(&mut c.window, a.window);
    flag(&mut c.negatives, a.negatives);
    flag(&mut c.eta, a.eta);
    flag(&mut c.neighbor_set_size, a.neighbors);
    flag(&mut c.epochs, a.epochs);
    flag(&mut c.lr_start, a.lr_start);
    flag(&mut c.lr_end, a.lr_end);
    flag(&mut c.convergence_tol, a.tol);
    flag(&mut c.seed, a.seed);
    c.threads = g.embed_threads();
    if a.seq_len.is_some() {
        s.seq_len = a.seq_len;
    }
    flag(&mut s.sampling_period_s, a.sampling_period);

    let mut rec = Recorder::new("train-embed");
    rec.seed("embedding", s.embedding.seed);
    let loaded = load(
        &mut rec,
        &a.activity,
        None,
        a.vocab.as_deref(),
        s.seq_len,
        s.sampling_period_s,
    )?;
    s.seq_len = Some(loaded.corpus.seq_len());
    let out = train(&loaded.corpus, &s.embedding)?;
    save_embeddings(&a.out, &out.space)?;
    rec.output(&a.out);

    let trace = a.trace.unwrap_or_else(|| sibling(&a.out, ".loss.csv"));
    let header: Vec<String> = [
        "epoch",
        "targets",
        "segment",
        "neighbor",
        "smoothing",
        "combined",
        "learning_rate",
    ]
    .map(String::from)
    .to_vec();
    write_rows(
        &trace,
        &header,
        out.trace.iter().map(|e| {
            (
                vec![e.epoch.to_string(), e.targets.to_string()],
                vec![
                    e.segment,
                    e.neighbor,
                    e.smoothing,
                    e.combined,
                    e.learning_rate,
                ],
            )
        }),
    )?;
    rec.output(&trace);
    rec.finish(&s, &beside(&a.out))?;

    let last = out.trace.last().map_or(f64::NAN, |e| e.combined);
    println!(
        "{level}: {} segment vectors x {}, {} epochs, final loss {last:.6}{}",
        out.space.n_segments(),
        out.space.dim(),
        out.trace.len(),
        if out.converged { " (converged)" } else { "" }
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSettings {
    pub infer: InferConfig,
    pub seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    activity: Vec<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Passes when fitting vectors for subjects the space has not seen
    #[arg(long)]
    infer_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature CSV to write
    #[arg(long)]
    out: PathBuf,
}

pub fn features(g: &Global, a: FeaturesArgs) -> CmdResult {
    let mut base = InferConfig::default();
    flag(&mut base.seed, env_seed()?);
    let mut s = layered(
        FeatureSettings {
            infer: base,
            seq_len: None,
        },
        &read_config(g.config.as_deref())?,
    )?;
    flag(&mut s.infer.steps, a.infer_steps);
    flag(&mut s.infer.seed, a.seed);
    if a.seq_len.is_some() {
        s.seq_len = a.seq_len;
    }

    let mut rec = Recorder::new("features");
    rec.seed("infer", s.infer.seed);
    rec.input(&a.embeddings)?;
    let space = load_embeddings(&a.embeddings, None)?;
    let loaded = load(
        &mut rec,
        &a.activity,
        None,
        a.vocab.as_deref(),
        s.seq_len,
        space.sampling_period_s(),
    )?;
    s.seq_len = Some(loaded.corpus.seq_len());
    if space.vocab_len() != loaded.corpus.vocab.len() {
        return Err(Failure::Data(format!(
            "embedding space has {} symbols but the activity vocabulary has {}; pass the training vocabulary with --vocab",
            space.vocab_len(),
            loaded.corpus.vocab.len()
        )));
    }

    let mut table = FeatureTable {
        subjects: Vec::new(),
        rows: Vec::new(),
    };
    let mut inferred = 0;
    for seq in &loaded.corpus.sequences {
        let row = if space.granularity().level == Level::Sample
            || space.subject_segments(&seq.subject_id).is_some()
        {
            sequence_features(&space, seq)?
        } else {
            inferred += 1;
            concat_features(&infer_sequence(&space, seq, &s.infer)?)?
        };
        table.subjects.push(seq.subject_id.clone());
        table.rows.push(row);
    }
    write_features(&a.out, &table)?;
    rec.output(&a.out);
    rec.finish(&s, &beside(&a.out))?;
    println!(
        "{} subjects x {} features ({inferred} inferred) -> {}",
        table.rows.len(),
        table.rows.first().map_or(0, Vec::len),
        a.out.display()
    );
    Ok(())
}
