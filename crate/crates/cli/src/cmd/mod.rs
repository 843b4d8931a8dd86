pub mod cnn;
pub mod embed;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod infer;
pub mod linear;
pub mod synth;

use std::path::{Path, PathBuf};

use acton::domain::Vocabulary;
use acton::ingest::{load_dataset, Corpus, Dataset};
use acton::persist::write_atomic;
use serde::{Deserialize, Serialize};

use crate::failure::{CmdResult, Failure};
use crate::manifest::Recorder;

/// Settings of commands that have none.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct NoSettings {}

pub struct Loaded {
    pub ds: Dataset,
    pub corpus: Corpus,
}

/// Loads activity (and labels) sampled every `period_s` seconds and
/// encodes it with the given vocabulary, or one built from the files.
/// Sequences are aligned to `seq_len`, defaulting to the longest one.
pub fn load(
    rec: &mut Recorder,
    activity: &[PathBuf],
    labels: Option<&Path>,
    vocab: Option<&Path>,
    seq_len: Option<usize>,
    period_s: u32,
) -> CmdResult<Loaded> {
    rec.inputs(activity)?;
    if let Some(l) = labels {
        rec.input(l)?;
    }
    let mut ds = load_dataset(activity, labels)?;
    if period_s == 0 {
        return Err(Failure::Usage("sampling period must be positive".into()));
    }
    ds.sampling_period_s = period_s;
    let target = seq_len.unwrap_or_else(|| ds.max_len());
    let corpus = match vocab {
        Some(p) => {
            rec.input(p)?;
            let v = read_vocab(p)?;
            let seqs = ds.encode(&v, target);
            Corpus::from_sequences(v, seqs)
        }
        None => Corpus::from_dataset(&ds, target)?,
    };
    Ok(Loaded { ds, corpus })
}

pub fn read_vocab(path: &Path) -> CmdResult<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(path, e))?;
    let mut v: Vocabulary = serde_json::from_str(&text).map_err(|e| Failure::data(path, e))?;
    v.reindex();
    Ok(v)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    write_atomic(path, format!("{text}\n").as_bytes())?;
    Ok(())
}

/// `<out><suffix>` beside an output file.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}
