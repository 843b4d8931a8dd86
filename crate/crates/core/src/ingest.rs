//! Activity and label file parsing, vocabulary construction, sequence
//! alignment and out-of-vocabulary resolution.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::act2vec::EmbeddingSpace;
use crate::domain::{
    ActivitySequence, LabelRecord, SymbolId, Task, Vocabulary, DEFAULT_SAMPLING_PERIOD_S,
};
use crate::error::{Error, Result};
use crate::persist::sha256_hex;

pub const ACTIVITY_HEADER: &str = "subject_id,timestamp_index,activity_count";
pub const LABELS_HEADER: &str = "subject_id,apnea,diabetes,hypertension,insomnia";

/// Fraction of UNK symbols above which a subject is flagged after alignment.
pub const UNK_FLAG_THRESHOLD: f64 = 0.10;

/// Raw readings of one subject, `None` marking a missing slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSequence {
    pub subject_id: String,
    pub values: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub digest: String,
}

/// A corpus of raw activity sequences with optional labels.
///
/// Sequences keep raw counts rather than symbol ids: the vocabulary is built
/// from the corpus itself, so encoding happens afterwards through
/// [`Dataset::encode`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<RawSequence>,
    pub labels: BTreeMap<String, LabelRecord>,
    pub sampling_period_s: u32,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(sequences: Vec<RawSequence>, labels: Vec<LabelRecord>) -> Result<Self> {
        let mut ds = Self {
            sequences,
            labels: BTreeMap::new(),
            sampling_period_s: DEFAULT_SAMPLING_PERIOD_S,
            provenance: Provenance::default(),
        };
        ds.attach_labels(labels)?;
        Ok(ds)
    }

    /// Adds a label table, checking every labeled subject has a sequence.
    pub fn attach_labels(&mut self, labels: Vec<LabelRecord>) -> Result<()> {
        let known: std::collections::HashSet<&str> = self
            .sequences
            .iter()
            .map(|s| s.subject_id.as_str())
            .collect();
        for rec in &labels {
            if !known.contains(rec.subject_id.as_str()) {
                return Err(Error::UnknownSubject(rec.subject_id.clone()));
            }
        }
        self.labels = labels
            .into_iter()
            .map(|r| (r.subject_id.clone(), r))
            .collect();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn label(&self, subject_id: &str) -> Option<&LabelRecord> {
        self.labels.get(subject_id)
    }

    /// Labels aligned with `sequences`; missing records become all-`None`.
    pub fn label_rows(&self) -> Vec<[Option<u8>; 4]> {
        self.sequences
            .iter()
            .map(|s| {
                self.labels
                    .get(&s.subject_id)
                    .map_or([None; 4], |r| r.labels)
            })
            .collect()
    }

    /// Encodes every sequence, truncating to `target_len` and right-padding
    /// short ones with UNK.
    pub fn encode(&self, vocab: &Vocabulary, target_len: usize) -> Vec<ActivitySequence> {
        self.sequences
            .iter()
            .map(|raw| {
                let mut symbols: Vec<SymbolId> = raw
                    .values
                    .iter()
                    .take(target_len)
                    .map(|&v| vocab.encode(v))
                    .collect();
                symbols.resize(target_len, vocab.unk_id());
                ActivitySequence {
                    subject_id: raw.subject_id.clone(),
                    symbols,
                    sampling_period_s: self.sampling_period_s,
                }
            })
            .collect()
    }

    /// Length of the longest sequence.
    pub fn max_len(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.values.len())
            .max()
            .unwrap_or(0)
    }
}

/// Encoded corpus ready for embedding training.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub sequences: Vec<ActivitySequence>,
    pub digest: String,
}

impl Corpus {
    /// Builds the vocabulary over the whole dataset and aligns every
    /// sequence to `target_len`.
    pub fn from_dataset(ds: &Dataset, target_len: usize) -> Result<Self> {
        if target_len == 0 {
            return Err(Error::InvalidConfig(
                "target length must be positive".into(),
            ));
        }
        let vocab = build_vocabulary(ds)?;
        let sequences = ds.encode(&vocab, target_len);
        let flagged = flag_sparse_subjects(&sequences, &vocab);
        if !flagged.is_empty() {
            log::warn!(
                "{} subject(s) exceed {:.0}% UNK after alignment",
                flagged.len(),
                UNK_FLAG_THRESHOLD * 100.0
            );
        }
        let digest = corpus_digest(&sequences);
        Ok(Self {
            vocab,
            sequences,
            digest,
        })
    }

    pub fn from_sequences(vocab: Vocabulary, sequences: Vec<ActivitySequence>) -> Self {
        let digest = corpus_digest(&sequences);
        Self {
            vocab,
            sequences,
            digest,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.len())
    }
}

/// Digest over subject ids and symbol streams.
pub fn corpus_digest(seqs: &[ActivitySequence]) -> String {
    let mut bytes = Vec::new();
    for s in seqs {
        bytes.extend_from_slice(s.subject_id.as_bytes());
        bytes.push(0);
        for t in &s.symbols {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
    }
    sha256_hex(&bytes)
}

/// Subjects whose aligned sequence is more than 10% UNK. They are kept.
pub fn flag_sparse_subjects(seqs: &[ActivitySequence], vocab: &Vocabulary) -> Vec<String> {
    let unk = vocab.unk_id();
    seqs.iter()
        .filter(|s| {
            let n = s.symbols.iter().filter(|&&t| t == unk).count();
            !s.is_empty() && n as f64 / s.len() as f64 > UNK_FLAG_THRESHOLD
        })
        .map(|s| s.subject_id.clone())
        .collect()
}

/// Parses an activity CSV into raw sequences. Slots absent from the file
/// become missing readings.
pub fn parse_activity_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyInput),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim(),
        }
    };
    if header != ACTIVITY_HEADER {
        return Err(Error::MalformedRow {
            line: 1,
            reason: format!("expected header `{ACTIVITY_HEADER}`"),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut slots: HashMap<String, BTreeMap<usize, Option<u32>>> = HashMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let subject = fields[0];
        if subject.is_empty() {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: "empty subject_id".into(),
            });
        }
        let ts: usize = fields[1].parse().map_err(|_| Error::MalformedRow {
            line: line_no,
            reason: format!(
                "timestamp_index `{}` is not a non-negative integer",
                fields[1]
            ),
        })?;
        let count = if fields[2] == "NA" {
            None
        } else {
            Some(fields[2].parse::<u32>().map_err(|_| Error::MalformedRow {
                line: line_no,
                reason: format!(
                    "activity_count `{}` is not a non-negative integer or NA",
                    fields[2]
                ),
            })?)
        };
        let entry = slots.entry(subject.to_string()).or_insert_with(|| {
            order.push(subject.to_string());
            BTreeMap::new()
        });
        if entry.insert(ts, count).is_some() {
            return Err(Error::DuplicateTimestamp {
                line: line_no,
                subject: subject.to_string(),
                timestamp: ts,
            });
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyInput);
    }

    let sequences = order
        .into_iter()
        .map(|subject_id| {
            let rows = slots.remove(&subject_id).unwrap_or_default();
            let n = rows.keys().next_back().map_or(0, |&m| m + 1);
            let mut values = vec![None; n];
            for (ts, v) in rows {
                values[ts] = v;
            }
            RawSequence { subject_id, values }
        })
        .collect();
    let mut ds = Dataset::new(sequences, Vec::new())?;
    ds.provenance.digest = sha256_hex(text.as_bytes());
    Ok(ds)
}

/// Parses a labels CSV. `-1` marks a missing label.
pub fn parse_labels_csv(text: &str) -> Result<Vec<LabelRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"subject_id") {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "first column must be subject_id".into(),
        });
    }
    let tasks: Vec<Task> = cols[1..]
        .iter()
        .map(|c| c.parse::<Task>())
        .collect::<Result<_>>()?;
    for t in Task::ALL {
        if !tasks.contains(&t) {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("missing task column `{t}`"),
            });
        }
    }

    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::MalformedRow {
                line: line_no,
                reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut rec = LabelRecord::new(fields[0]);
        for (task, raw) in tasks.iter().zip(&fields[1..]) {
            let v: i64 = raw.parse().map_err(|_| Error::MalformedRow {
                line: line_no,
                reason: format!("label `{raw}` is not an integer"),
            })?;
            let class = match v {
                -1 => None,
                c if c >= 0 && (c as usize) < task.n_classes() => Some(c as u8),
                c => {
                    return Err(Error::OutOfRangeClass {
                        line: line_no,
                        task: task.name(),
                        value: c,
                    })
                }
            };
            rec.set(*task, class);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_activity_csv(ds: &Dataset) -> String {
    let total: usize = ds.sequences.iter().map(|s| s.values.len()).sum();
    let mut out = String::with_capacity(total * 16 + 64);
    out.push_str(ACTIVITY_HEADER);
    out.push('\n');
    for seq in &ds.sequences {
        for (t, v) in seq.values.iter().enumerate() {
            match v {
                Some(c) => writeln!(out, "{},{t},{c}", seq.subject_id),
                None => writeln!(out, "{},{t},NA", seq.subject_id),
            }
            .expect("writing to a String");
        }
    }
    out
}

pub fn write_labels_csv<'a, I>(labels: I) -> String
where
    I: IntoIterator<Item = &'a LabelRecord>,
{
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for rec in labels {
        out.push_str(&rec.subject_id);
        for l in rec.labels {
            match l {
                Some(c) => write!(out, ",{c}"),
                None => out.write_str(",-1"),
            }
            .expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads activity files (parsed concurrently, merged by subject id) and an
/// optional labels file.
pub fn load_dataset<P: AsRef<Path> + Sync>(
    activity: &[P],
    labels: Option<&Path>,
) -> Result<Dataset> {
    if activity.is_empty() {
        return Err(Error::EmptyInput);
    }
    let parsed: Vec<(String, Dataset)> = activity
        .par_iter()
        .map(|p| {
            let text = read_file(p.as_ref())?;
            Ok((p.as_ref().display().to_string(), parse_activity_csv(&text)?))
        })
        .collect::<Result<_>>()?;

    let mut ds = if parsed.len() == 1 {
        let (path, mut ds) = parsed.into_iter().next().expect("one file");
        ds.provenance.sources.push(path);
        ds
    } else {
        let mut sequences: Vec<RawSequence> = Vec::new();
        let mut sources = Vec::new();
        let mut digests = String::new();
        for (path, ds) in parsed {
            sources.push(path);
            digests.push_str(&ds.provenance.digest);
            sequences.extend(ds.sequences);
        }
        sequences.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        if let Some(w) = sequences
            .windows(2)
            .find(|w| w[0].subject_id == w[1].subject_id)
        {
            return Err(Error::InvalidConfig(format!(
                "subject `{}` appears in more than one activity file",
                w[0].subject_id
            )));
        }
        let mut ds = Dataset::new(sequences, Vec::new())?;
        ds.provenance = Provenance {
            sources,
            digest: sha256_hex(digests.as_bytes()),
        };
        ds
    };

    if let Some(lp) = labels {
        let text = read_file(lp)?;
        ds.attach_labels(parse_labels_csv(&text)?)?;
        ds.provenance.sources.push(lp.display().to_string());
        ds.provenance.digest = sha256_hex(
            format!("{}{}", ds.provenance.digest, sha256_hex(text.as_bytes())).as_bytes(),
        );
    }
    Ok(ds)
}

/// One id per distinct raw value plus UNK.
pub fn build_vocabulary(ds: &Dataset) -> Result<Vocabulary> {
    if ds.sequences.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Vocabulary::from_values(
        ds.sequences.iter().flat_map(|s| s.values.iter().copied()),
    ))
}

/// Which symbol table OOV averaging reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolSource {
    /// Symbol input vectors (trained at sample granularity).
    #[default]
    Vectors,
    /// Symbol output weights (available at every granularity).
    OutWeights,
}

/// Vector for an unseen raw value: the mean of its nearest known neighbor
/// below and nearest known neighbor above.
pub fn resolve_oov(vocab: &Vocabulary, space: &EmbeddingSpace, raw: u32) -> Result<Vec<f64>> {
    resolve_oov_from(vocab, space, raw, SymbolSource::Vectors)
}

pub fn resolve_oov_from(
    vocab: &Vocabulary,
    space: &EmbeddingSpace,
    raw: u32,
    source: SymbolSource,
) -> Result<Vec<f64>> {
    if vocab.contains(raw) {
        return Err(Error::InVocabulary(raw));
    }
    let table = match source {
        SymbolSource::Vectors => space.symbol_vectors().ok_or(Error::NoSymbolVectors)?,
        SymbolSource::OutWeights => space.symbol_out(),
    };
    let known = vocab.raw_values();
    if known.is_empty() {
        return Err(Error::NoSymbolVectors);
    }
    // first known value greater than raw
    let above = known.partition_point(|&v| v < raw);
    let mut neighbors = Vec::with_capacity(2);
    if above > 0 {
        neighbors.push(above - 1);
    }
    if above < known.len() {
        neighbors.push(above);
    }
    let d = table.ncols();
    let mut out = vec![0.0; d];
    for &id in &neighbors {
        for (o, v) in out.iter_mut().zip(table.row(id)) {
            *o += v;
        }
    }
    let n = neighbors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}
