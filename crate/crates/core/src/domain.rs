//! Domain types shared by every stage of the pipeline: granularity levels,
//! the activity-count vocabulary, encoded sequences, time segments and
//! per-subject disorder labels.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vocabulary index of an activity symbol.
pub type SymbolId = u32;

/// Default sampling period of the wrist device, in seconds.
pub const DEFAULT_SAMPLING_PERIOD_S: u32 = 30;
/// Number of days kept per subject.
pub const DEFAULT_DAYS: usize = 7;
/// 7 days at 30-second sampling.
pub const DEFAULT_SEQUENCE_LEN: usize = 20160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Sample,
    Hour,
    Day,
    Week,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Sample, Level::Hour, Level::Day, Level::Week];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Sample => "sample",
            Level::Hour => "hour",
            Level::Day => "day",
            Level::Week => "week",
        }
    }

    fn span_seconds(self) -> Option<u32> {
        match self {
            Level::Sample => None,
            Level::Hour => Some(3_600),
            Level::Day => Some(86_400),
            Level::Week => Some(604_800),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sample" => Ok(Level::Sample),
            "hour" => Ok(Level::Hour),
            "day" => Ok(Level::Day),
            "week" => Ok(Level::Week),
            other => Err(Error::InvalidConfig(format!(
                "unknown granularity `{other}`"
            ))),
        }
    }
}

/// Analysis unit: a level plus the number of samples one segment spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Granularity {
    pub level: Level,
    pub samples_per_segment: usize,
}

impl Granularity {
    pub fn new(level: Level, sampling_period_s: u32) -> Result<Self> {
        if sampling_period_s == 0 {
            return Err(Error::InvalidConfig(
                "sampling period must be positive".into(),
            ));
        }
        let samples_per_segment = match level.span_seconds() {
            None => 1,
            Some(span) => {
                if span % sampling_period_s != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "{level} span of {span}s is not a multiple of the {sampling_period_s}s sampling period"
                    )));
                }
                (span / sampling_period_s) as usize
            }
        };
        Ok(Self {
            level,
            samples_per_segment,
        })
    }

    /// Granularity at the default 30-second sampling period.
    pub fn standard(level: Level) -> Self {
        Self::new(level, DEFAULT_SAMPLING_PERIOD_S).expect("30s divides every span")
    }

    pub fn segments_in(&self, len: usize) -> Result<usize> {
        if len == 0 || !len.is_multiple_of(self.samples_per_segment) {
            return Err(Error::IndivisibleLength {
                len,
                segment: self.samples_per_segment,
            });
        }
        Ok(len / self.samples_per_segment)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.samples_per_segment)
    }
}

/// Bijection between raw activity counts and dense symbol ids.
///
/// Known raw values are assigned ids in ascending numeric order, so id order
/// matches count order. The UNK symbol takes the last id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    raw_values: Vec<u32>,
    counts: Vec<u64>,
    unk_count: u64,
    #[serde(skip)]
    index: HashMap<u32, SymbolId>,
}

impl Vocabulary {
    /// Builds the vocabulary from a stream of raw values, `None` being a
    /// missing reading.
    pub fn from_values<I>(values: I) -> Self
    where
        I: IntoIterator<Item = Option<u32>>,
    {
        let mut tally: HashMap<u32, u64> = HashMap::new();
        let mut unk_count = 0;
        for v in values {
            match v {
                Some(raw) => *tally.entry(raw).or_default() += 1,
                None => unk_count += 1,
            }
        }
        let mut pairs: Vec<(u32, u64)> = tally.into_iter().collect();
        pairs.sort_unstable_by_key(|&(raw, _)| raw);
        let (raw_values, counts) = pairs.into_iter().unzip();
        Self::from_parts(raw_values, counts, unk_count)
    }

    pub(crate) fn from_parts(raw_values: Vec<u32>, counts: Vec<u64>, unk_count: u64) -> Self {
        let index = raw_values
            .iter()
            .enumerate()
            .map(|(i, &raw)| (raw, i as SymbolId))
            .collect();
        Self {
            raw_values,
            counts,
            unk_count,
            index,
        }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .raw_values
            .iter()
            .enumerate()
            .map(|(i, &raw)| (raw, i as SymbolId))
            .collect();
    }

    /// Number of symbols including UNK.
    pub fn len(&self) -> usize {
        self.raw_values.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unk_id(&self) -> SymbolId {
        self.raw_values.len() as SymbolId
    }

    /// Known raw values in id order.
    pub fn raw_values(&self) -> &[u32] {
        &self.raw_values
    }

    pub fn contains(&self, raw: u32) -> bool {
        self.index.contains_key(&raw)
    }

    /// Maps a raw reading to its symbol; missing and unseen values map to UNK.
    pub fn encode(&self, raw: Option<u32>) -> SymbolId {
        raw.and_then(|r| self.index.get(&r).copied())
            .unwrap_or_else(|| self.unk_id())
    }

    /// Inverse of [`encode`](Self::encode) for known symbols; `None` for UNK.
    pub fn decode(&self, id: SymbolId) -> Option<u32> {
        self.raw_values.get(id as usize).copied()
    }

    /// Occurrence count of a symbol (UNK included).
    pub fn count(&self, id: SymbolId) -> u64 {
        if id == self.unk_id() {
            self.unk_count
        } else {
            self.counts.get(id as usize).copied().unwrap_or(0)
        }
    }

    pub fn unk_count(&self) -> u64 {
        self.unk_count
    }

    /// Counts for every id, UNK last.
    pub fn all_counts(&self) -> Vec<u64> {
        let mut c = self.counts.clone();
        c.push(self.unk_count);
        c
    }

    /// Total of non-missing readings.
    pub fn known_total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Maps a raw reading (or a missing one) to its symbol id.
pub fn encode_symbol(vocab: &Vocabulary, raw: Option<u32>) -> SymbolId {
    vocab.encode(raw)
}

/// One subject's encoded activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySequence {
    pub subject_id: String,
    pub symbols: Vec<SymbolId>,
    pub sampling_period_s: u32,
}

impl ActivitySequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSegment {
    pub global_id: usize,
    pub subject_index: usize,
    pub index_in_sequence: usize,
    /// Half-open symbol range.
    pub start: usize,
    pub end: usize,
}

impl TimeSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits one sequence into consecutive equal-length segments. Global ids
/// start at `first_global_id` and increase in temporal order.
pub fn segment_sequence(
    seq: &ActivitySequence,
    g: Granularity,
    subject_index: usize,
    first_global_id: usize,
) -> Result<Vec<TimeSegment>> {
    let k = g.segments_in(seq.len())?;
    let l = g.samples_per_segment;
    Ok((0..k)
        .map(|i| TimeSegment {
            global_id: first_global_id + i,
            subject_index,
            index_in_sequence: i,
            start: i * l,
            end: (i + 1) * l,
        })
        .collect())
}

/// Segments a whole corpus: subjects in the given order, segments in
/// temporal order, global ids dense from 0.
pub fn segment_corpus(seqs: &[ActivitySequence], g: Granularity) -> Result<Vec<Vec<TimeSegment>>> {
    let mut next = 0;
    seqs.iter()
        .enumerate()
        .map(|(s, seq)| {
            let segs = segment_sequence(seq, g, s, next)?;
            next += segs.len();
            Ok(segs)
        })
        .collect()
}

/// Concatenates segment vectors in order into one feature vector.
pub fn concat_features<V: AsRef<[f64]>>(segment_vectors: &[V]) -> Result<Vec<f64>> {
    let Some(first) = segment_vectors.first() else {
        return Ok(Vec::new());
    };
    let d = first.as_ref().len();
    let mut out = Vec::with_capacity(d * segment_vectors.len());
    for v in segment_vectors {
        let v = v.as_ref();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
        out.extend_from_slice(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Apnea,
    Diabetes,
    Hypertension,
    Insomnia,
}

impl Task {
    /// Column order of the labels file.
    pub const ALL: [Task; 4] = [
        Task::Apnea,
        Task::Diabetes,
        Task::Hypertension,
        Task::Insomnia,
    ];

    pub fn index(self) -> usize {
        match self {
            Task::Apnea => 0,
            Task::Diabetes => 1,
            Task::Hypertension => 2,
            Task::Insomnia => 3,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Apnea | Task::Hypertension => 2,
            Task::Diabetes | Task::Insomnia => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Apnea => "apnea",
            Task::Diabetes => "diabetes",
            Task::Hypertension => "hypertension",
            Task::Insomnia => "insomnia",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownTaskColumn(s.to_string()))
    }
}

/// Disorder labels of one subject; `None` is an explicit missing label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub subject_id: String,
    pub labels: [Option<u8>; 4],
}

impl LabelRecord {
    pub fn new(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            labels: [None; 4],
        }
    }

    pub fn get(&self, task: Task) -> Option<u8> {
        self.labels[task.index()]
    }

    pub fn set(&mut self, task: Task, class: Option<u8>) {
        self.labels[task.index()] = class;
    }

    pub fn has_any(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }
}
