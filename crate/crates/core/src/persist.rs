//! On-disk formats.
//!
//! Embedding spaces are plain text:
//!
//! ```text
//! <count> <dim> <level>:<samples_per_segment>
//! <id> v1 ... vd                       (count rows of segment vectors)
//! #table <name> <rows>                 (segment_out, symbol_out, symbol_vectors)
//! <id> v1 ... vd
//! #meta <json>
//! #digest sha256:<hex of every preceding byte>
//! ```
//!
//! Values are written with 17 significant digits, which round-trips f64
//! exactly. Checkpoints are binary:
//!
//! ```text
//! magic "ACTONCKP" | version u32 | header length u64 | header JSON
//! | tensor blobs (f64, row-major) | sha256 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Every write goes to a
//! temporary file in the target directory which is then renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::act2vec::{EmbeddingSpace, SubjectSegments, TrainConfig};
use crate::domain::{Granularity, Level};
use crate::error::{Error, Result};
use crate::ingest::{write_activity_csv, write_labels_csv, Dataset};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACTONCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIGEST_PREFIX: &str = "#digest sha256:";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMeta {
    sampling_period_s: u32,
    corpus_digest: String,
    subjects: Vec<SubjectSegments>,
    symbol_counts: Vec<u64>,
    config: TrainConfig,
}

fn write_rows(out: &mut String, table: &Array2<f64>) {
    for (i, row) in table.rows().into_iter().enumerate() {
        write!(out, "{i}").expect("writing to a String");
        for v in row {
            write!(out, " {v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
}

/// Serializes a space to the text format.
pub fn embeddings_to_string(space: &EmbeddingSpace) -> String {
    let seg = space.segment_vectors();
    let mut out = String::with_capacity((seg.len() + space.symbol_out().len()) * 26 * 2 + 256);
    writeln!(
        out,
        "{} {} {}",
        seg.nrows(),
        space.dim(),
        space.granularity()
    )
    .expect("writing to a String");
    write_rows(&mut out, seg);
    let mut tables = vec![
        ("segment_out", space.segment_out()),
        ("symbol_out", space.symbol_out()),
    ];
    if let Some(t) = space.symbol_vectors() {
        tables.push(("symbol_vectors", t));
    }
    for (name, t) in tables {
        writeln!(out, "#table {name} {}", t.nrows()).expect("writing to a String");
        write_rows(&mut out, t);
    }
    let meta = EmbeddingMeta {
        sampling_period_s: space.sampling_period_s(),
        corpus_digest: space.corpus_digest().to_string(),
        subjects: space.subjects().to_vec(),
        symbol_counts: space.symbol_counts().to_vec(),
        config: space.config().clone(),
    };
    writeln!(
        out,
        "#meta {}",
        serde_json::to_string(&meta).expect("meta serializes")
    )
    .expect("writing to a String");
    let digest = sha256_hex(out.as_bytes());
    writeln!(out, "{DIGEST_PREFIX}{digest}").expect("writing to a String");
    out
}

fn parse_granularity(tag: &str) -> Result<Granularity> {
    let bad = || Error::HeaderMismatch(format!("bad granularity tag `{tag}`"));
    let (level, samples) = tag.split_once(':').ok_or_else(bad)?;
    let level: Level = level.parse().map_err(|_| bad())?;
    let samples_per_segment: usize = samples.parse().map_err(|_| bad())?;
    if samples_per_segment == 0 {
        return Err(bad());
    }
    Ok(Granularity {
        level,
        samples_per_segment,
    })
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::TruncatedFile(format!("expected {what}")))
    }
}

fn parse_table(lines: &mut Lines<'_>, rows: usize, dim: usize, name: &str) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        let (lineno, line) = lines.next_line(&format!("row {i} of {name} ({rows} rows)"))?;
        if line.starts_with('#') {
            return Err(Error::TruncatedFile(format!(
                "{name} has {i} of {rows} rows"
            )));
        }
        let mut fields = line.split(' ');
        let id: usize =
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::MalformedRow {
                    line: lineno,
                    reason: "missing row id".into(),
                })?;
        if id != i {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: format!("row id {id}, expected {i}"),
            });
        }
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| Error::MalformedRow {
                line: lineno,
                reason: format!("bad value `{f}`"),
            })?);
        }
        if data.len() - before != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() - before,
            });
        }
    }
    Ok(Array2::from_shape_vec((rows, dim), data).expect("rows times dim values"))
}

/// Parses the text format. With `expect_dim`, a space of any other
/// dimension is rejected before its rows are read.
pub fn embeddings_from_str(text: &str, expect_dim: Option<usize>) -> Result<EmbeddingSpace> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, header) = lines.next_line("header")?;
    let parts: Vec<&str> = header.split(' ').collect();
    let [count, dim, tag] = parts[..] else {
        return Err(Error::HeaderMismatch(format!(
            "expected `<count> <dim> <granularity>`, got `{header}`"
        )));
    };
    let count: usize = count
        .parse()
        .map_err(|_| Error::HeaderMismatch(format!("bad count `{count}`")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::HeaderMismatch(format!("bad dimension `{dim}`")))?;
    let granularity = parse_granularity(tag)?;
    if let Some(expected) = expect_dim {
        if expected != dim {
            return Err(Error::DimensionMismatch { expected, got: dim });
        }
    }
    let segment_vectors = parse_table(&mut lines, count, dim, "segment vectors")?;

    let mut segment_out = None;
    let mut symbol_out = None;
    let mut symbol_vectors = None;
    let meta: EmbeddingMeta = loop {
        let (lineno, line) = lines.next_line("#meta section")?;
        if let Some(rest) = line.strip_prefix("#table ") {
            let (name, rows) = rest.split_once(' ').ok_or_else(|| Error::MalformedRow {
                line: lineno,
                reason: "table header needs a name and a row count".into(),
            })?;
            let rows: usize = rows.parse().map_err(|_| Error::MalformedRow {
                line: lineno,
                reason: format!("bad row count `{rows}`"),
            })?;
            let table = parse_table(&mut lines, rows, dim, name)?;
            let slot = match name {
                "segment_out" => &mut segment_out,
                "symbol_out" => &mut symbol_out,
                "symbol_vectors" => &mut symbol_vectors,
                other => {
                    return Err(Error::MalformedRow {
                        line: lineno,
                        reason: format!("unknown table `{other}`"),
                    })
                }
            };
            *slot = Some(table);
        } else if let Some(json) = line.strip_prefix("#meta ") {
            break serde_json::from_str(json)?;
        } else {
            return Err(Error::MalformedRow {
                line: lineno,
                reason: "expected a #table or #meta line".into(),
            });
        }
    };

    let (_, digest_line) = lines.next_line("digest line")?;
    let stored = digest_line
        .strip_prefix(DIGEST_PREFIX)
        .ok_or_else(|| Error::TruncatedFile("missing digest line".into()))?;
    let body_len = text.find(DIGEST_PREFIX).expect("digest line was found");
    if sha256_hex(&text.as_bytes()[..body_len]) != stored {
        return Err(Error::DigestMismatch);
    }

    let missing = |n: &str| Error::TruncatedFile(format!("missing table {n}"));
    let space = EmbeddingSpace::from_parts(
        granularity,
        meta.sampling_period_s,
        segment_vectors,
        segment_out.ok_or_else(|| missing("segment_out"))?,
        symbol_vectors,
        symbol_out.ok_or_else(|| missing("symbol_out"))?,
        meta.symbol_counts,
        meta.subjects,
        meta.config,
        meta.corpus_digest,
    )?;
    if space.granularity().level != space.config().level {
        return Err(Error::HeaderMismatch(format!(
            "header granularity {} disagrees with config level {}",
            space.granularity(),
            space.config().level
        )));
    }
    Ok(space)
}

pub fn save_embeddings(path: &Path, space: &EmbeddingSpace) -> Result<()> {
    write_atomic(path, embeddings_to_string(space).as_bytes())
}

pub fn load_embeddings(path: &Path, expect_dim: Option<usize>) -> Result<EmbeddingSpace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_str(&text, expect_dim)
}

/// Generic checkpoint: a JSON header plus named f64 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Array2<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    header: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let head = CheckpointHeader {
            header: self.header.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&head).expect("header serializes");
        let floats: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + floats * 8 + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |what: &str| Error::TruncatedFile(format!("checkpoint ends inside {what}"));
        if bytes.len() < 8 {
            return Err(short("magic"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::HeaderMismatch("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(
            bytes
                .get(8..12)
                .ok_or_else(|| short("version"))?
                .try_into()
                .expect("4 bytes"),
        );
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 20 + 32 {
            return Err(short("header"));
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != stored {
            return Err(Error::DigestMismatch);
        }
        let json_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(20..20 + json_len).ok_or_else(|| short("header"))?;
        let head: CheckpointHeader = serde_json::from_slice(json)?;
        let mut pos = 20 + json_len;
        let mut tensors = Vec::with_capacity(head.tensors.len());
        for e in head.tensors {
            let n = e.rows * e.cols;
            let blob = body.get(pos..pos + n * 8).ok_or_else(|| short(&e.name))?;
            let data: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += n * 8;
            tensors.push((
                e.name,
                Array2::from_shape_vec((e.rows, e.cols), data).expect("rows times cols"),
            ));
        }
        if pos != body.len() {
            return Err(Error::HeaderMismatch(format!(
                "{} trailing bytes after tensors",
                body.len() - pos
            )));
        }
        Ok(Self {
            header: head.header,
            tensors,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?)
}

/// Writes the activity table and, if given, the label table as CSV.
pub fn save_dataset(ds: &Dataset, activity: &Path, labels: Option<&Path>) -> Result<()> {
    write_atomic(activity, write_activity_csv(ds).as_bytes())?;
    if let Some(lp) = labels {
        write_atomic(lp, write_labels_csv(ds.labels.values()).as_bytes())?;
    }
    Ok(())
}
