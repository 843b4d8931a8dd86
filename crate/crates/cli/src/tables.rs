//! CSV files exchanged between commands.

use std::path::Path;

use acton::domain::Task;
use acton::persist::write_atomic;

use crate::failure::{CmdResult, Failure};

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> CmdResult {
    let bytes = w.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Writes rows of floats under a header; floats use the shortest text
/// that parses back to the same value.
pub fn write_rows<K: AsRef<str>>(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = (Vec<K>, Vec<f64>)>,
) -> CmdResult {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for (keys, values) in rows {
        let mut rec: Vec<String> = keys.iter().map(|k| k.as_ref().to_string()).collect();
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub subjects: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn write_features(path: &Path, t: &FeatureTable) -> CmdResult {
    let dim = t.rows.first().map_or(0, Vec::len);
    let mut header = vec!["subject_id".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    write_rows(
        path,
        &header,
        t.subjects
            .iter()
            .zip(&t.rows)
            .map(|(s, r)| (vec![s.as_str()], r.clone())),
    )
}

pub fn read_features(path: &Path) -> CmdResult<FeatureTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::data(path, e))?;
    let dim = r.headers()?.len().saturating_sub(1);
    let mut t = FeatureTable {
        subjects: Vec::new(),
        rows: Vec::new(),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != dim + 1 {
            return Err(acton::Error::MalformedRow {
                line,
                reason: format!("expected {} fields, got {}", dim + 1, rec.len()),
            }
            .into());
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| acton::Error::MalformedRow {
                        line,
                        reason: format!("`{v}` is not a number"),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        t.subjects.push(rec[0].to_string());
        t.rows.push(values);
    }
    if t.rows.is_empty() {
        return Err(acton::Error::EmptyInput.into());
    }
    Ok(t)
}

/// One predicted class per subject and task, with the model's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub task: Task,
    pub class: usize,
    pub scores: Vec<f64>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> CmdResult {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "subject_id",
        "task",
        "class",
        "score_0",
        "score_1",
        "score_2",
    ])?;
    for p in preds {
        let mut rec = vec![
            p.subject_id.clone(),
            p.task.to_string(),
            p.class.to_string(),
        ];
        rec.extend((0..3).map(|k| p.scores.get(k).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn read_predictions(path: &Path) -> CmdResult<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::data(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |reason: String| acton::Error::MalformedRow { line, reason };
        if rec.len() < 3 {
            return Err(bad("expected subject_id, task and class".into()).into());
        }
        let task: Task = rec[1].parse()?;
        let class: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("class `{}` is not an integer", &rec[2])))?;
        if class >= task.n_classes() {
            return Err(acton::Error::LabelOutOfRange {
                label: class,
                classes: task.n_classes(),
            }
            .into());
        }
        let scores = rec
            .iter()
            .skip(3)
            .filter(|v| !v.trim().is_empty())
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("score `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Prediction {
            subject_id: rec[0].to_string(),
            task,
            class,
            scores,
        });
    }
    Ok(out)
}
