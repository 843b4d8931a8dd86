use std::collections::BTreeMap;
use std::path::PathBuf;

use acton::persist::{load_checkpoint, load_embeddings};
use clap::Args;
use serde::Serialize;

use super::{write_json, NoSettings};
use crate::failure::{CmdResult, Failure};
use crate::manifest::{beside, Recorder};
use crate::settings::{layered, read_config};
use crate::tables::write_rows;
use crate::Global;

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Embeddings file; exported as CSV
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    embeddings: Option<PathBuf>,
    /// Checkpoint; exported as JSON
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize)]
struct ModelDump<'a> {
    header: &'a serde_json::Value,
    tensors: BTreeMap<&'a str, Tensor>,
}

pub fn run(g: &Global, a: ExportArgs) -> CmdResult {
    let settings: NoSettings = layered(NoSettings {}, &read_config(g.config.as_deref())?)?;
    let mut rec = Recorder::new("export");
    match (&a.embeddings, &a.model) {
        (Some(path), _) => {
            rec.input(path)?;
            let space = load_embeddings(path, None)?;
            let dims: Vec<String> = (0..space.dim()).map(|j| format!("v{j}")).collect();
            if let Some(symbols) = space.symbol_vectors() {
                let mut header = vec!["symbol".to_string()];
                header.extend(dims);
                write_rows(
                    &a.out,
                    &header,
                    symbols
                        .rows()
                        .into_iter()
                        .enumerate()
                        .map(|(i, r)| (vec![i.to_string()], r.to_vec())),
                )?;
            } else {
                let mut header = vec!["subject_id".to_string(), "segment".to_string()];
                header.extend(dims);
                let mut rows = Vec::new();
                for s in space.subjects() {
                    for k in 0..s.count {
                        rows.push((
                            vec![s.subject_id.clone(), k.to_string()],
                            space.segment_row(s.first + k)?.to_vec(),
                        ));
                    }
                }
                write_rows(&a.out, &header, rows)?;
            }
        }
        (None, Some(path)) => {
            rec.input(path)?;
            let ckpt = load_checkpoint(path)?;
            let dump = ModelDump {
                header: &ckpt.header,
                tensors: ckpt
                    .tensors
                    .iter()
                    .map(|(name, t)| {
                        (
                            name.as_str(),
                            Tensor {
                                shape: [t.nrows(), t.ncols()],
                                data: t.iter().copied().collect(),
                            },
                        )
                    })
                    .collect(),
            };
            write_json(&a.out, &dump)?;
        }
        (None, None) => return Err(Failure::Usage("pass --embeddings or --model".into())),
    }
    rec.output(&a.out);
    rec.finish(&settings, &beside(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
