use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use acton::persist::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::{CmdResult, Failure};

/// Record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    /// Resolved settings; usable as `--config` to repeat the run.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Path to sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

pub struct Recorder {
    command: String,
    started: SystemTime,
    t0: Instant,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: SystemTime::now(),
            t0: Instant::now(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CmdResult {
        let bytes = std::fs::read(path).map_err(|e| Failure::data(path, e))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn inputs<P: AsRef<Path>>(&mut self, paths: &[P]) -> CmdResult {
        paths.iter().try_for_each(|p| self.input(p.as_ref()))
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Writes the manifest to `at` and returns it.
    pub fn finish(mut self, config: &impl Serialize, at: &Path) -> CmdResult<RunManifest> {
        self.outputs.push(at.display().to_string());
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| Failure::Data(e.to_string()))?,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_s: self
                .started
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_s: self.t0.elapsed().as_secs_f64(),
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Data(e.to_string()))?;
        write_atomic(at, format!("{text}\n").as_bytes())?;
        Ok(manifest)
    }
}

/// `<out>.manifest.json` beside a file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
