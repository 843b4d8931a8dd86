//! Layered settings: built-in defaults, then `--config`, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::failure::{CmdResult, Failure};

pub const SEED_VAR: &str = "ACTON_SEED";

/// Seed from the environment, if set.
pub fn env_seed() -> CmdResult<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            Failure::Usage(format!("{SEED_VAR} must be an unsigned integer, got `{s}`"))
        }),
        Err(_) => Ok(None),
    }
}

/// Reads a `--config` file. A run manifest works too; its config snapshot
/// is used.
pub fn read_config(path: Option<&Path>) -> CmdResult<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Map::new()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Failure::Usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    if let (Some(_), Some(cfg)) = (v.get("command"), v.get("config")) {
        return Ok(cfg.clone());
    }
    Ok(v)
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn unknown_keys(base: &Value, over: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        for (k, v) in o {
            let path = format!("{prefix}{k}");
            match b.get(k) {
                None => out.push(path),
                Some(bv) => unknown_keys(bv, v, &format!("{path}."), out),
            }
        }
    }
}

/// Overlays the config file onto `defaults`. Keys the defaults do not
/// have are rejected so typos do not pass silently.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: T, file: &Value) -> CmdResult<T> {
    let mut v = serde_json::to_value(&defaults).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&v, file, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(Failure::Usage(format!(
            "unknown config key(s): {}",
            unknown.join(", ")
        )));
    }
    merge(&mut v, file);
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("config: {e}")))
}

/// Replaces `slot` when the flag was given.
pub fn flag<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
