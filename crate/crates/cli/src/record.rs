//! Machine-readable run records and JSONL metric logs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("FEATSPLAT_VERSION");

/// Everything needed to replay a command: its arguments, resolved
/// configuration, seed and the build that ran it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub args: Vec<String>,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    pub metrics: Value,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed,
            args: std::env::args().collect(),
            config,
            outputs: Vec::new(),
            metrics: Value::Null,
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::format(path, e.to_string()))?;
        crate::formats::write_bytes(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::format(path, e.to_string()))?;
        out.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&out).map_err(|e| CliError::io(path, e))
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunRecord::new("fit", 7, serde_json::json!({"lr": 1e-5}));
        r.outputs.push("scene.gspl".into());
        r.save(&dir.path().join("run.json")).unwrap();
        assert_eq!(RunRecord::load(&dir.path().join("run.json")).unwrap(), r);
        assert!(!r.version.is_empty());
    }

    #[test]
    fn jsonl_has_one_line_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_jsonl(&p, &[serde_json::json!({"a": 1}), serde_json::json!({"a": 2})]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
