//! Style violation density: linter style violations per 1000 lines.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sandbox::process::{self, Limits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinterSpec {
    /// Command with a `{file}` placeholder; must print JSON on stdout.
    pub command: String,
    /// File name each patch is written to, e.g. `patch.rb`.
    #[serde(default = "default_file")]
    pub file_name: String,
    /// Only violations whose rule name starts with this count.
    #[serde(default)]
    pub rule_prefix: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_file() -> String {
    "patch.txt".into()
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("no code to measure")]
    NoCode,
    #[error("linter output is not usable JSON: {0}")]
    Output(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub fn non_blank_loc(text: &str) -> usize {
    text.lines().filter(|l| !l.trim().is_empty()).count()
}

pub fn density(violations: u64, loc: usize) -> Result<f64, StyleError> {
    if loc == 0 {
        return Err(StyleError::NoCode);
    }
    Ok(violations as f64 * 1000.0 / loc as f64)
}

fn rule_name(v: &Value) -> Option<&str> {
    ["cop_name", "rule", "code", "check", "symbol"]
        .iter()
        .find_map(|k| v.get(*k).and_then(Value::as_str))
}

/// Counts violations in common linter JSON shapes: RuboCop style
/// (`files[].offenses[]`), a flat array of violation objects, or an
/// object with a numeric `violations` field.
pub fn count_violations(json: &Value, prefix: Option<&str>) -> Option<u64> {
    let keep = |v: &Value| match prefix {
        None => true,
        Some(p) => rule_name(v).is_some_and(|n| n.starts_with(p)),
    };
    if let Some(files) = json.get("files").and_then(Value::as_array) {
        let mut n = 0;
        for f in files {
            n += f.get("offenses")?.as_array()?.iter().filter(|v| keep(v)).count() as u64;
        }
        return Some(n);
    }
    if let Some(items) = json.as_array() {
        return Some(items.iter().filter(|v| keep(v)).count() as u64);
    }
    json.get("violations").and_then(Value::as_u64)
}

/// Lints each patch and returns the density, or `None` when the linter
/// cannot be started.
pub fn svd(patches: &[String], linter: &LinterSpec) -> Result<Option<f64>, StyleError> {
    let loc: usize = patches.iter().map(|p| non_blank_loc(p)).sum();
    if patches.is_empty() || loc == 0 {
        return Err(StyleError::NoCode);
    }
    let dir = tempfile::tempdir()?;
    let file = dir.path().join(Path::new(&linter.file_name).file_name().unwrap_or("patch.txt".as_ref()));
    let mut total = 0u64;
    for p in patches {
        std::fs::write(&file, p)?;
        let argv: Vec<String> = linter
            .command
            .split_whitespace()
            .map(|a| a.replace("{file}", &file.display().to_string()))
            .collect();
        let limits = Limits {
            wall: Duration::from_secs_f64(linter.timeout.max(0.1)),
            memory: None,
        };
        let run = match process::run(&argv, dir.path(), b"", limits) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("linter unavailable ({e}); style density not reported");
                return Ok(None);
            }
        };
        let json: Value = serde_json::from_slice(&run.stdout).map_err(|e| StyleError::Output(e.to_string()))?;
        total += count_violations(&json, linter.rule_prefix.as_deref())
            .ok_or_else(|| StyleError::Output("unrecognised shape".into()))?;
    }
    density(total, loc).map(Some)
}
