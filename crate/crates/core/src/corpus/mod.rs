//! Repair-pair data model, JSONL ingestion and the pipeline journal.

pub mod journal;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::digest_parts;

/// Toolchain tag. Valid values are whatever the config registers under
/// `[toolchains]`; the type itself does not restrict them.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LanguageId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// A buggy/fixed program pair in the source language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePair {
    /// Content hash of `(lang, buggy, fixed)`; stable across re-ingestion.
    pub id: String,
    pub lang: LanguageId,
    pub buggy: String,
    pub fixed: String,
    /// The `id` field of the input record, when it had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl SourcePair {
    /// Builds a pair after newline normalization, enforcing that both texts
    /// are non-empty and differ by more than trailing whitespace.
    pub fn new(lang: LanguageId, buggy: &str, fixed: &str) -> Result<Self, PairError> {
        let buggy = normalize_newlines(buggy);
        let fixed = normalize_newlines(fixed);
        if buggy.trim().is_empty() || fixed.trim().is_empty() {
            return Err(PairError::EmptyProgram);
        }
        if !differs_semantically(&buggy, &fixed) {
            return Err(PairError::NoDiff);
        }
        let id = pair_id(&lang, &buggy, &fixed);
        Ok(Self {
            id,
            lang,
            buggy,
            fixed,
            external_id: None,
            meta: None,
        })
    }
}

/// A synthesized buggy/fixed pair in a target language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetPair {
    pub source_id: String,
    pub lang: LanguageId,
    pub buggy: String,
    pub fixed: String,
    pub provenance: Provenance,
}

impl TargetPair {
    /// Identifier used in curriculum provenance: `<source id>@<lang>`.
    pub fn key(&self) -> String {
        format!("{}@{}", self.source_id, self.lang)
    }
}

/// Which translation attempt and injection candidate produced a target pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub translation_attempt: u32,
    pub injection_candidate: u32,
}

/// Source pair plus its verified target counterpart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelQuad {
    pub src: SourcePair,
    pub tgt: TargetPair,
}

impl ParallelQuad {
    pub fn new(src: SourcePair, tgt: TargetPair) -> Result<Self, PairError> {
        if tgt.source_id != src.id {
            return Err(PairError::Mismatch(format!(
                "target pair references {} but source is {}",
                tgt.source_id, src.id
            )));
        }
        if tgt.lang == src.lang {
            return Err(PairError::Mismatch(format!(
                "source and target share language {}",
                src.lang
            )));
        }
        Ok(Self { src, tgt })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("empty program text")]
    EmptyProgram,
    #[error("no diff")]
    NoDiff,
    #[error("{0}")]
    Mismatch(String),
}

pub fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n")
}

/// True when the texts differ after stripping per-line trailing whitespace
/// and trailing blank lines.
pub fn differs_semantically(a: &str, b: &str) -> bool {
    fn canon(s: &str) -> Vec<&str> {
        let mut lines: Vec<&str> = s.lines().map(str::trim_end).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        lines
    }
    canon(a) != canon(b)
}

pub fn pair_id(lang: &LanguageId, buggy: &str, fixed: &str) -> String {
    let full = digest_parts(&[lang.as_str().as_bytes(), buggy.as_bytes(), fixed.as_bytes()]);
    full[..16].to_string()
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    lang: Option<String>,
    buggy: String,
    fixed: String,
    #[serde(default)]
    meta: Option<serde_json::Value>,
}

/// A rejected input line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IngestDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub pairs: Vec<SourcePair>,
    pub diagnostics: Vec<IngestDiagnostic>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
}

/// Reads a JSONL file of `{id?, lang, buggy, fixed, meta?}` records.
///
/// Every line yields exactly one pair or one diagnostic, in file order.
/// Records whose content hash repeats an earlier line are reported as
/// duplicates.
pub fn ingest(path: &Path, lang: &LanguageId) -> Result<Ingested, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ingest_str(&text, lang))
}

pub fn ingest_str(text: &str, lang: &LanguageId) -> Ingested {
    let mut out = Ingested::default();
    let mut seen = std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let reject = |reason: String| IngestDiagnostic {
            line: line_no,
            reason,
        };
        if line.trim().is_empty() {
            out.diagnostics.push(reject("empty line".into()));
            continue;
        }
        let raw: RawRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                out.diagnostics.push(reject(format!("malformed record: {e}")));
                continue;
            }
        };
        if let Some(l) = &raw.lang {
            if l != lang.as_str() {
                out.diagnostics
                    .push(reject(format!("language {l} does not match {lang}")));
                continue;
            }
        }
        let mut pair = match SourcePair::new(lang.clone(), &raw.buggy, &raw.fixed) {
            Ok(p) => p,
            Err(e) => {
                out.diagnostics.push(reject(e.to_string()));
                continue;
            }
        };
        if let Some(first) = seen.get(&pair.id) {
            out.diagnostics
                .push(reject(format!("duplicate of pair {} (line {first})", pair.id)));
            continue;
        }
        seen.insert(pair.id.clone(), line_no);
        pair.external_id = raw.id;
        pair.meta = raw.meta;
        out.pairs.push(pair);
    }
    out
}
