//! Repair-experiment metrics: Pass@k, compilation rates, style violation
//! density and text similarity, with a tabular report.

pub mod passk;
pub mod style;
pub mod text;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use passk::{mean_pass_at_k, pass_at_k, PassAtKError};
pub use style::{density, svd, LinterSpec, StyleError};
pub use text::{bleu4, rouge1, text_similarity, tokenize};

use crate::corpus::LanguageId;
use crate::sandbox::{FailureCategory, Sandbox, SandboxError, SyntaxCheck};
use crate::testgen::TestCase;

/// Generated patches for one task; `patches[0]` is the top-1 patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSet {
    pub task_id: String,
    pub patches: Vec<String>,
    /// Per-patch correctness, when already known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<Vec<bool>>,
    /// Tests to decide correctness by execution otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<TestCase>,
    /// Reference fix for text similarity of the top-1 patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl PatchSet {
    pub fn n(&self) -> usize {
        self.patches.len()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task {0} has no patches")]
    EmptyTask(String),
    #[error("task {task}: {source}")]
    PassAtK { task: String, source: PassAtKError },
    #[error("task {0}: `passed` length differs from patch count")]
    PassedLength(String),
    #[error("task {task}: {reason}")]
    Text { task: String, reason: String },
    #[error("patch file line {line}: {reason}")]
    Input { line: usize, reason: String },
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Compile-or-parse check used by the compilation rates.
pub trait SyntaxChecker {
    fn is_valid(&self, lang: &LanguageId, program: &str) -> Result<bool, SandboxError>;
}

impl SyntaxChecker for Sandbox {
    fn is_valid(&self, lang: &LanguageId, program: &str) -> Result<bool, SandboxError> {
        Ok(self.syntax_check(lang, program)? == SyntaxCheck::Valid)
    }
}

/// `(cr_target, cr_source)` in percent over the top-1 patches. A patch
/// counts toward `cr_source` only when it fails the target check and
/// passes the source check, so the two never overlap.
pub fn compilation_rates(
    sets: &[PatchSet],
    target: &LanguageId,
    source: &LanguageId,
    checker: &dyn SyntaxChecker,
) -> Result<(f64, f64), EvalError> {
    if sets.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut tgt, mut src) = (0usize, 0usize);
    for s in sets {
        let top = s.patches.first().ok_or_else(|| EvalError::EmptyTask(s.task_id.clone()))?;
        if checker.is_valid(target, top)? {
            tgt += 1;
        } else if checker.is_valid(source, top)? {
            src += 1;
        }
    }
    let pct = |k: usize| 100.0 * k as f64 / sets.len() as f64;
    Ok((pct(tgt), pct(src)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tasks: usize,
    /// k to percentage.
    pub pass_at: BTreeMap<u32, f64>,
    pub cr_target: f64,
    pub cr_source: f64,
    pub svd: Option<f64>,
    pub bleu4: Option<f64>,
    pub rouge1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub ks: Vec<u32>,
    pub target: LanguageId,
    pub source: LanguageId,
    pub linter: Option<LinterSpec>,
}

fn patch_correct(patch: &str, tests: &[TestCase], lang: &LanguageId, sandbox: &Sandbox) -> Result<bool, SandboxError> {
    for t in tests {
        if sandbox.execute(lang, patch, &t.input, Some(&t.expected))?.category != FailureCategory::Pass {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Number of correct patches per task, from `passed` or by running tests.
/// Tasks with neither are left out of Pass@k.
fn correct_counts(sets: &[PatchSet], target: &LanguageId, sandbox: Option<&Sandbox>) -> Result<Vec<(u64, u64)>, EvalError> {
    let mut out = Vec::new();
    for s in sets {
        let c = match (&s.passed, sandbox) {
            (Some(p), _) => {
                if p.len() != s.n() {
                    return Err(EvalError::PassedLength(s.task_id.clone()));
                }
                p.iter().filter(|b| **b).count()
            }
            (None, Some(sb)) if !s.tests.is_empty() => {
                let mut c = 0;
                for patch in &s.patches {
                    c += patch_correct(patch, &s.tests, target, sb)? as usize;
                }
                c
            }
            _ => continue,
        };
        out.push((s.n() as u64, c as u64));
    }
    Ok(out)
}

/// Computes every metric the inputs allow. `sandbox` is needed for
/// compilation rates and test execution; without it those stay at zero
/// and only precomputed correctness is used.
pub fn evaluate(sets: &[PatchSet], opts: &EvalOptions, sandbox: Option<&Sandbox>) -> Result<MetricReport, EvalError> {
    for s in sets {
        if s.patches.is_empty() {
            return Err(EvalError::EmptyTask(s.task_id.clone()));
        }
    }
    let counts = correct_counts(sets, &opts.target, sandbox)?;
    let mut pass_at = BTreeMap::new();
    if !counts.is_empty() {
        for &k in &opts.ks {
            for (s, &(n, c)) in sets.iter().zip(&counts) {
                pass_at_k(n, c, k as u64).map_err(|source| EvalError::PassAtK {
                    task: s.task_id.clone(),
                    source,
                })?;
            }
            let mean = mean_pass_at_k(&counts, k as u64).expect("checked above");
            pass_at.insert(k, 100.0 * mean);
        }
    }
    let (cr_target, cr_source) = match sandbox {
        Some(sb) => compilation_rates(sets, &opts.target, &opts.source, sb)?,
        None => (0.0, 0.0),
    };
    let tops: Vec<String> = sets.iter().map(|s| s.patches[0].clone()).collect();
    let svd = match &opts.linter {
        Some(l) if !tops.is_empty() => style::svd(&tops, l)?,
        _ => None,
    };
    let mut bleu = Vec::new();
    let mut rouge = Vec::new();
    for s in sets {
        if let Some(r) = &s.reference {
            let (b, g) = text_similarity(&s.patches[0], r).map_err(|e| EvalError::Text {
                task: s.task_id.clone(),
                reason: e.to_string(),
            })?;
            bleu.push(b);
            rouge.push(g);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(MetricReport {
        tasks: sets.len(),
        pass_at,
        cr_target,
        cr_source,
        svd,
        bleu4: mean(&bleu),
        rouge1: mean(&rouge),
    })
}

/// Reads a JSONL patch file, one `PatchSet` per non-blank line.
pub fn read_patch_sets(path: &Path) -> Result<Vec<PatchSet>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Input {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Aligned text table: one row, P@k columns then CR_T and CR_S, then any
/// optional metrics that were computed.
pub fn render_table(label: &str, r: &MetricReport) -> String {
    let mut cols: Vec<(String, String)> = vec![("Model".into(), label.to_string())];
    for (k, v) in &r.pass_at {
        cols.push((format!("P@{k}"), format!("{v:.2}")));
    }
    cols.push(("CR_T".into(), format!("{:.2}", r.cr_target)));
    cols.push(("CR_S".into(), format!("{:.2}", r.cr_source)));
    for (name, v) in [("SVD", r.svd), ("BLEU-4", r.bleu4), ("ROUGE-1", r.rouge1)] {
        if let Some(v) = v {
            cols.push((name.into(), format!("{v:.2}")));
        }
    }
    let widths: Vec<usize> = cols.iter().map(|(h, v)| h.len().max(v.len())).collect();
    let mut out = String::new();
    let row = |out: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    row(&mut out, cols.iter().map(|(h, _)| h.as_str()).collect());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-+-"));
    row(&mut out, cols.iter().map(|(_, v)| v.as_str()).collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Valid in a language when the text contains `<lang>-ok`.
    struct Marker;

    impl SyntaxChecker for Marker {
        fn is_valid(&self, lang: &LanguageId, program: &str) -> Result<bool, SandboxError> {
            Ok(program.contains(&format!("{lang}-ok")))
        }
    }

    fn set(id: &str, top: &str) -> PatchSet {
        PatchSet {
            task_id: id.into(),
            patches: vec![top.into()],
            passed: None,
            tests: vec![],
            reference: None,
        }
    }

    #[test]
    fn compilation_rate_numerators_are_disjoint() {
        let sets = vec![
            set("a", "rust-ok"),
            set("b", "rust-ok cpp-ok"),
            set("c", "cpp-ok"),
            set("d", "neither"),
        ];
        let (t, s) = compilation_rates(&sets, &"rust".into(), &"cpp".into(), &Marker).unwrap();
        assert_eq!((t, s), (50.0, 25.0));
    }

    #[test]
    fn evaluate_with_known_correctness() {
        let mut a = set("a", "x");
        a.patches = vec!["x".into(); 5];
        a.passed = Some(vec![true, false, false, true, false]);
        a.reference = Some("x".into());
        let mut b = a.clone();
        b.task_id = "b".into();
        b.passed = Some(vec![false; 5]);
        let opts = EvalOptions {
            ks: vec![1, 3, 5],
            target: "rust".into(),
            source: "cpp".into(),
            linter: None,
        };
        let r = evaluate(&[a, b], &opts, None).unwrap();
        assert!((r.pass_at[&1] - 20.0).abs() < 1e-9);
        assert!((r.pass_at[&3] - 45.0).abs() < 1e-9);
        assert!((r.pass_at[&5] - 50.0).abs() < 1e-9);
        assert_eq!(r.bleu4, Some(100.0));
        assert_eq!(r.svd, None);
        let table = render_table("demo", &r);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        let header: Vec<&str> = lines[0].split('|').map(str::trim).collect();
        assert_eq!(header, ["Model", "P@1", "P@3", "P@5", "CR_T", "CR_S", "BLEU-4", "ROUGE-1"]);
        assert!(lines[2].contains("20.00"));
    }

    #[test]
    fn k_above_n_is_an_error() {
        let mut a = set("a", "x");
        a.passed = Some(vec![true]);
        let opts = EvalOptions {
            ks: vec![3],
            target: "rust".into(),
            source: "cpp".into(),
            linter: None,
        };
        assert!(matches!(evaluate(&[a], &opts, None), Err(EvalError::PassAtK { .. })));
    }
}
