//! Structure-constrained translation of the fixed source program, keeping
//! the first candidate that passes the whole oracle suite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguageId, SourcePair};
use crate::descriptor::{diff, DefectDescriptor};
use crate::llm::{bindings, extract, template, LlmError, Prompter};
use crate::sandbox::{FailureCategory, Sandbox, SandboxError, SyntaxCheck};
use crate::testgen::TestSuite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Passed,
    NoCode,
    CompileError,
    FailedTests,
}

/// What the journal keeps about one attempt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub attempt: u32,
    pub status: AttemptStatus,
    /// Cases passed before the first failure (validation stops there).
    pub passed: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<FailureCategory>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationAttempt {
    pub attempt_index: u32,
    pub candidate: Option<String>,
    pub validation: Vec<FailureCategory>,
    pub passed: bool,
}

impl TranslationAttempt {
    pub fn summary(&self, total: usize) -> AttemptSummary {
        let status = match (&self.candidate, self.passed, self.validation.last()) {
            (None, _, _) => AttemptStatus::NoCode,
            (Some(_), true, _) => AttemptStatus::Passed,
            (Some(_), false, Some(FailureCategory::CompileError)) => AttemptStatus::CompileError,
            (Some(_), false, _) => AttemptStatus::FailedTests,
        };
        AttemptSummary {
            attempt: self.attempt_index,
            status,
            passed: self.validation.iter().filter(|c| **c == FailureCategory::Pass).count(),
            total,
            first_failure: self.validation.iter().copied().find(|c| *c != FailureCategory::Pass),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TranslationOutcome {
    Selected {
        attempt: u32,
        program: String,
        attempts: Vec<AttemptSummary>,
    },
    Failed {
        attempts: Vec<AttemptSummary>,
    },
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("oracle suite is empty")]
    EmptySuite,
    #[error("attempt budget must be at least 1")]
    ZeroAttempts,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// Checks `program` against every case, stopping at the first failure.
/// A compile failure yields a single `CompileError` entry.
pub fn validate(
    program: &str,
    lang: &LanguageId,
    suite: &TestSuite,
    sandbox: &Sandbox,
) -> Result<Vec<FailureCategory>, SandboxError> {
    if let SyntaxCheck::Invalid(_) = sandbox.syntax_check(lang, program)? {
        return Ok(vec![FailureCategory::CompileError]);
    }
    let mut out = Vec::with_capacity(suite.cases.len());
    for case in &suite.cases {
        let o = sandbox.execute(lang, program, &case.input, Some(&case.expected))?;
        out.push(o.category);
        if o.category != FailureCategory::Pass {
            break;
        }
    }
    Ok(out)
}

pub fn passes_all(outcomes: &[FailureCategory], suite: &TestSuite) -> bool {
    outcomes.len() == suite.cases.len() && outcomes.iter().all(|c| *c == FailureCategory::Pass)
}

/// Requests candidates one at a time (sample index `j` for attempt `j`)
/// and returns the first that passes every case. Later attempts are never
/// requested once one passes.
#[allow(clippy::too_many_arguments)]
pub fn translate_fixed(
    pair: &SourcePair,
    desc: &DefectDescriptor,
    target: &LanguageId,
    suite: &TestSuite,
    prompter: &Prompter,
    sandbox: &Sandbox,
    m: u32,
) -> Result<TranslationOutcome, TranslateError> {
    if suite.cases.is_empty() {
        return Err(TranslateError::EmptySuite);
    }
    if m == 0 {
        return Err(TranslateError::ZeroAttempts);
    }
    let hunks = diff::render(&desc.diff);
    let b = bindings([
        ("source_lang", pair.lang.as_str()),
        ("target_lang", target.as_str()),
        ("fixed_src", &pair.fixed),
        ("defect_type", &desc.defect_type),
        ("root_cause", &desc.root_cause),
        ("diff_hunks", &hunks),
    ]);
    let total = suite.cases.len();
    let mut summaries = Vec::new();
    for j in 1..=m {
        let reply = prompter.ask(template::TRANSLATE, b.clone(), j)?;
        let candidate = extract::last_code_block(&reply);
        let attempt = match &candidate {
            None => TranslationAttempt {
                attempt_index: j,
                candidate: None,
                validation: Vec::new(),
                passed: false,
            },
            Some(code) => {
                let validation = validate(code, target, suite, sandbox)?;
                let passed = passes_all(&validation, suite);
                TranslationAttempt {
                    attempt_index: j,
                    candidate: candidate.clone(),
                    validation,
                    passed,
                }
            }
        };
        let summary = attempt.summary(total);
        log::debug!("{}: translation attempt {j}: {:?}", pair.id, summary.status);
        summaries.push(summary);
        if attempt.passed {
            return Ok(TranslationOutcome::Selected {
                attempt: j,
                program: attempt.candidate.expect("passed attempt has code"),
                attempts: summaries,
            });
        }
    }
    Ok(TranslationOutcome::Failed { attempts: summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::compute_diff;
    use crate::llm::{GenerationSettings, ScriptedModel, TemplateSet};
    use crate::sandbox::CoverageReport;
    use crate::testgen::tests::sh_sandbox;
    use crate::testgen::TestCase;
    use std::sync::Arc;

    const FIXED: &str = "read n\necho $((n * 2))\n";

    fn fixture() -> (SourcePair, DefectDescriptor, TestSuite) {
        let pair = SourcePair::new("sh".into(), "read n\necho $((n * 3))\n", FIXED).unwrap();
        let desc = DefectDescriptor {
            defect_type: "Wrong constant".into(),
            root_cause: "Multiplies by 3".into(),
            diff: compute_diff(&pair.buggy, &pair.fixed, 3).unwrap(),
        };
        let suite = TestSuite {
            cases: (1..=3)
                .map(|i| TestCase {
                    input: i.to_string(),
                    expected: (i * 2).to_string(),
                })
                .collect(),
            coverage: CoverageReport {
                line_pct: 100.0,
                branch_pct: 100.0,
                lines: 2,
                branches: 0,
            },
            tau: 0.9,
        };
        (pair, desc, suite)
    }

    /// Attempts before `pass_at` fail one test (or do not compile); attempt
    /// `pass_at` and later pass.
    fn model(pass_at: u32) -> Arc<ScriptedModel> {
        Arc::new(ScriptedModel::new(move |r| {
            let j = r.sample_index;
            Some(if j >= pass_at {
                format!("Here you go:\n```sh\n{FIXED}```\n")
            } else if j % 2 == 0 {
                "```sh\nif then (\n```".into()
            } else {
                "```sh\nread n\n[ $n -eq 2 ] && echo 5 || echo $((n * 2))\n```".into()
            })
        }))
    }

    fn run(pass_at: u32, m: u32) -> (TranslationOutcome, usize) {
        let (pair, desc, suite) = fixture();
        let model = model(pass_at);
        let p = Prompter::new(model.clone(), Arc::new(TemplateSet::builtin()), GenerationSettings::default());
        let out = translate_fixed(&pair, &desc, &"sh".into(), &suite, &p, &sh_sandbox(), m).unwrap();
        (out, model.count(template::TRANSLATE))
    }

    #[test]
    fn first_passing_attempt_is_selected_lazily() {
        for j in [1, 3, 5] {
            let (out, requests) = run(j, 5);
            match out {
                TranslationOutcome::Selected { attempt, program, attempts } => {
                    assert_eq!(attempt, j);
                    assert_eq!(program, FIXED);
                    assert_eq!(attempts.len() as u32, j);
                }
                other => panic!("{other:?}"),
            }
            assert_eq!(requests as u32, j);
        }
    }

    #[test]
    fn all_attempts_fail() {
        let (out, requests) = run(99, 5);
        let TranslationOutcome::Failed { attempts } = out else {
            panic!("expected failure")
        };
        assert_eq!(requests, 5);
        let statuses: Vec<AttemptStatus> = attempts.iter().map(|a| a.status).collect();
        use AttemptStatus::*;
        assert_eq!(statuses, [FailedTests, CompileError, FailedTests, CompileError, FailedTests]);
        assert_eq!(attempts[0].passed, 1);
        assert_eq!(attempts[0].first_failure, Some(FailureCategory::WrongOutput));
    }

    #[test]
    fn prompt_embeds_hunks_and_constraints() {
        let (pair, desc, suite) = fixture();
        let model = model(1);
        let p = Prompter::new(model.clone(), Arc::new(TemplateSet::builtin()), GenerationSettings::default());
        translate_fixed(&pair, &desc, &"sh".into(), &suite, &p, &sh_sandbox(), 5).unwrap();
        let req = &model.requests()[0];
        assert_eq!(req.sample_index, 1);
        let prompt = p.templates().render(template::TRANSLATE, &req.bindings).unwrap();
        assert!(prompt.contains("-echo $((n * 3))"));
        assert!(prompt.contains("+echo $((n * 2))"));
        assert!(prompt.contains("structural anchors"));
        assert!(!prompt.contains("{diff_hunks}"));
    }

    #[test]
    fn missing_code_block_is_a_failed_attempt() {
        let (pair, desc, suite) = fixture();
        let model = Arc::new(ScriptedModel::new(|_| Some("I cannot do that.".into())));
        let p = Prompter::new(model, Arc::new(TemplateSet::builtin()), GenerationSettings::default());
        let out = translate_fixed(&pair, &desc, &"sh".into(), &suite, &p, &sh_sandbox(), 2).unwrap();
        let TranslationOutcome::Failed { attempts } = out else { panic!() };
        assert!(attempts.iter().all(|a| a.status == AttemptStatus::NoCode));
    }

    #[test]
    fn preconditions() {
        let (pair, desc, mut suite) = fixture();
        let p = Prompter::new(model(1), Arc::new(TemplateSet::builtin()), GenerationSettings::default());
        let sb = sh_sandbox();
        assert!(matches!(
            translate_fixed(&pair, &desc, &"sh".into(), &suite, &p, &sb, 0),
            Err(TranslateError::ZeroAttempts)
        ));
        suite.cases.clear();
        assert!(matches!(
            translate_fixed(&pair, &desc, &"sh".into(), &suite, &p, &sb, 5),
            Err(TranslateError::EmptySuite)
        ));
    }
}
