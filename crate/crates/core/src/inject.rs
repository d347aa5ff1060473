//! Defect injection into the translated fixed program: behavior spec,
//! trigger/regression inputs from the source pair, candidate generation,
//! consistency scoring and lexicographic selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{differs_semantically, LanguageId, SourcePair};
use crate::descriptor::{diff, DefectDescriptor};
use crate::llm::{bindings, extract, template, LlmError, Prompter};
use crate::sandbox::{normalize_output, FailureCategory, Sandbox, SandboxError, SyntaxCheck};
use crate::testgen::{dedup, InputDiagnostic, TestSuite};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub trigger_condition: String,
    pub expected_failure: FailureCategory,
    /// The model's own wording, kept for prompting.
    pub description: String,
    /// Set when the category could not be read from the reply.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub defaulted: bool,
}

impl BehaviorSpec {
    fn prompt_text(&self) -> String {
        if self.description.is_empty() {
            self.expected_failure.name().replace('_', " ")
        } else {
            self.description.clone()
        }
    }
}

/// Reads a failure category from free text. Compile errors and passes are
/// not behaviors a defect can be expected to show at runtime.
pub fn map_category(text: &str) -> Option<FailureCategory> {
    let t = text.to_lowercase();
    let head = t.split([':', '-', '(', ',', '.']).next().unwrap_or("").trim();
    let exact = match head.replace(' ', "_").as_str() {
        "wrong_output" | "incorrect_output" | "wrong_answer" => Some(FailureCategory::WrongOutput),
        "crash" => Some(FailureCategory::Crash),
        "exception" | "runtime_error" => Some(FailureCategory::Exception),
        "timeout" | "time_limit_exceeded" => Some(FailureCategory::Timeout),
        _ => None,
    };
    if exact.is_some() {
        return exact;
    }
    let has = |words: &[&str]| words.iter().any(|w| t.contains(w));
    if has(&["timeout", "time limit", "infinite loop", "hang"]) {
        Some(FailureCategory::Timeout)
    } else if has(&["exception", "panic", "raise", "runtime error"]) {
        Some(FailureCategory::Exception)
    } else if has(&["crash", "segfault", "segmentation", "abort", "signal"]) {
        Some(FailureCategory::Crash)
    } else if has(&["wrong", "incorrect", "output"]) {
        Some(FailureCategory::WrongOutput)
    } else {
        None
    }
}

#[derive(Deserialize)]
struct BehaviorReply {
    trigger_condition: String,
    expected_failure: String,
}

/// Asks for the trigger condition and expected failure. An unreadable
/// category falls back to wrong output with a warning.
pub fn describe_behavior(
    desc: &DefectDescriptor,
    source: &LanguageId,
    prompter: &Prompter,
    retries: u32,
) -> Result<BehaviorSpec, LlmError> {
    let rendered = diff::render(&desc.diff);
    let b = bindings([
        ("source_lang", source.as_str()),
        ("defect_type", &desc.defect_type),
        ("root_cause", &desc.root_cause),
        ("diff", &rendered),
    ]);
    let reply: Option<BehaviorReply> = prompter.ask_structured(template::BEHAVIOR, &b, 0, retries)?;
    let (trigger, failure) = match reply {
        Some(r) => (r.trigger_condition.trim().to_string(), r.expected_failure.trim().to_string()),
        None => (String::new(), String::new()),
    };
    let mapped = map_category(&failure);
    if mapped.is_none() {
        log::warn!("unmappable expected failure {failure:?}; using wrong_output");
    }
    Ok(BehaviorSpec {
        trigger_condition: if trigger.is_empty() { desc.root_cause.clone() } else { trigger },
        expected_failure: mapped.unwrap_or(FailureCategory::WrongOutput),
        description: failure,
        defaulted: mapped.is_none(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSets {
    pub trigger: Vec<String>,
    pub regression: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputClass {
    Trigger,
    Regression,
}

/// Source-side partition plus the buggy program's category on each input,
/// judged against the fixed program's output.
#[derive(Clone, Debug, Default)]
pub struct Partition {
    pub sets: InputSets,
    pub buggy_outcomes: BTreeMap<String, FailureCategory>,
    pub dropped: Vec<InputDiagnostic>,
}

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("source buggy program does not compile: {0}")]
    BuggyDoesNotCompile(String),
    #[error("no candidate scores to select from")]
    EmptyScores,
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Runs both source programs on each input. An input is a trigger when
/// the buggy program's behavior differs from the fixed one (different
/// category, or different output), and a regression input otherwise.
/// Inputs on which the fixed program itself fails to exit cleanly have no
/// reference behavior and are dropped.
pub fn partition_inputs(pair: &SourcePair, inputs: &[String], sandbox: &Sandbox) -> Result<Partition, InjectError> {
    if let SyntaxCheck::Invalid(d) = sandbox.syntax_check(&pair.lang, &pair.buggy)? {
        return Err(InjectError::BuggyDoesNotCompile(d));
    }
    let mut out = Partition::default();
    for input in inputs {
        let fixed = sandbox.execute(&pair.lang, &pair.fixed, input, None)?;
        if !fixed.category.terminated_normally() {
            out.dropped.push(InputDiagnostic {
                input: input.clone(),
                reason: format!("fixed program: {}", fixed.category.name()),
            });
            continue;
        }
        let buggy = sandbox.execute(&pair.lang, &pair.buggy, input, Some(&fixed.stdout))?;
        match buggy.category {
            FailureCategory::Pass => out.sets.regression.push(input.clone()),
            _ => out.sets.trigger.push(input.clone()),
        }
        out.buggy_outcomes.insert(input.clone(), buggy.category);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub enum InputConstruction {
    Built(Partition),
    Discarded { reason: String, partition: Partition },
}

/// Proposes inputs guided by the behavior spec, adds the oracle suite's
/// inputs, and partitions the union. No trigger input means discard.
#[allow(clippy::too_many_arguments)]
pub fn construct_input_sets(
    pair: &SourcePair,
    spec: &BehaviorSpec,
    suite: &TestSuite,
    prompter: &Prompter,
    sandbox: &Sandbox,
    budget: usize,
    retries: u32,
) -> Result<InputConstruction, InjectError> {
    let mut proposed = Vec::new();
    if budget > 0 {
        let n = budget.to_string();
        let failure = spec.prompt_text();
        let b = bindings([
            ("source_lang", pair.lang.as_str()),
            ("buggy", &pair.buggy),
            ("fixed", &pair.fixed),
            ("trigger_condition", &spec.trigger_condition),
            ("expected_failure", &failure),
            ("count", &n),
        ]);
        #[derive(Deserialize)]
        struct Reply {
            inputs: Vec<serde_json::Value>,
        }
        let reply: Option<Reply> = prompter.ask_structured(template::TRIGGER_INPUTS, &b, 0, retries)?;
        proposed = reply
            .map(|r| {
                r.inputs
                    .into_iter()
                    .filter_map(|v| match v {
                        serde_json::Value::String(s) => Some(s),
                        serde_json::Value::Null => None,
                        other => Some(other.to_string()),
                    })
                    .take(budget)
                    .collect()
            })
            .unwrap_or_default();
    }
    let all = dedup(proposed.into_iter().chain(suite.inputs()), usize::MAX);
    let partition = partition_inputs(pair, &all, sandbox)?;
    if partition.sets.trigger.is_empty() {
        return Ok(InputConstruction::Discarded {
            reason: "no trigger inputs".into(),
            partition,
        });
    }
    Ok(InputConstruction::Built(partition))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Valid,
    NoCode,
    SyntaxError,
    IdenticalToFixed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub index: u32,
    pub program: Option<String>,
    pub status: CandidateStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_index: u32,
    pub n_defect: u32,
    pub n_reg: u32,
    pub status: CandidateStatus,
}

/// Requests `n` candidates (sample index `i` for candidate `i`), marking
/// ones without code, with syntax errors, or identical to the fixed
/// program. All are kept so indices stay aligned with requests.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidates(
    tgt_fixed: &str,
    desc: &DefectDescriptor,
    spec: &BehaviorSpec,
    target: &LanguageId,
    prompter: &Prompter,
    sandbox: &Sandbox,
    n: u32,
) -> Result<Vec<Candidate>, InjectError> {
    if n == 0 {
        return Err(InjectError::ZeroCandidates);
    }
    let hunks = diff::render(&desc.diff);
    let failure = spec.prompt_text();
    let b = bindings([
        ("target_lang", target.as_str()),
        ("tgt_fixed", tgt_fixed),
        ("defect_type", &desc.defect_type),
        ("root_cause", &desc.root_cause),
        ("trigger_condition", &spec.trigger_condition),
        ("expected_failure", &failure),
        ("diff_hunks", &hunks),
    ]);
    let mut out = Vec::new();
    for i in 1..=n {
        let reply = prompter.ask(template::INJECT, b.clone(), i)?;
        let program = extract::last_code_block(&reply);
        let status = match &program {
            None => CandidateStatus::NoCode,
            Some(p) if !differs_semantically(p, tgt_fixed) => CandidateStatus::IdenticalToFixed,
            Some(p) => match sandbox.syntax_check(target, p)? {
                SyntaxCheck::Valid => CandidateStatus::Valid,
                SyntaxCheck::Invalid(_) => CandidateStatus::SyntaxError,
            },
        };
        out.push(Candidate { index: i, program, status });
    }
    Ok(out)
}

/// The target fixed program's behavior on each input, computed once per
/// pair and shared by every candidate.
#[derive(Clone, Debug, Default)]
pub struct TargetReference {
    /// `Some(normalized stdout)` when the program exited cleanly.
    pub outputs: BTreeMap<String, Option<String>>,
}

impl TargetReference {
    pub fn compute(
        tgt_fixed: &str,
        target: &LanguageId,
        sets: &InputSets,
        sandbox: &Sandbox,
    ) -> Result<Self, SandboxError> {
        let mut outputs = BTreeMap::new();
        for input in sets.trigger.iter().chain(&sets.regression) {
            let o = sandbox.execute(target, tgt_fixed, input, None)?;
            let out = o.category.terminated_normally().then(|| normalize_output(&o.stdout));
            outputs.insert(input.clone(), out);
        }
        Ok(Self { outputs })
    }

    pub fn expected(&self, input: &str) -> Option<&str> {
        self.outputs.get(input).and_then(|o| o.as_deref())
    }
}

/// Counts defect and regression consistency from per-input categories.
///
/// `trigger` holds `(candidate category, source buggy category)` for each
/// trigger input where the target fixed program exited cleanly; the
/// candidate category is judged against the target fixed output, so a
/// wrong-output match means "differs from its own fixed program".
/// `regression` holds the candidate category for each regression input
/// where the target fixed program exited cleanly.
pub fn score_outcomes(
    trigger: &[(FailureCategory, FailureCategory)],
    regression: &[FailureCategory],
) -> (u32, u32) {
    let n_defect = trigger.iter().filter(|(cand, src)| cand == src).count() as u32;
    let n_reg = regression.iter().filter(|c| **c == FailureCategory::Pass).count() as u32;
    (n_defect, n_reg)
}

pub fn score_candidate(
    candidate: &Candidate,
    target: &LanguageId,
    sets: &InputSets,
    buggy_outcomes: &BTreeMap<String, FailureCategory>,
    reference: &TargetReference,
    sandbox: &Sandbox,
) -> Result<CandidateScore, SandboxError> {
    let zero = CandidateScore {
        candidate_index: candidate.index,
        n_defect: 0,
        n_reg: 0,
        status: candidate.status,
    };
    let program = match (&candidate.program, candidate.status) {
        (Some(p), CandidateStatus::Valid) => p,
        _ => return Ok(zero),
    };
    let mut trig = Vec::new();
    for input in &sets.trigger {
        let (Some(expected), Some(src)) = (reference.expected(input), buggy_outcomes.get(input)) else {
            continue;
        };
        let o = sandbox.execute(target, program, input, Some(expected))?;
        trig.push((o.category, *src));
    }
    let mut reg = Vec::new();
    for input in &sets.regression {
        let Some(expected) = reference.expected(input) else {
            continue;
        };
        reg.push(sandbox.execute(target, program, input, Some(expected))?.category);
    }
    let (n_defect, n_reg) = score_outcomes(&trig, &reg);
    Ok(CandidateScore {
        n_defect,
        n_reg,
        ..zero
    })
}

/// Lexicographic argmax over `(n_defect, n_reg)`; ties go to the lowest
/// candidate index. `None` when no candidate reproduces the defect.
pub fn select_buggy(scores: &[CandidateScore]) -> Result<Option<u32>, InjectError> {
    let best = scores
        .iter()
        .min_by(|a, b| {
            (b.n_defect, b.n_reg)
                .cmp(&(a.n_defect, a.n_reg))
                .then(a.candidate_index.cmp(&b.candidate_index))
        })
        .ok_or(InjectError::EmptyScores)?;
    Ok((best.n_defect > 0).then_some(best.candidate_index))
}

/// True when `buggy` fails at least one trigger input against the target
/// fixed program's output.
pub fn defect_observable(
    buggy: &str,
    target: &LanguageId,
    sets: &InputSets,
    reference: &TargetReference,
    sandbox: &Sandbox,
) -> Result<bool, SandboxError> {
    for input in &sets.trigger {
        if let Some(expected) = reference.expected(input) {
            if sandbox.execute(target, buggy, input, Some(expected))?.category != FailureCategory::Pass {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[derive(Clone, Debug)]
pub enum InjectionOutcome {
    Injected {
        candidate: u32,
        program: String,
        scores: Vec<CandidateScore>,
    },
    Failed {
        reason: String,
        scores: Vec<CandidateScore>,
    },
}

/// Generates, scores and selects. `sets` must have a non-empty trigger set.
#[allow(clippy::too_many_arguments)]
pub fn inject_defect(
    tgt_fixed: &str,
    desc: &DefectDescriptor,
    spec: &BehaviorSpec,
    target: &LanguageId,
    partition: &Partition,
    prompter: &Prompter,
    sandbox: &Sandbox,
    n: u32,
) -> Result<InjectionOutcome, InjectError> {
    let candidates = generate_candidates(tgt_fixed, desc, spec, target, prompter, sandbox, n)?;
    if candidates.iter().all(|c| c.status == CandidateStatus::NoCode) {
        return Ok(InjectionOutcome::Failed {
            reason: "no candidate code extracted".into(),
            scores: Vec::new(),
        });
    }
    let reference = TargetReference::compute(tgt_fixed, target, &partition.sets, sandbox)?;
    let scores = candidates
        .iter()
        .map(|c| score_candidate(c, target, &partition.sets, &partition.buggy_outcomes, &reference, sandbox))
        .collect::<Result<Vec<_>, _>>()?;
    match select_buggy(&scores)? {
        Some(i) => {
            let program = candidates[(i - 1) as usize].program.clone().expect("scored candidate has code");
            Ok(InjectionOutcome::Injected {
                candidate: i,
                program,
                scores,
            })
        }
        None => Ok(InjectionOutcome::Failed {
            reason: "no candidate reproduces the defect".into(),
            scores,
        }),
    }
}
