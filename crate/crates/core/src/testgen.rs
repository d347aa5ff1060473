//! Oracle test suites for fixed source programs, and the coverage gate.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::SourcePair;
use crate::hash;
use crate::llm::{bindings, template, LlmError, Prompter};
use crate::sandbox::{normalize_output, CoverageReport, Sandbox, SandboxError, SyntaxCheck};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub cases: Vec<TestCase>,
    pub coverage: CoverageReport,
    pub tau: f64,
}

impl TestSuite {
    pub fn inputs(&self) -> Vec<String> {
        self.cases.iter().map(|c| c.input.clone()).collect()
    }

    pub fn admitted(&self) -> bool {
        gate_admits(&self.coverage, self.tau)
    }
}

/// Where a suite was written, plus enough to check it was not altered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRef {
    pub file: String,
    pub hash: String,
    pub cases: usize,
    pub line_pct: f64,
    pub branch_pct: f64,
}

/// Line and branch coverage must both reach `tau` (a fraction).
pub fn gate_admits(cov: &CoverageReport, tau: f64) -> bool {
    let bar = tau * 100.0 - 1e-9;
    cov.line_pct >= bar && cov.branch_pct >= bar
}

#[derive(Debug, Error)]
pub enum TestgenError {
    #[error("input count must be at least 1")]
    ZeroCount,
    #[error("no parseable inputs in model replies")]
    NoInputs,
    #[error("fixed program does not compile: {0}")]
    FixedDoesNotCompile(String),
    #[error("fixed program terminated abnormally on every input")]
    NoUsableInputs,
    #[error("suite file {path}: {reason}")]
    SuiteFile { path: String, reason: String },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Deserialize)]
struct InputsReply {
    inputs: Vec<Value>,
}

fn as_input(v: Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Asks for `count` stdin inputs and returns the distinct ones in reply
/// order, at most `count` of them.
pub fn propose_inputs(
    pair: &SourcePair,
    prompter: &Prompter,
    count: usize,
    first_sample: u32,
    retries: u32,
) -> Result<Vec<String>, TestgenError> {
    if count == 0 {
        return Err(TestgenError::ZeroCount);
    }
    let n = count.to_string();
    let b = bindings([("source_lang", pair.lang.as_str()), ("fixed", &pair.fixed), ("count", &n)]);
    let reply: Option<InputsReply> = prompter.ask_structured(template::TEST_INPUTS, &b, first_sample, retries)?;
    let inputs = dedup(reply.map(|r| r.inputs).unwrap_or_default().into_iter().filter_map(as_input), count);
    if inputs.is_empty() {
        return Err(TestgenError::NoInputs);
    }
    Ok(inputs)
}

pub(crate) fn dedup(inputs: impl IntoIterator<Item = String>, limit: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    inputs
        .into_iter()
        .filter(|i| seen.insert(i.clone()))
        .take(limit)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDiagnostic {
    pub input: String,
    pub reason: String,
}

/// Cases kept from a batch of inputs, plus why the rest were dropped.
#[derive(Clone, Debug, Default)]
pub struct OracleRun {
    pub cases: Vec<TestCase>,
    pub discarded: Vec<InputDiagnostic>,
}

/// Runs the fixed program twice on each input. Inputs on which it does not
/// exit cleanly, or prints different output across the two runs, are
/// discarded.
pub fn run_oracle(pair: &SourcePair, inputs: &[String], sandbox: &Sandbox) -> Result<OracleRun, TestgenError> {
    if let SyntaxCheck::Invalid(diag) = sandbox.syntax_check(&pair.lang, &pair.fixed)? {
        return Err(TestgenError::FixedDoesNotCompile(diag));
    }
    let mut out = OracleRun::default();
    for input in inputs {
        let first = sandbox.execute(&pair.lang, &pair.fixed, input, None)?;
        let reason = if !first.category.terminated_normally() {
            Some(format!("fixed program: {}", first.category.name()))
        } else {
            let second = sandbox.execute(&pair.lang, &pair.fixed, input, None)?;
            (!second.category.terminated_normally()
                || normalize_output(&second.stdout) != normalize_output(&first.stdout))
            .then(|| "nondeterministic output".to_string())
        };
        match reason {
            Some(reason) => {
                log::debug!("{}: discarding input: {reason}", pair.id);
                out.discarded.push(InputDiagnostic {
                    input: input.clone(),
                    reason,
                });
            }
            None => out.cases.push(TestCase {
                input: input.clone(),
                expected: normalize_output(&first.stdout),
            }),
        }
    }
    Ok(out)
}

/// Builds a suite from `inputs` and measures its coverage. The suite is
/// returned whether or not it clears the gate; check `admitted()`.
pub fn build_oracle_suite(
    pair: &SourcePair,
    inputs: &[String],
    sandbox: &Sandbox,
    tau: f64,
) -> Result<(TestSuite, Vec<InputDiagnostic>), TestgenError> {
    if inputs.is_empty() {
        return Err(TestgenError::Sandbox(SandboxError::EmptySuite));
    }
    let run = run_oracle(pair, inputs, sandbox)?;
    if run.cases.is_empty() {
        return Err(TestgenError::NoUsableInputs);
    }
    let kept: Vec<String> = run.cases.iter().map(|c| c.input.clone()).collect();
    let coverage = sandbox.measure_coverage(&pair.lang, &pair.fixed, &kept)?;
    Ok((
        TestSuite {
            cases: run.cases,
            coverage,
            tau,
        },
        run.discarded,
    ))
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteBudget {
    pub tau: f64,
    pub batch: usize,
    pub rounds: u32,
    pub retries: u32,
}

impl Default for SuiteBudget {
    fn default() -> Self {
        Self {
            tau: 0.90,
            batch: 10,
            rounds: 3,
            retries: 2,
        }
    }
}

/// Result of the propose/run/measure loop.
#[derive(Clone, Debug)]
pub enum SuiteResult {
    Admitted(TestSuite),
    /// The last (largest) suite, which still missed the gate.
    GateFailed(TestSuite),
}

/// Proposes inputs in rounds until the cumulative suite clears the gate or
/// the round budget runs out. Each round only executes its new inputs.
pub fn generate_suite(
    pair: &SourcePair,
    prompter: &Prompter,
    sandbox: &Sandbox,
    budget: SuiteBudget,
) -> Result<SuiteResult, TestgenError> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut cases: Vec<TestCase> = Vec::new();
    let mut last = None;
    let stride = budget.retries + 1;
    for round in 0..budget.rounds.max(1) {
        let proposed = match propose_inputs(pair, prompter, budget.batch, round * stride, budget.retries) {
            Ok(p) => p,
            Err(TestgenError::NoInputs) if !cases.is_empty() => continue,
            Err(e) => return Err(e),
        };
        let fresh: Vec<String> = proposed.into_iter().filter(|i| seen.insert(i.clone())).collect();
        if fresh.is_empty() && last.is_some() {
            continue;
        }
        let run = run_oracle(pair, &fresh, sandbox)?;
        cases.extend(run.cases);
        if cases.is_empty() {
            continue;
        }
        let inputs: Vec<String> = cases.iter().map(|c| c.input.clone()).collect();
        let coverage = sandbox.measure_coverage(&pair.lang, &pair.fixed, &inputs)?;
        let suite = TestSuite {
            cases: cases.clone(),
            coverage,
            tau: budget.tau,
        };
        log::debug!(
            "{}: round {round}: {} cases, line {:.2}% branch {:.2}%",
            pair.id,
            suite.cases.len(),
            coverage.line_pct,
            coverage.branch_pct
        );
        if suite.admitted() {
            return Ok(SuiteResult::Admitted(suite));
        }
        last = Some(suite);
    }
    match last {
        Some(s) => Ok(SuiteResult::GateFailed(s)),
        None => Err(TestgenError::NoUsableInputs),
    }
}

#[derive(Serialize, Deserialize)]
struct SuiteHeader {
    kind: String,
    cases: usize,
    tau: f64,
    coverage: CoverageReport,
}

fn suite_bytes(suite: &TestSuite) -> Vec<u8> {
    let header = SuiteHeader {
        kind: "suite".into(),
        cases: suite.cases.len(),
        tau: suite.tau,
        coverage: suite.coverage,
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    for c in &suite.cases {
        serde_json::to_writer(&mut buf, c).expect("case serializes");
        buf.push(b'\n');
    }
    buf
}

/// Writes `suite` as JSONL under `dir` and returns a reference whose
/// `file` is relative to `dir`.
pub fn write_suite(dir: &Path, name: &str, suite: &TestSuite) -> Result<SuiteRef, TestgenError> {
    let file = format!("{name}.jsonl");
    let path = dir.join(&file);
    let bytes = suite_bytes(suite);
    let fail = |e: std::io::Error| TestgenError::SuiteFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(fail)?;
    let mut f = fs::File::create(&path).map_err(fail)?;
    f.write_all(&bytes).map_err(fail)?;
    f.sync_data().map_err(fail)?;
    Ok(SuiteRef {
        file,
        hash: hash::digest(&bytes),
        cases: suite.cases.len(),
        line_pct: suite.coverage.line_pct,
        branch_pct: suite.coverage.branch_pct,
    })
}

/// Loads a suite and checks it against the hash recorded in `r`.
pub fn read_suite(dir: &Path, r: &SuiteRef) -> Result<TestSuite, TestgenError> {
    let path = dir.join(&r.file);
    let fail = |reason: String| TestgenError::SuiteFile {
        path: path.display().to_string(),
        reason,
    };
    let bytes = fs::read(&path).map_err(|e| fail(e.to_string()))?;
    if hash::digest(&bytes) != r.hash {
        return Err(fail("content hash mismatch".into()));
    }
    let text = String::from_utf8(bytes).map_err(|e| fail(e.to_string()))?;
    let mut lines = text.lines();
    let header: SuiteHeader = lines
        .next()
        .ok_or_else(|| fail("empty file".into()))
        .and_then(|l| serde_json::from_str(l).map_err(|e| fail(e.to_string())))?;
    let cases = lines
        .map(|l| serde_json::from_str(l).map_err(|e| fail(e.to_string())))
        .collect::<Result<Vec<TestCase>, _>>()?;
    if cases.len() != header.cases {
        return Err(fail(format!("header says {} cases, found {}", header.cases, cases.len())));
    }
    Ok(TestSuite {
        cases,
        coverage: header.coverage,
        tau: header.tau,
    })
}
