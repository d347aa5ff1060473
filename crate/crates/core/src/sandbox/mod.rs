//! Isolated compile, run and coverage measurement for untrusted programs.
//!
//! Every run gets a fresh scratch directory, its own process group, a
//! wall-clock timeout and an address-space limit. Builds are cached by
//! program content, so re-running one program on many inputs compiles once.

pub mod coverage;
pub mod process;
pub mod profile;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coverage::{parse_gcov_summary, CoverageReport};
pub use profile::{default_specs, ToolchainProfile, ToolchainSpec};

use crate::corpus::LanguageId;
use crate::hash;
use crate::llm::limiter::RateLimiter;
use process::{Limits, RawRun, Termination};
use profile::Vars;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    Pass,
    WrongOutput,
    Crash,
    Exception,
    Timeout,
    CompileError,
}

impl FailureCategory {
    /// The program ran to a zero exit, whatever it printed.
    pub fn terminated_normally(self) -> bool {
        matches!(self, Self::Pass | Self::WrongOutput)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::WrongOutput => "wrong_output",
            Self::Crash => "crash",
            Self::Exception => "exception",
            Self::Timeout => "timeout",
            Self::CompileError => "compile_error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub category: FailureCategory,
    pub stdout: String,
    pub stderr: String,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SyntaxCheck {
    Valid,
    Invalid(String),
}

impl SyntaxCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, Self::Valid)
    }
}

#[derive(Debug, Error, Clone)]
pub enum SandboxError {
    #[error("no toolchain configured for language '{0}'")]
    UnknownLanguage(LanguageId),
    #[error("no coverage tooling configured for language '{0}'")]
    NoCoverage(LanguageId),
    #[error("coverage needs at least one input")]
    EmptySuite,
    #[error("instrumented build failed: {0}")]
    CoverageBuild(String),
    #[error("coverage report unreadable: {0}")]
    CoverageReport(String),
    #[error("sandbox setup failed: {0}")]
    Setup(String),
}

/// Strips trailing whitespace on each line and trailing blank lines.
pub fn normalize_output(s: &str) -> String {
    let lines: Vec<&str> = s.lines().map(str::trim_end).collect();
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    lines[..end].join("\n")
}

pub fn outputs_match(actual: &str, expected: &str) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

#[derive(Clone, Debug)]
enum Artifact {
    Ready { src: PathBuf, bin: PathBuf },
    Rejected(String),
}

type Slot = Arc<OnceLock<Result<Artifact, SandboxError>>>;

pub struct Sandbox {
    profiles: BTreeMap<LanguageId, ToolchainProfile>,
    root: tempfile::TempDir,
    builds: Mutex<HashMap<String, Slot>>,
    workers: RateLimiter,
}

const DIAG_LIMIT: usize = 4000;

fn clip(s: &str) -> String {
    if s.len() <= DIAG_LIMIT {
        return s.to_string();
    }
    let mut end = DIAG_LIMIT;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn setup_err(e: impl std::fmt::Display) -> SandboxError {
    SandboxError::Setup(e.to_string())
}

impl Sandbox {
    /// `workers` caps concurrent subprocesses. Scratch space lives under
    /// `scratch_parent` (or the system temp dir) and is removed on drop.
    pub fn new(
        profiles: BTreeMap<LanguageId, ToolchainProfile>,
        workers: usize,
        scratch_parent: Option<&Path>,
    ) -> Result<Self, SandboxError> {
        let root = match scratch_parent {
            Some(p) => {
                fs::create_dir_all(p).map_err(setup_err)?;
                tempfile::Builder::new().prefix("sandbox").tempdir_in(p)
            }
            None => tempfile::Builder::new().prefix("sandbox").tempdir(),
        }
        .map_err(setup_err)?;
        for sub in ["build", "run", "cov"] {
            fs::create_dir_all(root.path().join(sub)).map_err(setup_err)?;
        }
        Ok(Self {
            profiles,
            root,
            builds: Mutex::new(HashMap::new()),
            workers: RateLimiter::new(workers.max(1), 0),
        })
    }

    pub fn profile(&self, lang: &LanguageId) -> Result<&ToolchainProfile, SandboxError> {
        self.profiles
            .get(lang)
            .ok_or_else(|| SandboxError::UnknownLanguage(lang.clone()))
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> {
        self.profiles.keys()
    }

    /// Spawns with one retry: a failed spawn is usually a missing tool,
    /// occasionally a transient fork failure.
    fn spawn(&self, argv: &[String], cwd: &Path, stdin: &[u8], limits: Limits) -> Result<RawRun, SandboxError> {
        let _slot = self.workers.acquire();
        match process::run(argv, cwd, stdin, limits) {
            Ok(r) => Ok(r),
            Err(first) => {
                log::warn!("spawning '{}' failed ({first}); retrying once", argv[0]);
                process::run(argv, cwd, stdin, limits)
                    .map_err(|e| SandboxError::Setup(format!("cannot run '{}': {e}", argv[0])))
            }
        }
    }

    fn artifact(&self, lang: &LanguageId, program: &str) -> Result<Artifact, SandboxError> {
        let profile = self.profile(lang)?;
        let key = hash::digest_parts(&[lang.as_str().as_bytes(), program.as_bytes()]);
        let slot = {
            let mut builds = self.builds.lock().expect("build cache poisoned");
            builds.entry(key.clone()).or_default().clone()
        };
        slot.get_or_init(|| self.build(profile, &key, program)).clone()
    }

    fn build(&self, profile: &ToolchainProfile, key: &str, program: &str) -> Result<Artifact, SandboxError> {
        let dir = self.root.path().join("build").join(&key[..16]);
        fs::create_dir_all(&dir).map_err(setup_err)?;
        let src = dir.join(&profile.source_file);
        let bin = dir.join("prog");
        fs::write(&src, program).map_err(setup_err)?;
        let vars = Vars {
            src: &src,
            bin: &bin,
            dir: &dir,
            input: None,
        };
        let limits = Limits {
            wall: profile.compile_timeout,
            memory: None,
        };
        for step in [&profile.compile, &profile.check].into_iter().flatten() {
            let run = self.spawn(&step.render(&vars), &dir, b"", limits)?;
            match run.termination {
                Termination::Exited(0) => {}
                Termination::TimedOut => return Ok(Artifact::Rejected("build timed out".into())),
                _ => {
                    let mut diag = run.stderr_text();
                    if diag.trim().is_empty() {
                        diag = String::from_utf8_lossy(&run.stdout).into_owned();
                    }
                    return Ok(Artifact::Rejected(clip(&diag)));
                }
            }
        }
        Ok(Artifact::Ready { src, bin })
    }

    /// Compiles (or parse-checks) the program. The result is cached.
    pub fn syntax_check(&self, lang: &LanguageId, program: &str) -> Result<SyntaxCheck, SandboxError> {
        Ok(match self.artifact(lang, program)? {
            Artifact::Ready { .. } => SyntaxCheck::Valid,
            Artifact::Rejected(d) => SyntaxCheck::Invalid(d),
        })
    }

    /// Runs the program on `input`. With `expected`, a clean exit is
    /// classified as pass or wrong output; without it, as pass.
    pub fn execute(
        &self,
        lang: &LanguageId,
        program: &str,
        input: &str,
        expected: Option<&str>,
    ) -> Result<ExecutionOutcome, SandboxError> {
        let profile = self.profile(lang)?;
        let (src, bin) = match self.artifact(lang, program)? {
            Artifact::Ready { src, bin } => (src, bin),
            Artifact::Rejected(diag) => {
                return Ok(ExecutionOutcome {
                    category: FailureCategory::CompileError,
                    stdout: String::new(),
                    stderr: diag,
                    exit_code: None,
                    signal: None,
                    elapsed_ms: 0,
                })
            }
        };
        let scratch = tempfile::Builder::new()
            .prefix("r")
            .tempdir_in(self.root.path().join("run"))
            .map_err(setup_err)?;
        let input_path = scratch.path().join("input.txt");
        fs::write(&input_path, input).map_err(setup_err)?;
        let argv = profile.run.render(&Vars {
            src: &src,
            bin: &bin,
            dir: scratch.path(),
            input: Some(&input_path),
        });
        let limits = Limits {
            wall: profile.run_timeout,
            memory: Some(profile.memory_limit),
        };
        let run = self.spawn(&argv, scratch.path(), input.as_bytes(), limits)?;
        Ok(classify(profile, &run, expected))
    }

    /// Builds an instrumented binary, runs every input, and reads the
    /// coverage summary for the program's own source file.
    pub fn measure_coverage(
        &self,
        lang: &LanguageId,
        program: &str,
        inputs: &[String],
    ) -> Result<CoverageReport, SandboxError> {
        let profile = self.profile(lang)?;
        let cov = profile
            .coverage
            .as_ref()
            .ok_or_else(|| SandboxError::NoCoverage(lang.clone()))?;
        if inputs.is_empty() {
            return Err(SandboxError::EmptySuite);
        }
        let dir = tempfile::Builder::new()
            .prefix("c")
            .tempdir_in(self.root.path().join("cov"))
            .map_err(setup_err)?;
        let src = dir.path().join(&profile.source_file);
        // gcov finds its notes by the object stem, so the binary shares it.
        let stem = Path::new(&profile.source_file)
            .file_stem()
            .map_or("prog".into(), |s| s.to_string_lossy().into_owned());
        let bin = dir.path().join(stem);
        fs::write(&src, program).map_err(setup_err)?;
        let input_path = dir.path().join("input.txt");
        let vars = Vars {
            src: &src,
            bin: &bin,
            dir: dir.path(),
            input: Some(&input_path),
        };
        let build_limits = Limits {
            wall: profile.compile_timeout,
            memory: None,
        };
        let built = self.spawn(&cov.compile.render(&vars), dir.path(), b"", build_limits)?;
        if !built.success() {
            return Err(SandboxError::CoverageBuild(clip(&built.stderr_text())));
        }
        let run_limits = Limits {
            wall: profile.run_timeout,
            memory: Some(profile.memory_limit),
        };
        for input in inputs {
            fs::write(&input_path, input).map_err(setup_err)?;
            let run = self.spawn(&profile.run.render(&vars), dir.path(), input.as_bytes(), run_limits)?;
            if !run.success() {
                log::debug!("instrumented run ended with {:?}", run.termination);
            }
        }
        let report = self.spawn(&cov.report.render(&vars), dir.path(), b"", build_limits)?;
        let text = String::from_utf8_lossy(&report.stdout);
        parse_gcov_summary(&text, &profile.source_file).ok_or_else(|| {
            SandboxError::CoverageReport(clip(&format!("{}{}", text, report.stderr_text())))
        })
    }
}

fn classify(profile: &ToolchainProfile, run: &RawRun, expected: Option<&str>) -> ExecutionOutcome {
    let stdout = String::from_utf8_lossy(&run.stdout).into_owned();
    let stderr = run.stderr_text();
    let (exit_code, signal) = match run.termination {
        Termination::Exited(c) => (Some(c), None),
        Termination::Signaled(s) => (None, Some(s)),
        Termination::TimedOut => (None, None),
    };
    let category = match run.termination {
        Termination::TimedOut => FailureCategory::Timeout,
        Termination::Exited(0) => match expected {
            Some(e) if !outputs_match(&stdout, e) => FailureCategory::WrongOutput,
            _ => FailureCategory::Pass,
        },
        Termination::Exited(code) | Termination::Signaled(code) => {
            // Signals are matched against the shell convention 128 + n.
            let code = if signal.is_some() { 128 + code } else { code };
            profile
                .classifiers
                .iter()
                .find(|h| h.matches(code, &stderr))
                .map_or(FailureCategory::Crash, |h| h.category)
        }
    };
    ExecutionOutcome {
        category,
        stdout,
        stderr: clip(&stderr),
        exit_code,
        signal,
        elapsed_ms: run.elapsed.as_millis() as u64,
    }
}
