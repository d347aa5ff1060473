//! Per-language toolchain profiles.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::FailureCategory;

/// A whitespace-separated command line with `{src}`, `{bin}`, `{dir}` and
/// `{input}` placeholders. No shell is involved, so quoting is not
/// supported; wrap complex commands in `sh -c` explicitly if needed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandTemplate {
    argv: Vec<String>,
}

impl CommandTemplate {
    pub fn parse(text: &str) -> Result<Self, String> {
        let argv: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err("empty command".into());
        }
        Ok(Self { argv })
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        let needle = format!("{{{placeholder}}}");
        self.argv.iter().any(|a| a.contains(&needle))
    }

    pub fn program(&self) -> &str {
        &self.argv[0]
    }

    pub fn render(&self, vars: &Vars<'_>) -> Vec<String> {
        self.argv
            .iter()
            .map(|a| {
                a.replace("{src}", &vars.src.display().to_string())
                    .replace("{bin}", &vars.bin.display().to_string())
                    .replace("{dir}", &vars.dir.display().to_string())
                    .replace("{input}", &vars.input.map(|p| p.display().to_string()).unwrap_or_default())
            })
            .collect()
    }
}

impl std::fmt::Display for CommandTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.argv.join(" "))
    }
}

pub struct Vars<'a> {
    pub src: &'a Path,
    pub bin: &'a Path,
    pub dir: &'a Path,
    pub input: Option<&'a Path>,
}

/// Maps a nonzero exit (not a signal) to a category when the stderr
/// pattern and/or exit code match. Both given means both must match.
#[derive(Clone, Debug)]
pub struct ClassifierHint {
    pub stderr: Option<Regex>,
    pub exit_code: Option<i32>,
    pub category: FailureCategory,
}

impl ClassifierHint {
    pub fn matches(&self, exit_code: i32, stderr: &str) -> bool {
        if self.stderr.is_none() && self.exit_code.is_none() {
            return false;
        }
        self.exit_code.is_none_or(|c| c == exit_code) && self.stderr.as_ref().is_none_or(|re| re.is_match(stderr))
    }
}

#[derive(Clone, Debug)]
pub struct CoverageProfile {
    /// Instrumented build; runs with the scratch directory as cwd.
    pub compile: CommandTemplate,
    /// Prints a gcov-style summary on stdout.
    pub report: CommandTemplate,
}

#[derive(Clone, Debug)]
pub struct ToolchainProfile {
    /// File name the program text is written to, e.g. `main.cpp`.
    pub source_file: String,
    pub compile: Option<CommandTemplate>,
    /// Parse-only check for interpreted languages.
    pub check: Option<CommandTemplate>,
    pub run: CommandTemplate,
    pub compile_timeout: Duration,
    pub run_timeout: Duration,
    pub memory_limit: u64,
    pub classifiers: Vec<ClassifierHint>,
    pub coverage: Option<CoverageProfile>,
}

/// Serialized form used in the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolchainSpec {
    pub source_file: String,
    #[serde(default)]
    pub compile: Option<String>,
    #[serde(default)]
    pub check: Option<String>,
    pub run: String,
    #[serde(default = "default_compile_timeout")]
    pub compile_timeout: f64,
    #[serde(default = "default_run_timeout")]
    pub run_timeout: f64,
    #[serde(default = "default_memory")]
    pub memory_limit: u64,
    #[serde(default)]
    pub classifiers: Vec<ClassifierSpec>,
    #[serde(default)]
    pub coverage: Option<CoverageSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    #[serde(default)]
    pub stderr: Option<String>,
    #[serde(default)]
    pub exit_code: Option<i32>,
    pub category: FailureCategory,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSpec {
    pub compile: String,
    pub report: String,
}

impl Default for ToolchainSpec {
    fn default() -> Self {
        Self {
            source_file: String::new(),
            compile: None,
            check: None,
            run: String::new(),
            compile_timeout: default_compile_timeout(),
            run_timeout: default_run_timeout(),
            memory_limit: default_memory(),
            classifiers: Vec::new(),
            coverage: None,
        }
    }
}

fn default_compile_timeout() -> f64 {
    60.0
}

fn default_run_timeout() -> f64 {
    10.0
}

fn default_memory() -> u64 {
    512 * 1024 * 1024
}

impl ToolchainSpec {
    /// Validates into a profile; errors are `(field, message)` pairs.
    pub fn validate(&self) -> Result<ToolchainProfile, Vec<(String, String)>> {
        let mut errs = Vec::new();
        let mut cmd = |field: &str, text: &str| match CommandTemplate::parse(text) {
            Ok(c) => Some(c),
            Err(e) => {
                errs.push((field.to_string(), e));
                None
            }
        };
        let run = cmd("run", &self.run);
        let compile = self.compile.as_deref().and_then(|c| cmd("compile", c));
        let check = self.check.as_deref().and_then(|c| cmd("check", c));
        let coverage = self.coverage.as_ref().and_then(|c| {
            Some(CoverageProfile {
                compile: cmd("coverage.compile", &c.compile)?,
                report: cmd("coverage.report", &c.report)?,
            })
        });
        if self.source_file.trim().is_empty() || self.source_file.contains('/') {
            errs.push(("source_file".into(), "must be a plain file name".into()));
        }
        if !(self.compile_timeout > 0.0) {
            errs.push(("compile_timeout".into(), "must be > 0".into()));
        }
        if !(self.run_timeout > 0.0) {
            errs.push(("run_timeout".into(), "must be > 0".into()));
        }
        if self.memory_limit == 0 {
            errs.push(("memory_limit".into(), "must be > 0".into()));
        }
        let mut classifiers = Vec::new();
        for (i, c) in self.classifiers.iter().enumerate() {
            if !matches!(c.category, FailureCategory::Crash | FailureCategory::Exception) {
                errs.push((format!("classifiers[{i}].category"), "must be crash or exception".into()));
            }
            let stderr = match c.stderr.as_deref().map(Regex::new).transpose() {
                Ok(r) => r,
                Err(e) => {
                    errs.push((format!("classifiers[{i}].stderr"), e.to_string()));
                    None
                }
            };
            classifiers.push(ClassifierHint {
                stderr,
                exit_code: c.exit_code,
                category: c.category,
            });
        }
        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(ToolchainProfile {
            source_file: self.source_file.clone(),
            compile,
            check,
            run: run.expect("checked"),
            compile_timeout: Duration::from_secs_f64(self.compile_timeout),
            run_timeout: Duration::from_secs_f64(self.run_timeout),
            memory_limit: self.memory_limit,
            classifiers,
            coverage,
        })
    }
}

/// Profiles for g++ (with gcov coverage), rustc, Ruby and Python.
pub fn default_specs() -> BTreeMap<String, ToolchainSpec> {
    let mut m = BTreeMap::new();
    m.insert(
        "cpp".into(),
        ToolchainSpec {
            source_file: "main.cpp".into(),
            compile: Some("g++ -std=c++17 -O2 -o {bin} {src}".into()),
            check: None,
            run: "{bin}".into(),
            compile_timeout: 60.0,
            run_timeout: 10.0,
            memory_limit: default_memory(),
            classifiers: vec![ClassifierSpec {
                stderr: Some("terminate called|std::".into()),
                exit_code: None,
                category: FailureCategory::Exception,
            }],
            coverage: Some(CoverageSpec {
                compile: "g++ -std=c++17 -O0 --coverage -fno-exceptions -o {bin} {src}".into(),
                report: "gcov -b -c -n {src}".into(),
            }),
        },
    );
    m.insert(
        "rust".into(),
        ToolchainSpec {
            source_file: "main.rs".into(),
            compile: Some("rustc --edition 2021 -o {bin} {src}".into()),
            check: None,
            run: "{bin}".into(),
            compile_timeout: 120.0,
            run_timeout: 10.0,
            memory_limit: default_memory(),
            classifiers: vec![ClassifierSpec {
                stderr: Some("panicked at".into()),
                exit_code: None,
                category: FailureCategory::Exception,
            }],
            coverage: None,
        },
    );
    m.insert(
        "ruby".into(),
        ToolchainSpec {
            source_file: "main.rb".into(),
            compile: None,
            check: Some("ruby -c {src}".into()),
            run: "ruby {src}".into(),
            compile_timeout: 30.0,
            run_timeout: 10.0,
            memory_limit: default_memory(),
            classifiers: vec![ClassifierSpec {
                stderr: Some(r"\((\w+::)*\w*(Error|Exception)\)|\w+Error".into()),
                exit_code: None,
                category: FailureCategory::Exception,
            }],
            coverage: None,
        },
    );
    m.insert(
        "python".into(),
        ToolchainSpec {
            source_file: "main.py".into(),
            compile: None,
            check: Some("python3 -m py_compile {src}".into()),
            run: "python3 {src}".into(),
            compile_timeout: 30.0,
            run_timeout: 10.0,
            memory_limit: default_memory(),
            classifiers: vec![ClassifierSpec {
                stderr: Some("Traceback".into()),
                exit_code: None,
                category: FailureCategory::Exception,
            }],
            coverage: None,
        },
    );
    m
}
