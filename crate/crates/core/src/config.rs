//! The TOML configuration file: paths, pipeline budgets, model endpoint,
//! and per-language toolchains.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguageId;
use crate::eval::LinterSpec;
use crate::llm::{GenerationParams, GenerationSettings};
use crate::sandbox::{ToolchainProfile, ToolchainSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub llm: LlmSettings,
    #[serde(default)]
    pub toolchains: BTreeMap<String, ToolchainSpec>,
    #[serde(default)]
    pub eval: EvalSettings,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Seed source pairs (JSONL).
    pub input: PathBuf,
    pub source_lang: String,
    /// Suites, scratch space and outputs live here.
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Optional directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
}

fn default_work_dir() -> PathBuf {
    "work".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub tau: f64,
    pub m: u32,
    pub n: u32,
    pub test_batch: usize,
    pub test_rounds: u32,
    pub trigger_budget: usize,
    /// Extra attempts for structured replies.
    pub retries: u32,
    pub context_radius: usize,
    pub workers: usize,
    pub targets: Vec<String>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            tau: 0.90,
            m: 5,
            n: 5,
            test_batch: 10,
            test_rounds: 3,
            trigger_budget: 10,
            retries: 2,
            context_radius: 3,
            workers: 4,
            targets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout: f64,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    pub transport_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub templates: BTreeMap<String, TemplateParams>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            api_key_env: "BUGBRIDGE_API_KEY".into(),
            timeout: 120.0,
            max_in_flight: 4,
            requests_per_minute: 60,
            transport_retries: 5,
            temperature: 1.0,
            max_tokens: 4096,
            templates: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default)]
    pub linter: Option<LinterSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

fn err(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        let errors = cfg.validate();
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        Ok(cfg)
    }

    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        let p = &self.pipeline;
        if !(p.tau > 0.0 && p.tau <= 1.0) {
            e.push(err("pipeline.tau", "must be in (0, 1]"));
        }
        for (name, v) in [
            ("pipeline.m", p.m as usize),
            ("pipeline.n", p.n as usize),
            ("pipeline.test_batch", p.test_batch),
            ("pipeline.test_rounds", p.test_rounds as usize),
            ("pipeline.workers", p.workers),
        ] {
            if v == 0 {
                e.push(err(name, "must be at least 1"));
            }
        }
        let l = &self.llm;
        if !(l.temperature >= 0.0) {
            e.push(err("llm.temperature", "must be >= 0"));
        }
        if l.max_tokens == 0 {
            e.push(err("llm.max_tokens", "must be at least 1"));
        }
        if l.max_in_flight == 0 {
            e.push(err("llm.max_in_flight", "must be at least 1"));
        }
        if !(l.timeout > 0.0) {
            e.push(err("llm.timeout", "must be > 0"));
        }
        for (lang, spec) in &self.toolchains {
            if let Err(errs) = spec.validate() {
                e.extend(errs.into_iter().map(|(f, m)| err(format!("toolchains.{lang}.{f}"), m)));
            }
        }
        let src = &self.paths.source_lang;
        match self.toolchains.get(src) {
            None => e.push(err("paths.source_lang", format!("no [toolchains.{src}] section"))),
            Some(t) if t.coverage.is_none() => e.push(err(
                format!("toolchains.{src}.coverage"),
                "the source language needs coverage commands",
            )),
            Some(_) => {}
        }
        for (i, t) in p.targets.iter().enumerate() {
            if let Err(m) = self.target_problem(t) {
                e.push(err(format!("pipeline.targets[{i}]"), m));
            }
        }
        e
    }

    fn target_problem(&self, target: &str) -> Result<(), String> {
        if target == self.paths.source_lang {
            return Err(format!("'{target}' is the source language"));
        }
        if !self.toolchains.contains_key(target) {
            return Err(format!("no [toolchains.{target}] section"));
        }
        Ok(())
    }

    /// Checks a target given on the command line.
    pub fn check_target(&self, target: &str) -> Result<LanguageId, ConfigError> {
        self.target_problem(target)
            .map(|_| LanguageId::new(target))
            .map_err(|m| ConfigError::Invalid(vec![err("--target-lang", m)]))
    }

    pub fn source_lang(&self) -> LanguageId {
        LanguageId::new(self.paths.source_lang.as_str())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn profiles(&self) -> BTreeMap<LanguageId, ToolchainProfile> {
        self.toolchains
            .iter()
            .map(|(k, v)| (LanguageId::new(k.as_str()), v.validate().expect("validated on load")))
            .collect()
    }

    pub fn generation_settings(&self) -> GenerationSettings {
        let default = GenerationParams {
            temperature: self.llm.temperature,
            max_tokens: self.llm.max_tokens,
        };
        let per_template = self
            .llm
            .templates
            .iter()
            .map(|(id, t)| {
                (
                    id.clone(),
                    GenerationParams {
                        temperature: t.temperature.unwrap_or(default.temperature),
                        max_tokens: t.max_tokens.unwrap_or(default.max_tokens),
                    },
                )
            })
            .collect();
        GenerationSettings { default, per_template }
    }
}
