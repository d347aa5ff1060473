//! Prompt templates with `{name}` placeholders.
//!
//! A placeholder is `{` followed by a lowercase identifier and `}`. Anything
//! else in braces (JSON examples, code) is literal text. Substitution is a
//! single pass over the template, so bound values are never rescanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

use crate::hash::digest_parts;

pub const DESCRIPTOR: &str = "descriptor";
pub const TRANSFERABILITY: &str = "transferability";
pub const TEST_INPUTS: &str = "test_inputs";
pub const TRANSLATE: &str = "translate";
pub const BEHAVIOR: &str = "behavior";
pub const TRIGGER_INPUTS: &str = "trigger_inputs";
pub const INJECT: &str = "inject";
pub const STAGE1: &str = "curriculum_stage1";
pub const STAGE2: &str = "curriculum_stage2";
pub const STAGE3: &str = "curriculum_stage3";

const BUILTIN: &[(&str, &str)] = &[
    (DESCRIPTOR, include_str!("../../templates/descriptor.txt")),
    (TRANSFERABILITY, include_str!("../../templates/transferability.txt")),
    (TEST_INPUTS, include_str!("../../templates/test_inputs.txt")),
    (TRANSLATE, include_str!("../../templates/translate.txt")),
    (BEHAVIOR, include_str!("../../templates/behavior.txt")),
    (TRIGGER_INPUTS, include_str!("../../templates/trigger_inputs.txt")),
    (INJECT, include_str!("../../templates/inject.txt")),
    (STAGE1, include_str!("../../templates/curriculum_stage1.txt")),
    (STAGE2, include_str!("../../templates/curriculum_stage2.txt")),
    (STAGE3, include_str!("../../templates/curriculum_stage3.txt")),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").unwrap())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown template {0}")]
    Unknown(String),
    #[error("template {template} has unbound placeholder {{{name}}}")]
    Unbound { template: String, name: String },
    #[error("cannot read template {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Clone, Debug)]
pub struct Template {
    pub text: String,
    pub placeholders: BTreeSet<String>,
}

impl Template {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let placeholders = placeholder_re()
            .captures_iter(&text)
            .map(|c| c[1].to_string())
            .collect();
        Self { text, placeholders }
    }

    /// First placeholder with no binding, if any.
    pub fn unbound<'a>(&'a self, bindings: &BTreeMap<String, String>) -> Option<&'a str> {
        self.placeholders
            .iter()
            .find(|p| !bindings.contains_key(*p))
            .map(String::as_str)
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, String> {
        if let Some(name) = self.unbound(bindings) {
            return Err(name.to_string());
        }
        Ok(placeholder_re()
            .replace_all(&self.text, |c: &regex::Captures<'_>| bindings[&c[1]].clone())
            .into_owned())
    }
}

/// Named templates: the built-in set, optionally overridden per file from a
/// directory (`<dir>/<id>.txt`).
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(id, text)| (id.to_string(), Template::new(*text)))
                .collect(),
        }
    }

    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for (id, _) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| TemplateError::Read {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                set.insert(id, text);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: &str, text: impl Into<String>) {
        self.templates.insert(id.to_string(), Template::new(text));
    }

    pub fn get(&self, id: &str) -> Result<&Template, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::Unknown(id.to_string()))
    }

    pub fn render(&self, id: &str, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        self.get(id)?.render(bindings).map_err(|name| TemplateError::Unbound {
            template: id.to_string(),
            name,
        })
    }

    /// Hash over the listed templates' ids and texts.
    pub fn hash_of(&self, ids: &[&str]) -> Result<String, TemplateError> {
        let mut parts: Vec<&[u8]> = Vec::new();
        for id in ids {
            parts.push(id.as_bytes());
            parts.push(self.get(id)?.text.as_bytes());
        }
        Ok(digest_parts(&parts))
    }

    /// Writes the built-in templates into `dir` for editing.
    pub fn export_builtin(dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (id, text) in BUILTIN {
            fs::write(dir.join(format!("{id}.txt")), text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn json_and_code_braces_are_not_placeholders() {
        let t = Template::new("Reply {\"a\": 1} for {lang}; int main() { }");
        assert_eq!(t.placeholders.iter().collect::<Vec<_>>(), ["lang"]);
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let t = Template::new("<{code}>");
        let out = t.render(&b(&[("code", "{code} {x}")])).unwrap();
        assert_eq!(out, "<{code} {x}>");
    }

    #[test]
    fn unbound_placeholder_is_reported() {
        let set = TemplateSet::builtin();
        let err = set.render(TRANSLATE, &b(&[("fixed_src", "x")])).unwrap_err();
        assert!(matches!(err, TemplateError::Unbound { .. }));
    }

    #[test]
    fn builtin_templates_declare_documented_placeholders() {
        let set = TemplateSet::builtin();
        let has = |id: &str, names: &[&str]| {
            let t = set.get(id).unwrap();
            for n in names {
                assert!(t.placeholders.contains(*n), "{id} lacks {{{n}}}");
            }
        };
        has(DESCRIPTOR, &["buggy", "fixed", "diff"]);
        has(TRANSFERABILITY, &["diff", "target_lang"]);
        has(
            TRANSLATE,
            &["fixed_src", "diff_hunks", "defect_type", "root_cause", "source_lang", "target_lang"],
        );
        has(
            INJECT,
            &[
                "tgt_fixed",
                "defect_type",
                "root_cause",
                "diff_hunks",
                "trigger_condition",
                "expected_failure",
                "target_lang",
            ],
        );
    }

    #[test]
    fn overrides_replace_single_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("descriptor.txt"), "custom {buggy}").unwrap();
        let set = TemplateSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get(DESCRIPTOR).unwrap().text, "custom {buggy}");
        assert_eq!(
            set.get(TRANSLATE).unwrap().text,
            TemplateSet::builtin().get(TRANSLATE).unwrap().text
        );
    }
}
