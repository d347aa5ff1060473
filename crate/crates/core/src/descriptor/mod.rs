//! Defect descriptors `<type, root cause, patch>` and the transferability
//! gate that decides whether a defect can exist in a target language.

pub mod diff;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::{apply, compute_diff, DiffError, Hunk, LineRange, PatchDiff};

use crate::corpus::{LanguageId, SourcePair};
use crate::llm::{bindings, template, LlmError, Prompter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectDescriptor {
    pub defect_type: String,
    pub root_cause: String,
    pub diff: PatchDiff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferabilityVerdict {
    pub transferable: bool,
    pub rationale: String,
    pub target_lang: LanguageId,
}

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("descriptor reply unparseable after {0} attempts")]
    Unparseable(u32),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Deserialize)]
struct DescriptorReply {
    defect_type: String,
    root_cause: String,
}

#[derive(Deserialize)]
struct VerdictReply {
    transferable: bool,
    #[serde(default)]
    rationale: String,
}

/// Computes the patch locally and asks the model for type and root cause.
/// The model never sees or produces the stored diff beyond the prompt.
pub fn build_descriptor(
    pair: &SourcePair,
    prompter: &Prompter,
    context_radius: usize,
    retries: u32,
) -> Result<DefectDescriptor, DescriptorError> {
    let diff = compute_diff(&pair.buggy, &pair.fixed, context_radius)?;
    let rendered = diff::render(&diff);
    let b = bindings([
        ("source_lang", pair.lang.as_str()),
        ("buggy", &pair.buggy),
        ("fixed", &pair.fixed),
        ("diff", &rendered),
    ]);
    let reply: Option<DescriptorReply> = prompter.ask_structured(template::DESCRIPTOR, &b, 0, retries)?;
    match reply {
        Some(r) if !r.defect_type.trim().is_empty() && !r.root_cause.trim().is_empty() => Ok(DefectDescriptor {
            defect_type: r.defect_type.trim().to_string(),
            root_cause: r.root_cause.trim().to_string(),
            diff,
        }),
        _ => Err(DescriptorError::Unparseable(retries + 1)),
    }
}

/// Asks whether the defect can be reproduced in `target`. An unparseable
/// verdict defaults to non-transferable.
pub fn assess_transferability(
    desc: &DefectDescriptor,
    source: &LanguageId,
    target: &LanguageId,
    prompter: &Prompter,
    retries: u32,
) -> Result<TransferabilityVerdict, LlmError> {
    let rendered = diff::render(&desc.diff);
    let b = bindings([
        ("source_lang", source.as_str()),
        ("target_lang", target.as_str()),
        ("defect_type", &desc.defect_type),
        ("root_cause", &desc.root_cause),
        ("diff", &rendered),
    ]);
    let reply: Option<VerdictReply> = prompter.ask_structured(template::TRANSFERABILITY, &b, 0, retries)?;
    Ok(match reply {
        Some(r) => {
            let rationale = if r.rationale.trim().is_empty() && !r.transferable {
                "no rationale given".to_string()
            } else {
                r.rationale.trim().to_string()
            };
            TransferabilityVerdict {
                transferable: r.transferable,
                rationale,
                target_lang: target.clone(),
            }
        }
        None => TransferabilityVerdict {
            transferable: false,
            rationale: "verdict unparseable".into(),
            target_lang: target.clone(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GenerationSettings, ScriptedModel, TemplateSet};
    use std::sync::Arc;

    const BUGGY: &str = "int main() {\n  int n; std::cin >> n;\n  for (int i = 0; i <= n; i++) f(i);\n}\n";

    fn pair() -> SourcePair {
        SourcePair::new("cpp".into(), BUGGY, &BUGGY.replace("i <= n", "i < n")).unwrap()
    }

    fn prompter(model: Arc<ScriptedModel>) -> Prompter {
        Prompter::new(model, Arc::new(TemplateSet::builtin()), GenerationSettings::default())
    }

    #[test]
    fn off_by_one_descriptor() {
        let model = Arc::new(ScriptedModel::new(|_| {
            Some("Analysis...\n```json\n{\"defect_type\": \"Off-by-one\", \"root_cause\": \"Incorrect relational operator '<='\"}\n```".into())
        }));
        let d = build_descriptor(&pair(), &prompter(model.clone()), 3, 2).unwrap();
        assert_eq!(d.defect_type, "Off-by-one");
        assert_eq!(d.root_cause, "Incorrect relational operator '<='");
        assert_eq!(d.diff.hunks.len(), 1);
        // The diff is the local one, byte-identical to compute_diff.
        assert_eq!(d.diff, compute_diff(&pair().buggy, &pair().fixed, 3).unwrap());
        let req = &model.requests()[0];
        assert!(req.bindings["diff"].contains("-  for (int i = 0; i <= n; i++) f(i);"));
    }

    #[test]
    fn malformed_twice_then_valid() {
        let model = Arc::new(ScriptedModel::new(|r| {
            Some(match r.sample_index {
                0 => "I think it's an off-by-one".into(),
                1 => "```json\n{\"defect_type\": \n```".into(),
                _ => "```json\n{\"defect_type\": \"T\", \"root_cause\": \"R\"}\n```".into(),
            })
        }));
        let d = build_descriptor(&pair(), &prompter(model.clone()), 3, 2).unwrap();
        assert_eq!((d.defect_type.as_str(), d.root_cause.as_str()), ("T", "R"));
        assert_eq!(model.count(template::DESCRIPTOR), 3);
    }

    #[test]
    fn unparseable_after_budget_is_error() {
        let model = Arc::new(ScriptedModel::new(|_| Some("nope".into())));
        let err = build_descriptor(&pair(), &prompter(model), 3, 1).unwrap_err();
        assert!(matches!(err, DescriptorError::Unparseable(2)));
    }

    fn descriptor(removed: &str, added: &str) -> DefectDescriptor {
        let buggy = format!("int main() {{\n{removed}\n}}\n");
        let fixed = format!("int main() {{\n{added}\n}}\n");
        DefectDescriptor {
            defect_type: "t".into(),
            root_cause: "r".into(),
            diff: compute_diff(&buggy, &fixed, 3).unwrap(),
        }
    }

    /// Mock judge that answers from the diff text, the way the prompt asks.
    fn judge() -> Arc<ScriptedModel> {
        Arc::new(ScriptedModel::new(|r| {
            let diff = &r.bindings["diff"];
            let memory = diff.contains("*(p +") || diff.contains("delete") || diff.contains("malloc");
            Some(format!(
                "```json\n{{\"transferable\": {}, \"rationale\": \"{}\"}}\n```",
                !memory,
                if memory { "relies on pointer arithmetic" } else { "language-agnostic logic" }
            ))
        }))
    }

    #[test]
    fn pointer_arithmetic_not_transferable_to_gc_language() {
        let d = descriptor("  int v = *(p + n);", "  int v = *(p + n - 1);");
        let v = assess_transferability(&d, &"cpp".into(), &"ruby".into(), &prompter(judge()), 1).unwrap();
        assert!(!v.transferable);
        assert!(!v.rationale.is_empty());
        assert_eq!(v.target_lang, LanguageId::new("ruby"));
    }

    #[test]
    fn arithmetic_off_by_one_transferable() {
        let d = descriptor("  for (int i = 0; i <= n; i++) s += a[i];", "  for (int i = 0; i < n; i++) s += a[i];");
        let v = assess_transferability(&d, &"cpp".into(), &"rust".into(), &prompter(judge()), 1).unwrap();
        assert!(v.transferable);
    }

    #[test]
    fn unparseable_verdict_defaults_to_filtered() {
        let model = Arc::new(ScriptedModel::new(|_| Some("maybe?".into())));
        let d = descriptor("a", "b");
        let v = assess_transferability(&d, &"cpp".into(), &"rust".into(), &prompter(model), 2).unwrap();
        assert!(!v.transferable);
        assert_eq!(v.rationale, "verdict unparseable");
    }
}
