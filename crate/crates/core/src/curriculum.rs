//! Three-stage training datasets: source repair, cross-lingual
//! demonstration on parallel quads, and target repair.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::journal::{PipelineState, Stage, StageEvent};
use crate::corpus::{ParallelQuad, SourcePair};
use crate::hash;
use crate::llm::{bindings, template, TemplateError, TemplateSet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u8,
    pub prompt: String,
    pub completion: String,
    /// Source pairs are referenced by id, target pairs by `id@lang`.
    pub pair_ids: Vec<String>,
}

/// What the emitter reads: transferable source pairs and verified quads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub sources: BTreeMap<String, SourcePair>,
    /// Keyed by `id@lang`.
    pub quads: BTreeMap<String, ParallelQuad>,
}

impl Corpus {
    /// Collects from one journal per target language.
    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a PipelineState>) -> Self {
        let mut c = Corpus::default();
        for state in states {
            for (id, h) in &state.pairs {
                let Some(src) = h.source_pair() else { continue };
                if h.reached(Stage::Transferable) {
                    c.sources.insert(id.clone(), src.clone());
                }
                if let Some(StageEvent::QuadVerified { target }) = h.event(Stage::QuadVerified) {
                    if let Ok(q) = ParallelQuad::new(src.clone(), target.clone()) {
                        c.quads.insert(target.key(), q);
                    }
                }
            }
        }
        c
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&(&self.sources, &self.quads)).expect("corpus serializes");
        hash::digest(&bytes)
    }
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("stage {0} has no eligible records")]
    Empty(u8),
    #[error("unknown stage {0}")]
    UnknownStage(u8),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Builds the records of one stage in key order.
pub fn stage_records(stage: u8, corpus: &Corpus, templates: &TemplateSet) -> Result<Vec<StageRecord>, CurriculumError> {
    let records: Vec<StageRecord> = match stage {
        1 => corpus
            .sources
            .iter()
            .map(|(id, s)| {
                let b = bindings([("src_lang", s.lang.as_str()), ("src_buggy", &s.buggy)]);
                Ok(StageRecord {
                    stage,
                    prompt: templates.render(template::STAGE1, &b)?,
                    completion: s.fixed.clone(),
                    pair_ids: vec![id.clone()],
                })
            })
            .collect::<Result<_, TemplateError>>()?,
        2 => corpus
            .quads
            .iter()
            .map(|(key, q)| {
                let b = bindings([
                    ("src_lang", q.src.lang.as_str()),
                    ("tgt_lang", q.tgt.lang.as_str()),
                    ("src_buggy", &q.src.buggy),
                    ("src_fixed", &q.src.fixed),
                    ("tgt_buggy", &q.tgt.buggy),
                ]);
                Ok(StageRecord {
                    stage,
                    prompt: templates.render(template::STAGE2, &b)?,
                    completion: q.tgt.fixed.clone(),
                    pair_ids: vec![q.src.id.clone(), key.clone()],
                })
            })
            .collect::<Result<_, TemplateError>>()?,
        3 => corpus
            .quads
            .iter()
            .map(|(key, q)| {
                let b = bindings([("tgt_lang", q.tgt.lang.as_str()), ("tgt_buggy", &q.tgt.buggy)]);
                Ok(StageRecord {
                    stage,
                    prompt: templates.render(template::STAGE3, &b)?,
                    completion: q.tgt.fixed.clone(),
                    pair_ids: vec![key.clone()],
                })
            })
            .collect::<Result<_, TemplateError>>()?,
        other => return Err(CurriculumError::UnknownStage(other)),
    };
    if records.is_empty() {
        return Err(CurriculumError::Empty(stage));
    }
    Ok(records)
}

pub fn to_jsonl(records: &[StageRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFile {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageFile>,
    pub corpus_hash: String,
    pub template_hash: String,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CurriculumError> {
    fs::write(path, bytes).map_err(|source| CurriculumError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `stage{1,2,3}.jsonl` and `manifest.json` into `dir`. All three
/// stages are built before anything is written, so an ineligible stage
/// leaves the directory untouched.
pub fn emit(corpus: &Corpus, templates: &TemplateSet, dir: &Path) -> Result<Manifest, CurriculumError> {
    let mut bodies = Vec::new();
    for stage in 1..=3u8 {
        let records = stage_records(stage, corpus, templates)?;
        bodies.push((stage, records.len(), to_jsonl(&records)));
    }
    fs::create_dir_all(dir).map_err(|source| CurriculumError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut stages = BTreeMap::new();
    for (stage, count, body) in bodies {
        let file = format!("stage{stage}.jsonl");
        write(&dir.join(&file), body.as_bytes())?;
        stages.insert(
            format!("stage{stage}"),
            StageFile {
                file,
                records: count,
                sha256: hash::digest(body.as_bytes()),
            },
        );
    }
    let manifest = Manifest {
        stages,
        corpus_hash: corpus.hash(),
        template_hash: templates.hash_of(&[template::STAGE1, template::STAGE2, template::STAGE3])?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}
