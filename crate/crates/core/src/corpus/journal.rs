//! Append-only pipeline journal.
//!
//! One record per line: `<checksum> <json>\n`, where the checksum is the
//! first 16 hex digits of SHA-256 over the JSON bytes. A torn final line
//! (no newline, or checksum mismatch on the last line) is dropped with a
//! warning; a bad line followed by good ones is corruption and refuses to
//! load.
//!
//! Stages per pair must form a path through this graph:
//!
//! ```text
//! ingested -> descriptor_built -> transferable -> tests_generated -> translated -> injected -> quad_verified
//!     |              |                 |                 |               |            |
//!     +--------------+-----------------+--> filtered_out +-> translation_failed       +-> injection_failed
//! ```
//!
//! `filtered_out`, `translation_failed`, `injection_failed` and
//! `quad_verified` are terminal.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LanguageId, SourcePair, TargetPair};
use crate::descriptor::{DefectDescriptor, TransferabilityVerdict};
use crate::hash::digest;
use crate::inject::{BehaviorSpec, CandidateScore};
use crate::testgen::SuiteRef;
use crate::translate::AttemptSummary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingested,
    DescriptorBuilt,
    Transferable,
    FilteredOut,
    TestsGenerated,
    Translated,
    TranslationFailed,
    Injected,
    InjectionFailed,
    QuadVerified,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Stage::FilteredOut
                | Stage::TranslationFailed
                | Stage::InjectionFailed
                | Stage::QuadVerified
        )
    }

    /// Whether `self` may be journaled directly after `prev`.
    pub fn may_follow(self, prev: Option<Stage>) -> bool {
        use Stage::*;
        match prev {
            None => self == Ingested,
            Some(Ingested) => matches!(self, DescriptorBuilt | FilteredOut),
            Some(DescriptorBuilt) => matches!(self, Transferable | FilteredOut),
            Some(Transferable) => matches!(self, TestsGenerated | FilteredOut),
            Some(TestsGenerated) => matches!(self, Translated | TranslationFailed),
            Some(Translated) => matches!(self, Injected | InjectionFailed),
            Some(Injected) => matches!(self, QuadVerified | InjectionFailed),
            Some(_) => false,
        }
    }

    pub fn name(self) -> &'static str {
        use Stage::*;
        match self {
            Ingested => "ingested",
            DescriptorBuilt => "descriptor_built",
            Transferable => "transferable",
            FilteredOut => "filtered_out",
            TestsGenerated => "tests_generated",
            Translated => "translated",
            TranslationFailed => "translation_failed",
            Injected => "injected",
            InjectionFailed => "injection_failed",
            QuadVerified => "quad_verified",
        }
    }
}

/// Stage tag plus the data that stage produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "payload", rename_all = "snake_case")]
pub enum StageEvent {
    Ingested {
        pair: SourcePair,
    },
    DescriptorBuilt {
        descriptor: DefectDescriptor,
    },
    Transferable {
        verdict: TransferabilityVerdict,
    },
    FilteredOut {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<TransferabilityVerdict>,
    },
    TestsGenerated {
        suite: SuiteRef,
    },
    Translated {
        attempt: u32,
        program: String,
        attempts: Vec<AttemptSummary>,
    },
    TranslationFailed {
        attempts: Vec<AttemptSummary>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Injected {
        candidate: u32,
        program: String,
        behavior: BehaviorSpec,
        trigger: Vec<String>,
        regression: Vec<String>,
        scores: Vec<CandidateScore>,
    },
    InjectionFailed {
        reason: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        scores: Vec<CandidateScore>,
    },
    QuadVerified {
        target: TargetPair,
    },
}

impl StageEvent {
    pub fn stage(&self) -> Stage {
        match self {
            StageEvent::Ingested { .. } => Stage::Ingested,
            StageEvent::DescriptorBuilt { .. } => Stage::DescriptorBuilt,
            StageEvent::Transferable { .. } => Stage::Transferable,
            StageEvent::FilteredOut { .. } => Stage::FilteredOut,
            StageEvent::TestsGenerated { .. } => Stage::TestsGenerated,
            StageEvent::Translated { .. } => Stage::Translated,
            StageEvent::TranslationFailed { .. } => Stage::TranslationFailed,
            StageEvent::Injected { .. } => Stage::Injected,
            StageEvent::InjectionFailed { .. } => Stage::InjectionFailed,
            StageEvent::QuadVerified { .. } => Stage::QuadVerified,
        }
    }
}

/// A journaled stage transition. `seq` is a logical timestamp: the record's
/// position in the journal, starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub seq: u64,
    pub pair_id: String,
    pub target: LanguageId,
    #[serde(flatten)]
    pub event: StageEvent,
}

impl PipelineRecord {
    pub fn stage(&self) -> Stage {
        self.event.stage()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairHistory {
    pub records: Vec<PipelineRecord>,
}

impl PairHistory {
    pub fn last_stage(&self) -> Option<Stage> {
        self.records.last().map(PipelineRecord::stage)
    }

    pub fn last(&self) -> Option<&PipelineRecord> {
        self.records.last()
    }

    pub fn is_terminal(&self) -> bool {
        self.last_stage().is_some_and(Stage::is_terminal)
    }

    pub fn event(&self, stage: Stage) -> Option<&StageEvent> {
        self.records
            .iter()
            .find(|r| r.stage() == stage)
            .map(|r| &r.event)
    }

    pub fn reached(&self, stage: Stage) -> bool {
        self.event(stage).is_some()
    }

    pub fn source_pair(&self) -> Option<&SourcePair> {
        match self.event(Stage::Ingested) {
            Some(StageEvent::Ingested { pair }) => Some(pair),
            _ => None,
        }
    }
}

/// Reconstructed pipeline state: pair id to its journaled history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineState {
    pub pairs: BTreeMap<String, PairHistory>,
    pub target: Option<LanguageId>,
}

impl PipelineState {
    pub fn get(&self, pair_id: &str) -> Option<&PairHistory> {
        self.pairs.get(pair_id)
    }

    pub fn last_stage(&self, pair_id: &str) -> Option<Stage> {
        self.pairs.get(pair_id).and_then(PairHistory::last_stage)
    }

    /// Pair ids with no terminal record, in id order.
    pub fn pending(&self) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|(_, h)| !h.is_terminal())
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count_reached(&self, stage: Stage) -> usize {
        self.pairs.values().filter(|h| h.reached(stage)).count()
    }

    fn check(&self, pair_id: &str, target: &LanguageId, stage: Stage) -> Result<(), JournalError> {
        if let Some(t) = &self.target {
            if t != target {
                return Err(JournalError::TargetMismatch {
                    journal: t.clone(),
                    requested: target.clone(),
                });
            }
        }
        let prev = self.last_stage(pair_id);
        if !stage.may_follow(prev) {
            return Err(JournalError::IllegalTransition {
                pair_id: pair_id.to_string(),
                from: prev.map(Stage::name).unwrap_or("(none)"),
                to: stage.name(),
            });
        }
        Ok(())
    }

    fn apply(&mut self, record: PipelineRecord) -> Result<(), JournalError> {
        self.check(&record.pair_id, &record.target, record.stage())?;
        self.target.get_or_insert_with(|| record.target.clone());
        self.pairs
            .entry(record.pair_id.clone())
            .or_default()
            .records
            .push(record);
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("illegal transition for pair {pair_id}: {from} -> {to}")]
    IllegalTransition {
        pair_id: String,
        from: &'static str,
        to: &'static str,
    },
    #[error("journal belongs to target {journal}, not {requested}")]
    TargetMismatch {
        journal: LanguageId,
        requested: LanguageId,
    },
    #[error("journal corrupted at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("journal storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal encoding failure: {0}")]
    Encode(#[from] serde_json::Error),
}

fn checksum(json: &str) -> String {
    digest(json.as_bytes())[..16].to_string()
}

fn encode(record: &PipelineRecord) -> Result<String, JournalError> {
    let json = serde_json::to_string(record)?;
    Ok(format!("{} {}\n", checksum(&json), json))
}

fn decode(line: &str) -> Result<PipelineRecord, String> {
    let (sum, json) = line.split_once(' ').ok_or("missing checksum")?;
    if checksum(json) != sum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

/// Result of replaying a journal file.
#[derive(Debug)]
pub struct Replay {
    pub state: PipelineState,
    pub warnings: Vec<String>,
    pub next_seq: u64,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
}

/// Reconstructs state from a journal. A missing file is an empty journal.
pub fn resume(path: &Path) -> Result<Replay, JournalError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    replay_bytes(&bytes)
}

pub fn replay_bytes(bytes: &[u8]) -> Result<Replay, JournalError> {
    let mut state = PipelineState::default();
    let mut warnings = Vec::new();
    let mut offset = 0usize;
    let mut next_seq = 0u64;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            warnings.push(format!(
                "line {line_no}: truncated trailing record ({} bytes) ignored",
                rest.len()
            ));
            break;
        };
        let parsed = std::str::from_utf8(&rest[..nl])
            .map_err(|e| e.to_string())
            .and_then(decode);
        match parsed {
            Ok(record) => {
                if record.seq != next_seq {
                    return Err(JournalError::Corrupt {
                        line: line_no,
                        reason: format!("sequence {} where {next_seq} expected", record.seq),
                    });
                }
                state.apply(record)?;
                next_seq += 1;
                offset += nl + 1;
            }
            Err(reason) => {
                if offset + nl + 1 >= bytes.len() {
                    warnings.push(format!("line {line_no}: damaged trailing record ignored ({reason})"));
                    break;
                }
                return Err(JournalError::Corrupt {
                    line: line_no,
                    reason,
                });
            }
        }
    }
    Ok(Replay {
        state,
        warnings,
        next_seq,
        valid_len: offset as u64,
    })
}

struct Inner {
    file: File,
    state: PipelineState,
    next_seq: u64,
}

/// Writable journal handle. Appends are serialized; readers take snapshots.
pub struct Journal {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl Journal {
    /// Opens (or creates) a journal, replaying existing records and cutting
    /// off a torn tail so later appends start on a clean line.
    pub fn open(path: &Path) -> Result<(Self, Vec<String>), JournalError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let replay = resume(path)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        if file.metadata()?.len() != replay.valid_len {
            file.set_len(replay.valid_len)?;
        }
        let journal = Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                file,
                state: replay.state,
                next_seq: replay.next_seq,
            }),
        };
        Ok((journal, replay.warnings))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates the transition, then writes and syncs the record.
    pub fn append(
        &self,
        pair_id: &str,
        target: &LanguageId,
        event: StageEvent,
    ) -> Result<u64, JournalError> {
        let mut inner = self.inner.lock().expect("journal lock poisoned");
        inner.state.check(pair_id, target, event.stage())?;
        let record = PipelineRecord {
            seq: inner.next_seq,
            pair_id: pair_id.to_string(),
            target: target.clone(),
            event,
        };
        let line = encode(&record)?;
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        let seq = record.seq;
        inner.state.apply(record)?;
        inner.next_seq += 1;
        Ok(seq)
    }

    pub fn snapshot(&self) -> PipelineState {
        self.inner.lock().expect("journal lock poisoned").state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize) -> SourcePair {
        SourcePair::new("cpp".into(), &format!("a{i}\n"), &format!("b{i}\n")).unwrap()
    }

    fn filtered(reason: &str) -> StageEvent {
        StageEvent::FilteredOut {
            reason: reason.into(),
            verdict: None,
        }
    }

    #[test]
    fn legal_and_terminal_transitions() {
        assert!(Stage::DescriptorBuilt.may_follow(Some(Stage::Ingested)));
        assert!(!Stage::Translated.may_follow(Some(Stage::QuadVerified)));
        assert!(!Stage::Transferable.may_follow(None));
        for s in [
            Stage::FilteredOut,
            Stage::TranslationFailed,
            Stage::InjectionFailed,
            Stage::QuadVerified,
        ] {
            assert!(s.is_terminal());
        }
    }

    #[test]
    fn append_rejects_illegal_transition() {
        let dir = tempfile::tempdir().unwrap();
        let (j, _) = Journal::open(&dir.path().join("j.log")).unwrap();
        let p = pair(0);
        let t = LanguageId::new("rust");
        j.append(&p.id, &t, StageEvent::Ingested { pair: p.clone() }).unwrap();
        j.append(&p.id, &t, filtered("x")).unwrap();
        let err = j
            .append(&p.id, &t, StageEvent::TranslationFailed { attempts: vec![], reason: None })
            .unwrap_err();
        assert!(matches!(err, JournalError::IllegalTransition { .. }));
    }

    #[test]
    fn empty_journal_is_empty_state() {
        let dir = tempfile::tempdir().unwrap();
        let r = resume(&dir.path().join("missing.log")).unwrap();
        assert!(r.state.pairs.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn replay_matches_live_state_and_truncation_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.log");
        let t = LanguageId::new("rust");
        let (j, _) = Journal::open(&path).unwrap();
        for i in 0..50 {
            let p = pair(i);
            j.append(&p.id, &t, StageEvent::Ingested { pair: p.clone() }).unwrap();
            j.append(&p.id, &t, filtered("test")).unwrap();
        }
        let live = j.snapshot();
        drop(j);
        let replayed = resume(&path).unwrap();
        assert_eq!(replayed.state, live);
        assert_eq!(replayed.next_seq, 100);

        // Cut the file in the middle of the final record.
        let bytes = fs::read(&path).unwrap();
        let cut = bytes.len() - 7;
        fs::write(&path, &bytes[..cut]).unwrap();
        let r = resume(&path).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.next_seq, 99);

        // Reopening trims the tail and appends continue at the right seq.
        let (j, warnings) = Journal::open(&path).unwrap();
        assert_eq!(warnings.len(), 1);
        let last = pair(49);
        let seq = j.append(&last.id, &t, filtered("again")).unwrap();
        assert_eq!(seq, 99);
        drop(j);
        assert!(resume(&path).unwrap().warnings.is_empty());
    }

    #[test]
    fn mid_file_damage_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.log");
        let t = LanguageId::new("rust");
        let (j, _) = Journal::open(&path).unwrap();
        for i in 0..3 {
            let p = pair(i);
            j.append(&p.id, &t, StageEvent::Ingested { pair: p.clone() }).unwrap();
        }
        drop(j);
        let text = fs::read_to_string(&path).unwrap();
        let damaged = text.replacen("a0", "zz", 1);
        fs::write(&path, damaged).unwrap();
        assert!(matches!(resume(&path), Err(JournalError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn target_is_fixed_per_journal() {
        let dir = tempfile::tempdir().unwrap();
        let (j, _) = Journal::open(&dir.path().join("j.log")).unwrap();
        let p = pair(1);
        j.append(&p.id, &"rust".into(), StageEvent::Ingested { pair: p.clone() })
            .unwrap();
        let q = pair(2);
        let err = j
            .append(&q.id, &"ruby".into(), StageEvent::Ingested { pair: q.clone() })
            .unwrap_err();
        assert!(matches!(err, JournalError::TargetMismatch { .. }));
    }
}
