//! Per-pair orchestration over the journal.
//!
//! Pairs are processed concurrently, but their records are committed to the
//! journal in work-list order: the pair at the head streams its records,
//! later pairs buffer theirs until every earlier pair has finished. With a
//! deterministic model (replay) this makes the journal byte-identical
//! between runs regardless of the worker count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineSettings;
use crate::corpus::journal::{Journal, JournalError, PipelineState, Stage, StageEvent};
use crate::corpus::{LanguageId, ParallelQuad, Provenance, SourcePair, TargetPair};
use crate::descriptor::{assess_transferability, build_descriptor, DefectDescriptor, DescriptorError};
use crate::inject::{
    construct_input_sets, defect_observable, describe_behavior, inject_defect, InjectError, InjectionOutcome,
    InputConstruction, InputSets, TargetReference,
};
use crate::llm::{LlmError, Prompter};
use crate::sandbox::{Sandbox, SandboxError};
use crate::testgen::{generate_suite, read_suite, write_suite, SuiteBudget, SuiteRef, SuiteResult, TestgenError};
use crate::translate::{passes_all, translate_fixed, validate, TranslateError, TranslationOutcome};

/// Errors that stop the whole run.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(LlmError),
    #[error(transparent)]
    Sandbox(SandboxError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("{0}")]
    Io(String),
}

impl PipelineError {
    pub fn is_replay_miss(&self) -> bool {
        matches!(self, PipelineError::Llm(LlmError::ReplayMiss { .. }))
    }
}

/// A failure confined to one pair.
enum StepError {
    /// Journaled as the stage's terminal failure. `environmental` marks
    /// failures of the model service or toolchain rather than of the data.
    Pair { reason: String, environmental: bool },
    Fatal(PipelineError),
}

impl StepError {
    fn data(reason: impl Into<String>) -> Self {
        StepError::Pair {
            reason: reason.into(),
            environmental: false,
        }
    }
}

impl From<LlmError> for StepError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Exhausted { .. } => StepError::Pair {
                reason: format!("model request failed: {e}"),
                environmental: true,
            },
            other => StepError::Fatal(PipelineError::Llm(other)),
        }
    }
}

impl From<SandboxError> for StepError {
    fn from(e: SandboxError) -> Self {
        match e {
            SandboxError::UnknownLanguage(_) | SandboxError::NoCoverage(_) => {
                StepError::Fatal(PipelineError::Sandbox(e))
            }
            SandboxError::Setup(_) => StepError::Pair {
                reason: format!("sandbox failure: {e}"),
                environmental: true,
            },
            SandboxError::EmptySuite | SandboxError::CoverageBuild(_) | SandboxError::CoverageReport(_) => {
                StepError::data(e.to_string())
            }
        }
    }
}

impl From<TestgenError> for StepError {
    fn from(e: TestgenError) -> Self {
        match e {
            TestgenError::Llm(e) => e.into(),
            TestgenError::Sandbox(e) => e.into(),
            TestgenError::SuiteFile { .. } => StepError::Fatal(PipelineError::Io(e.to_string())),
            other => StepError::data(other.to_string()),
        }
    }
}

impl From<TranslateError> for StepError {
    fn from(e: TranslateError) -> Self {
        match e {
            TranslateError::Llm(e) => e.into(),
            TranslateError::Sandbox(e) => e.into(),
            other => StepError::data(other.to_string()),
        }
    }
}

impl From<InjectError> for StepError {
    fn from(e: InjectError) -> Self {
        match e {
            InjectError::Llm(e) => e.into(),
            InjectError::Sandbox(e) => e.into(),
            other => StepError::data(other.to_string()),
        }
    }
}

impl From<DescriptorError> for StepError {
    fn from(e: DescriptorError) -> Self {
        match e {
            DescriptorError::Llm(e) => e.into(),
            other => StepError::data(other.to_string()),
        }
    }
}

/// Terminal failure event for a pair whose last stage is `last`.
fn failure_event(last: Stage, reason: String) -> StageEvent {
    match last {
        Stage::TestsGenerated => StageEvent::TranslationFailed {
            attempts: Vec::new(),
            reason: Some(reason),
        },
        Stage::Translated | Stage::Injected => StageEvent::InjectionFailed {
            reason,
            scores: Vec::new(),
        },
        _ => StageEvent::FilteredOut { reason, verdict: None },
    }
}

/// Stage counts over a journal state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub ingested: usize,
    pub transferable: usize,
    pub suites: usize,
    pub translated: usize,
    pub injected: usize,
    pub quads: usize,
    pub filtered_out: usize,
    pub translation_failed: usize,
    pub injection_failed: usize,
    pub pending: usize,
}

impl Funnel {
    pub fn from_state(state: &PipelineState) -> Self {
        let ended = |s: Stage| state.pairs.values().filter(|h| h.last_stage() == Some(s)).count();
        Self {
            ingested: state.count_reached(Stage::Ingested),
            transferable: state.count_reached(Stage::Transferable),
            suites: state.count_reached(Stage::TestsGenerated),
            translated: state.count_reached(Stage::Translated),
            injected: state.count_reached(Stage::Injected),
            quads: state.count_reached(Stage::QuadVerified),
            filtered_out: ended(Stage::FilteredOut),
            translation_failed: ended(Stage::TranslationFailed),
            injection_failed: ended(Stage::InjectionFailed),
            pending: state.pending().len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub funnel: Funnel,
    /// Pairs this run worked on.
    pub processed: usize,
    /// Records appended by this run.
    pub new_records: usize,
    /// Pairs ended by model or toolchain failures rather than by their data.
    pub errors: Vec<PairFailure>,
}

impl RunSummary {
    /// Every processed pair hit an environmental failure.
    pub fn environment_failed(&self) -> bool {
        self.processed > 0 && self.errors.len() == self.processed
    }
}

/// Everything a run needs besides the journal.
pub struct Pipeline<'a> {
    pub prompter: &'a Prompter,
    pub sandbox: &'a Sandbox,
    pub settings: &'a PipelineSettings,
    pub target: LanguageId,
    /// Where oracle suites are written; suite references are relative to it.
    pub suite_dir: PathBuf,
    pub workers: usize,
}

struct Slot {
    pair: SourcePair,
    history: Vec<StageEvent>,
}

#[derive(Default)]
struct SeqState {
    head: usize,
    buffered: BTreeMap<usize, Vec<(String, StageEvent)>>,
    done: BTreeSet<usize>,
    written: usize,
}

/// Commits events in slot order.
struct Sequencer<'j> {
    journal: &'j Journal,
    target: LanguageId,
    state: Mutex<SeqState>,
}

impl Sequencer<'_> {
    fn commit(&self, slot: usize, pair_id: &str, event: StageEvent) -> Result<(), JournalError> {
        let mut st = self.state.lock().expect("sequencer lock poisoned");
        if slot == st.head {
            self.journal.append(pair_id, &self.target, event)?;
            st.written += 1;
        } else {
            st.buffered.entry(slot).or_default().push((pair_id.to_string(), event));
        }
        Ok(())
    }

    fn finish(&self, slot: usize) -> Result<(), JournalError> {
        let mut st = self.state.lock().expect("sequencer lock poisoned");
        st.done.insert(slot);
        while st.done.contains(&st.head) {
            st.head += 1;
            let head = st.head;
            if let Some(events) = st.buffered.remove(&head) {
                for (id, ev) in events {
                    self.journal.append(&id, &self.target, ev)?;
                    st.written += 1;
                }
            }
        }
        Ok(())
    }

    fn written(&self) -> usize {
        self.state.lock().expect("sequencer lock poisoned").written
    }
}

fn find<'e, T>(history: &'e [StageEvent], f: impl Fn(&'e StageEvent) -> Option<T>) -> Option<T> {
    history.iter().rev().find_map(f)
}

impl Pipeline<'_> {
    fn budget(&self) -> SuiteBudget {
        SuiteBudget {
            tau: self.settings.tau,
            batch: self.settings.test_batch,
            rounds: self.settings.test_rounds,
            retries: self.settings.retries,
        }
    }

    /// Ingests `pairs` not yet in the journal, then advances every pending
    /// pair as far as it goes. Inputs come first in file order, then pairs
    /// that are only in the journal, in id order.
    pub fn run(&self, journal: &Journal, pairs: &[SourcePair]) -> Result<RunSummary, PipelineError> {
        let before = journal.snapshot();
        let mut new_records = 0;
        for p in pairs {
            if before.get(&p.id).is_none() {
                journal.append(&p.id, &self.target, StageEvent::Ingested { pair: p.clone() })?;
                new_records += 1;
            }
        }
        let state = journal.snapshot();
        let mut seen = HashSet::new();
        let mut order: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).filter(|id| seen.insert(*id)).collect();
        order.extend(state.pending().into_iter().filter(|id| seen.insert(*id)));
        let slots: Vec<Slot> = order
            .into_iter()
            .filter_map(|id| {
                let h = state.get(id)?;
                if h.is_terminal() {
                    return None;
                }
                Some(Slot {
                    pair: h.source_pair()?.clone(),
                    history: h.records.iter().map(|r| r.event.clone()).collect(),
                })
            })
            .collect();

        let seq = Sequencer {
            journal,
            target: self.target.clone(),
            state: Mutex::new(SeqState::default()),
        };
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
        let errors: Mutex<Vec<(usize, PairFailure)>> = Mutex::new(Vec::new());
        let stop = |e: PipelineError| {
            abort.store(true, Ordering::SeqCst);
            fatal.lock().expect("lock poisoned").get_or_insert(e);
        };
        std::thread::scope(|s| {
            for _ in 0..self.workers.clamp(1, slots.len().max(1)) {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(slot) = slots.get(i) else { break };
                    let mut commit = |ev: StageEvent| seq.commit(i, &slot.pair.id, ev);
                    match self.advance(&slot.pair, &slot.history, &mut commit) {
                        Ok(Some(reason)) => errors.lock().expect("lock poisoned").push((
                            i,
                            PairFailure {
                                pair_id: slot.pair.id.clone(),
                                reason,
                            },
                        )),
                        Ok(None) => {}
                        Err(e) => {
                            stop(e);
                            break;
                        }
                    }
                    if let Err(e) = seq.finish(i) {
                        stop(e.into());
                        break;
                    }
                });
            }
        });
        if let Some(e) = fatal.into_inner().expect("lock poisoned") {
            return Err(e);
        }
        let mut errors = errors.into_inner().expect("lock poisoned");
        errors.sort_by_key(|(i, _)| *i);
        Ok(RunSummary {
            funnel: Funnel::from_state(&journal.snapshot()),
            processed: slots.len(),
            new_records: new_records + seq.written(),
            errors: errors.into_iter().map(|(_, f)| f).collect(),
        })
    }

    /// Drives one pair to a terminal stage. Returns the reason when the
    /// pair ended on an environmental failure.
    fn advance(
        &self,
        pair: &SourcePair,
        history: &[StageEvent],
        commit: &mut dyn FnMut(StageEvent) -> Result<(), JournalError>,
    ) -> Result<Option<String>, PipelineError> {
        let mut events = history.to_vec();
        let mut env_failure = None;
        loop {
            let last = match events.last() {
                Some(e) => e.stage(),
                None => return Ok(None),
            };
            if last.is_terminal() {
                log::info!("{}: {}", pair.id, last.name());
                return Ok(env_failure);
            }
            let event = match self.step(pair, &events, last) {
                Ok(ev) => ev,
                Err(StepError::Pair { reason, environmental }) => {
                    log::warn!("{}: {reason}", pair.id);
                    if environmental {
                        env_failure = Some(reason.clone());
                    }
                    failure_event(last, reason)
                }
                Err(StepError::Fatal(e)) => return Err(e),
            };
            commit(event.clone())?;
            events.push(event);
        }
    }

    fn step(&self, pair: &SourcePair, history: &[StageEvent], last: Stage) -> Result<StageEvent, StepError> {
        let s = self.settings;
        let descriptor = || {
            find(history, |e| match e {
                StageEvent::DescriptorBuilt { descriptor } => Some(descriptor),
                _ => None,
            })
            .ok_or_else(|| StepError::data("journal has no descriptor for this pair"))
        };
        let suite_ref = || {
            find(history, |e| match e {
                StageEvent::TestsGenerated { suite } => Some(suite),
                _ => None,
            })
            .ok_or_else(|| StepError::data("journal has no suite for this pair"))
        };
        let translated = || {
            find(history, |e| match e {
                StageEvent::Translated { attempt, program, .. } => Some((*attempt, program.as_str())),
                _ => None,
            })
            .ok_or_else(|| StepError::data("journal has no translation for this pair"))
        };
        match last {
            Stage::Ingested => {
                let descriptor = build_descriptor(pair, self.prompter, s.context_radius, s.retries)?;
                Ok(StageEvent::DescriptorBuilt { descriptor })
            }
            Stage::DescriptorBuilt => {
                let v = assess_transferability(descriptor()?, &pair.lang, &self.target, self.prompter, s.retries)?;
                if v.transferable {
                    Ok(StageEvent::Transferable { verdict: v })
                } else {
                    Ok(StageEvent::FilteredOut {
                        reason: format!("not transferable: {}", v.rationale),
                        verdict: Some(v),
                    })
                }
            }
            Stage::Transferable => self.suite_stage(pair),
            Stage::TestsGenerated => {
                let suite = self.load_suite(suite_ref()?)?;
                let outcome =
                    translate_fixed(pair, descriptor()?, &self.target, &suite, self.prompter, self.sandbox, s.m)?;
                Ok(match outcome {
                    TranslationOutcome::Selected {
                        attempt,
                        program,
                        attempts,
                    } => StageEvent::Translated {
                        attempt,
                        program,
                        attempts,
                    },
                    TranslationOutcome::Failed { attempts } => StageEvent::TranslationFailed { attempts, reason: None },
                })
            }
            Stage::Translated => {
                let (_, tgt_fixed) = translated()?;
                self.inject_stage(pair, descriptor()?, self.load_suite(suite_ref()?)?, tgt_fixed)
            }
            Stage::Injected => self.verify_stage(pair, history, suite_ref()?, translated()?),
            _ => unreachable!("terminal stages are not stepped"),
        }
    }

    fn load_suite(&self, r: &SuiteRef) -> Result<crate::testgen::TestSuite, StepError> {
        read_suite(&self.suite_dir, r).map_err(|e| StepError::data(e.to_string()))
    }

    fn suite_stage(&self, pair: &SourcePair) -> Result<StageEvent, StepError> {
        match generate_suite(pair, self.prompter, self.sandbox, self.budget())? {
            SuiteResult::Admitted(suite) => {
                let r = write_suite(&self.suite_dir, &pair.id, &suite)?;
                Ok(StageEvent::TestsGenerated { suite: r })
            }
            SuiteResult::GateFailed(suite) => Ok(StageEvent::FilteredOut {
                reason: format!(
                    "coverage gate not met: line {:.2}% branch {:.2}% below {:.2}%",
                    suite.coverage.line_pct,
                    suite.coverage.branch_pct,
                    100.0 * suite.tau
                ),
                verdict: None,
            }),
        }
    }

    fn inject_stage(
        &self,
        pair: &SourcePair,
        desc: &DefectDescriptor,
        suite: crate::testgen::TestSuite,
        tgt_fixed: &str,
    ) -> Result<StageEvent, StepError> {
        let s = self.settings;
        let spec = describe_behavior(desc, &pair.lang, self.prompter, s.retries)?;
        let built = match construct_input_sets(
            pair,
            &spec,
            &suite,
            self.prompter,
            self.sandbox,
            s.trigger_budget,
            s.retries,
        ) {
            Ok(InputConstruction::Built(p)) => p,
            Ok(InputConstruction::Discarded { reason, .. }) => {
                return Ok(StageEvent::InjectionFailed {
                    reason,
                    scores: Vec::new(),
                })
            }
            Err(InjectError::BuggyDoesNotCompile(msg)) => {
                return Ok(StageEvent::InjectionFailed {
                    reason: format!("source buggy program does not compile: {msg}"),
                    scores: Vec::new(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let outcome = inject_defect(
            tgt_fixed,
            desc,
            &spec,
            &self.target,
            &built,
            self.prompter,
            self.sandbox,
            s.n,
        )?;
        Ok(match outcome {
            InjectionOutcome::Injected {
                candidate,
                program,
                scores,
            } => StageEvent::Injected {
                candidate,
                program,
                behavior: spec,
                trigger: built.sets.trigger,
                regression: built.sets.regression,
                scores,
            },
            InjectionOutcome::Failed { reason, scores } => StageEvent::InjectionFailed { reason, scores },
        })
    }

    /// Re-checks the selected programs before the quad is recorded.
    fn verify_stage(
        &self,
        pair: &SourcePair,
        history: &[StageEvent],
        suite_ref: &SuiteRef,
        (attempt, tgt_fixed): (u32, &str),
    ) -> Result<StageEvent, StepError> {
        let (candidate, buggy, sets) = find(history, |e| match e {
            StageEvent::Injected {
                candidate,
                program,
                trigger,
                regression,
                ..
            } => Some((
                *candidate,
                program.clone(),
                InputSets {
                    trigger: trigger.clone(),
                    regression: regression.clone(),
                },
            )),
            _ => None,
        })
        .ok_or_else(|| StepError::data("journal has no injection for this pair"))?;
        let suite = self.load_suite(suite_ref)?;
        let fail = |reason: &str| StageEvent::InjectionFailed {
            reason: format!("verification failed: {reason}"),
            scores: Vec::new(),
        };
        if !passes_all(&validate(tgt_fixed, &self.target, &suite, self.sandbox)?, &suite) {
            return Ok(fail("target fixed program does not pass the oracle suite"));
        }
        let reference = TargetReference::compute(tgt_fixed, &self.target, &sets, self.sandbox)?;
        if !defect_observable(&buggy, &self.target, &sets, &reference, self.sandbox)? {
            return Ok(fail("target buggy program passes every trigger input"));
        }
        let tgt = TargetPair {
            source_id: pair.id.clone(),
            lang: self.target.clone(),
            buggy,
            fixed: tgt_fixed.to_string(),
            provenance: Provenance {
                translation_attempt: attempt,
                injection_candidate: candidate,
            },
        };
        match ParallelQuad::new(pair.clone(), tgt) {
            Ok(q) => Ok(StageEvent::QuadVerified { target: q.tgt }),
            Err(e) => Ok(fail(&e.to_string())),
        }
    }
}

/// Verified quads from a journal state, ordered by key.
pub fn quads(state: &PipelineState) -> Vec<ParallelQuad> {
    let mut out: Vec<ParallelQuad> = state
        .pairs
        .values()
        .filter_map(|h| {
            let src = h.source_pair()?.clone();
            match h.event(Stage::QuadVerified)? {
                StageEvent::QuadVerified { target } => Some(ParallelQuad {
                    src,
                    tgt: target.clone(),
                }),
                _ => None,
            }
        })
        .collect();
    out.sort_by_key(|q| q.tgt.key());
    out
}

/// Writes the verified quads as JSONL and returns how many were written.
pub fn write_quads(state: &PipelineState, path: &Path) -> std::io::Result<usize> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let qs = quads(state);
    let mut buf = Vec::new();
    for q in &qs {
        serde_json::to_writer(&mut buf, q).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(qs.len())
}
