use std::fs;
use std::io::Write;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use bugbridge_core::corpus::journal::{resume, Journal, JournalError, Stage, StageEvent};
use bugbridge_core::descriptor::{compute_diff, DefectDescriptor, TransferabilityVerdict};
use bugbridge_core::{LanguageId, SourcePair};

fn next_event(pair: &SourcePair, last: Option<Stage>, rng: &mut StdRng) -> Option<StageEvent> {
    let filtered = StageEvent::FilteredOut {
        reason: "not transferable".into(),
        verdict: None,
    };
    Some(match last {
        None => StageEvent::Ingested { pair: pair.clone() },
        Some(Stage::Ingested) => StageEvent::DescriptorBuilt {
            descriptor: DefectDescriptor {
                defect_type: "off by one".into(),
                root_cause: "bound".into(),
                diff: compute_diff(&pair.buggy, &pair.fixed, 1).unwrap(),
            },
        },
        Some(Stage::DescriptorBuilt) if rng.gen_bool(0.5) => StageEvent::Transferable {
            verdict: TransferabilityVerdict {
                transferable: true,
                rationale: "loops exist".into(),
                target_lang: "rust".into(),
            },
        },
        Some(Stage::DescriptorBuilt) | Some(Stage::Transferable) => filtered,
        Some(_) => return None,
    })
}

/// Appends `n` records spread over interleaved pairs.
fn populate(journal: &Journal, n: usize, seed: u64) {
    let target: LanguageId = "rust".into();
    let mut rng = StdRng::seed_from_u64(seed);
    let pairs: Vec<SourcePair> = (0..40)
        .map(|i| SourcePair::new("cpp".into(), &format!("for i < {i}\n"), &format!("for i <= {i}\n")).unwrap())
        .collect();
    let mut written = 0;
    while written < n {
        let p = &pairs[rng.gen_range(0..pairs.len())];
        let last = journal.snapshot().last_stage(&p.id);
        if let Some(event) = next_event(p, last, &mut rng) {
            journal.append(&p.id, &target, event).unwrap();
            written += 1;
        }
    }
}

#[test]
fn hundred_records_replay_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let (journal, warnings) = Journal::open(&path).unwrap();
    assert!(warnings.is_empty());
    populate(&journal, 100, 1);
    let live = journal.snapshot();
    drop(journal);

    let replay = resume(&path).unwrap();
    assert_eq!(replay.next_seq, 100);
    assert!(replay.warnings.is_empty());
    assert_eq!(replay.state, live);
    let records: usize = replay.state.pairs.values().map(|h| h.records.len()).sum();
    assert_eq!(records, 100);
    for h in replay.state.pairs.values() {
        assert_eq!(h.records[0].stage(), Stage::Ingested);
        assert!(h.records.windows(2).all(|w| w[0].seq < w[1].seq));
    }
}

#[test]
fn torn_tail_is_dropped_and_appends_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let (journal, _) = Journal::open(&path).unwrap();
    populate(&journal, 100, 2);
    let text = fs::read_to_string(&path).unwrap();
    drop(journal);
    let body = text.trim_end_matches('\n');
    let last_start = body.rfind('\n').unwrap() + 1;
    fs::write(&path, &text[..last_start + (text.len() - last_start) / 2]).unwrap();

    let replay = resume(&path).unwrap();
    assert_eq!(replay.next_seq, 99);
    assert_eq!(replay.warnings.len(), 1);

    let (journal, warnings) = Journal::open(&path).unwrap();
    assert_eq!(warnings.len(), 1);
    populate(&journal, 5, 3);
    drop(journal);
    let replay = resume(&path).unwrap();
    assert_eq!(replay.next_seq, 104);
    assert!(replay.warnings.is_empty());
}

#[test]
fn damage_before_the_tail_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let (journal, _) = Journal::open(&path).unwrap();
    populate(&journal, 10, 4);
    drop(journal);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"seq\": 3, garbage";
    let mut f = fs::File::create(&path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    drop(f);
    assert!(matches!(resume(&path), Err(JournalError::Corrupt { line: 4, .. })));
}

#[test]
fn target_is_fixed_per_journal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal.jsonl");
    let (journal, _) = Journal::open(&path).unwrap();
    let p = SourcePair::new("cpp".into(), "a\n", "b\n").unwrap();
    journal.append(&p.id.clone(), &"rust".into(), StageEvent::Ingested { pair: p }).unwrap();
    let q = SourcePair::new("cpp".into(), "c\n", "d\n").unwrap();
    let err = journal.append(&q.id.clone(), &"ruby".into(), StageEvent::Ingested { pair: q }).unwrap_err();
    assert!(matches!(err, JournalError::TargetMismatch { .. }), "{err}");
}
