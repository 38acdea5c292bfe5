mod common;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::sync::Arc;

use common::*;
use framelab_core::annotation::{Annotation, Phase};
use framelab_core::evaluation::Verdict;
use framelab_core::inference::{BackendConfig, MockBackend, ModelPrediction, Strategy};
use framelab_core::{Codebook, FrameLabel};
use framelab_workbench::store::StoreError;
use framelab_workbench::workspace::{RunStatus, SessionSpec};
use framelab_workbench::{Access, Workspace, WorkspaceError};

fn training_with_100(ws: &Workspace) {
    ws.create_session(SessionSpec {
        id: "t1".into(),
        phase: Phase::Training1,
        annotators: vec!["ann-a".into(), "ann-b".into()],
        items: None,
        sample: None,
        icr_threshold: None,
        skip_gate_check: false,
    })
    .unwrap();
    let gold = labels("mock50");
    for (n, (id, label)) in gold.iter().enumerate() {
        for annotator in ["ann-a", "ann-b"] {
            let primary = if annotator == "ann-b" && n % 7 == 0 {
                FrameLabel::from_index((label.index() + 1) % 6).unwrap()
            } else {
                *label
            };
            let mut inp = input(annotator, id, primary);
            inp.session_id = "t1".into();
            ws.record_annotation(inp).unwrap();
        }
    }
}

fn current(ws: &Workspace) -> Vec<Annotation> {
    ws.current_annotations("t1")
}

#[test]
fn hundred_annotations_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let before = {
        let ws = ingested(dir.path(), "mock50");
        training_with_100(&ws);
        assert_eq!(ws.annotation_history().len(), 100);
        (current(&ws), ws.icr("t1", None, None).unwrap())
    };
    let ws = open(dir.path());
    assert!(ws.quarantined().is_empty());
    assert_eq!(current(&ws), before.0);
    assert_eq!(ws.icr("t1", None, None).unwrap(), before.1);
}

#[test]
fn truncated_final_line_is_quarantined_and_prior_records_survive() {
    let dir = tempfile::tempdir().unwrap();
    let history = {
        let ws = ingested(dir.path(), "mock50");
        training_with_100(&ws);
        ws.annotation_history()
    };
    // simulate a crash in the middle of the last append
    let path = dir.path().join("annotations.jsonl");
    let bytes = fs::read(&path).unwrap();
    let last_start = bytes[..bytes.len() - 1].iter().rposition(|&b| b == b'\n').unwrap() + 1;
    let cut = last_start + (bytes.len() - last_start) / 2;
    fs::write(&path, &bytes[..cut]).unwrap();

    let ws = open(dir.path());
    assert_eq!(ws.quarantined().len(), 1);
    assert_eq!(ws.quarantined()[0].line, 100);
    assert_eq!(ws.annotation_history(), history[..99].to_vec());
    let expected = framelab_core::annotation::AnnotationLog::from_records(history[..99].to_vec());
    let expected: Vec<Annotation> = expected.current_for_session("t1").into_iter().cloned().collect();
    assert_eq!(current(&ws), expected);

    let q = fs::read_to_string(dir.path().join("quarantine/annotations.jsonl")).unwrap();
    assert_eq!(q.lines().count(), 1);
    assert!(q.contains("truncated"));

    // the log was rewritten clean, so the next append starts on its own line
    let mut again = input("ann-b", &history[99].article_id, history[99].primary);
    again.session_id = "t1".into();
    ws.record_annotation(again).unwrap();
    drop(ws);
    let ws = open(dir.path());
    assert!(ws.quarantined().is_empty());
    assert_eq!(ws.annotation_history().len(), 100);
}

#[test]
fn corrupt_line_in_the_middle_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    {
        let ws = ingested(dir.path(), "mock50");
        training_with_100(&ws);
    }
    let path = dir.path().join("annotations.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[10] = "{\"session_id\": \"t1\", \"primary\": ";
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let ws = open(dir.path());
    assert_eq!(ws.quarantined().len(), 1);
    assert_eq!(ws.quarantined()[0].line, 11);
    assert_eq!(ws.annotation_history().len(), 99);
}

#[test]
fn second_writer_is_refused_but_readers_are_not() {
    let dir = tempfile::tempdir().unwrap();
    let ws = ingested(dir.path(), "mock50");
    let err = Workspace::open(dir.path(), Codebook::default_codebook(), 0.65, Access::ReadWrite).err().unwrap();
    assert!(matches!(err, WorkspaceError::Store(StoreError::Locked(..))));
    let reader = Workspace::open(dir.path(), Codebook::default_codebook(), 0.65, Access::ReadOnly).unwrap();
    assert_eq!(reader.corpus().unwrap().len(), 50);
    assert!(matches!(
        reader.create_session(SessionSpec {
            id: "x".into(),
            phase: Phase::Training1,
            annotators: vec!["a".into(), "b".into()],
            items: None,
            sample: None,
            icr_threshold: None,
            skip_gate_check: false,
        }),
        Err(WorkspaceError::ReadOnly)
    ));
    drop(ws);
    open(dir.path());
}

#[test]
fn submission_ids_make_retries_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let ws = ingested(dir.path(), "mock50");
    production_session(&ws);
    let session = ws.session("prod").unwrap();
    let item = session.assigned_items("ann-a")[0].clone();
    let mut inp = input("ann-a", &item, FrameLabel::Conflict);
    inp.submission_id = Some("c0ffee".into());
    let (first, created) = ws.record_annotation(inp.clone()).unwrap();
    assert!(created);
    let (second, created) = ws.record_annotation(inp.clone()).unwrap();
    assert!(!created);
    assert_eq!(first, second);
    assert_eq!(ws.annotation_history().len(), 1);

    inp.primary = FrameLabel::Morality;
    assert!(matches!(ws.record_annotation(inp), Err(WorkspaceError::Conflict(_))));
}

#[test]
fn phase_order_is_enforced_by_gates() {
    let dir = tempfile::tempdir().unwrap();
    let ws = ingested(dir.path(), "mock50");
    let spec = |id: &str, phase| SessionSpec {
        id: id.into(),
        phase,
        annotators: vec!["ann-a".into(), "ann-b".into()],
        items: None,
        sample: Some((20, 3)),
        icr_threshold: None,
        skip_gate_check: false,
    };
    assert!(matches!(ws.create_session(spec("t2", Phase::Training2)), Err(WorkspaceError::Invalid(_))));
    let t1 = ws.create_session(spec("t1", Phase::Training1)).unwrap();
    assert_eq!(t1.item_ids.len(), 20);
    let gold: std::collections::HashMap<_, _> = labels("mock50").into_iter().collect();
    for id in &t1.item_ids {
        for a in ["ann-a", "ann-b"] {
            let mut inp = input(a, id, gold[id]);
            inp.session_id = "t1".into();
            ws.record_annotation(inp).unwrap();
        }
    }
    let (decision, report) = ws.gate("t1", None, None).unwrap();
    assert_eq!(report.kappa, 1.0);
    assert_eq!(decision, framelab_core::annotation::GateDecision::Advance);
    ws.create_session(spec("t2", Phase::Training2)).unwrap();
    drop(ws);
    // the recorded gate survives a restart
    let ws = open(dir.path());
    assert_eq!(ws.session("t1").unwrap().gate_history.len(), 1);
}

#[test]
fn concurrent_classification_and_annotation_do_not_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Arc::new(ingested(dir.path(), "table3"));
    production_session(&ws);
    let session = ws.session("prod").unwrap();
    let gold: std::collections::HashMap<_, _> = labels("table3").into_iter().collect();

    let writer = {
        let ws = Arc::clone(&ws);
        let items: Vec<(String, String)> = session
            .assignment
            .iter()
            .flat_map(|(a, items)| items.iter().take(300).map(move |i| (a.clone(), i.clone())))
            .collect();
        std::thread::spawn(move || {
            for (a, id) in &items {
                ws.record_annotation(input(a, id, gold[id])).unwrap();
            }
            items.len()
        })
    };
    let config = BackendConfig { max_parallel: 16, ..BackendConfig::default() };
    let mock = MockBackend::new(5).with_garbage_rate(0.05);
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
    let (record, output) = rt.block_on(ws.classify(&mock, &config, Strategy::Definitions)).unwrap();
    let written = writer.join().unwrap();
    assert_eq!(record.status, RunStatus::Complete);
    assert_eq!(output.predictions.len(), 1786);
    drop(ws);

    // verifier: every line is complete and parses as its record type
    let verify = |name: &str| -> usize {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.ends_with('\n'));
        text.lines().count()
    };
    let n_ann = verify("annotations.jsonl");
    let n_pred = verify("predictions.jsonl");
    for line in fs::read_to_string(dir.path().join("annotations.jsonl")).unwrap().lines() {
        serde_json::from_str::<Annotation>(line).unwrap();
    }
    for line in fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap().lines() {
        serde_json::from_str::<ModelPrediction>(line).unwrap();
    }
    assert_eq!(n_ann, written);
    assert_eq!(n_pred, 1786);

    let ws = open(dir.path());
    assert!(ws.quarantined().is_empty());
    assert_eq!(ws.annotation_history().len(), written);
    assert_eq!(ws.prediction_count(), 1786);
    assert_eq!(ws.model_labels(None).unwrap().len(), 1786);
}

#[test]
fn completed_runs_are_immutable_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let ws = ingested(dir.path(), "mock50");
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mock = MockBackend::new(7);
    let config = BackendConfig { model_name: "mock-7".into(), ..BackendConfig::default() };
    let (a, out_a) = rt.block_on(ws.classify(&mock, &config, Strategy::Definitions)).unwrap();
    let (b, out_b) = rt.block_on(ws.classify(&mock, &config, Strategy::Definitions)).unwrap();
    assert_eq!(a, b);
    assert_eq!(out_a.requests_issued, 50);
    assert_eq!(out_b.requests_issued, 0);
    assert_eq!(ws.prediction_count(), 50);
    let stored = fs::read_to_string(dir.path().join(format!("runs/{}.json", a.run_id))).unwrap();
    drop(ws);
    let ws = open(dir.path());
    assert_eq!(ws.run(&a.run_id).unwrap(), a);
    assert_eq!(fs::read_to_string(dir.path().join(format!("runs/{}.json", a.run_id))).unwrap(), stored);
}

#[test]
fn verdicts_replay_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (item, summary) = {
        let ws = ingested(dir.path(), "mock50");
        production_session(&ws);
        annotate_all(&ws, &labels("mock50"));
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(ws.classify(&MockBackend::new(1), &BackendConfig::default(), Strategy::Definitions)).unwrap();
        let (_, items) = ws.build_adjudication(None, 0.2, 9, false).unwrap();
        let first = &items[0];
        let reviewer = first.reviewer_id.clone().unwrap();
        ws.record_verdict(&first.item_id, &reviewer, Verdict::Agree).unwrap();
        (first.item_id.clone(), ws.adjudication_summary().unwrap())
    };
    let mut f = OpenOptions::new().append(true).open(dir.path().join("verdicts.jsonl")).unwrap();
    f.write_all(b"{\"queue_id\":").unwrap();
    drop(f);
    let ws = open(dir.path());
    assert_eq!(ws.adjudication_summary().unwrap(), summary);
    let items = ws.adjudication_items().unwrap();
    assert!(items.iter().find(|i| i.item_id == item).unwrap().verdict.is_some());
    let reviewer = items.iter().find(|i| i.item_id == item).unwrap().reviewer_id.clone().unwrap();
    assert!(
        matches!(ws.record_verdict(&item, &reviewer, Verdict::Disagree), Err(e) if e.kind() == framelab_workbench::workspace::ErrorKind::Conflict)
    );
}
