#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use framelab_core::annotation::Phase;
use framelab_core::{Codebook, CorpusManifest, FrameLabel};
use framelab_workbench::workspace::{read_label_rows, AnnotationInput, SessionSpec};
use framelab_workbench::{Access, Workspace};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

pub fn labels(set: &str) -> Vec<(String, FrameLabel)> {
    read_label_rows(BufReader::new(File::open(fixture(&format!("{set}/labels.jsonl"))).unwrap())).unwrap()
}

pub fn open(dir: &Path) -> Workspace {
    Workspace::open(dir, Codebook::default_codebook(), 0.65, Access::ReadWrite).unwrap()
}

/// A workspace holding the `set` fixture corpus.
pub fn ingested(dir: &Path, set: &str) -> Workspace {
    let ws = open(dir);
    let manifest =
        CorpusManifest::from_json(&std::fs::read_to_string(fixture(&format!("{set}/manifest.json"))).unwrap()).unwrap();
    let input = BufReader::new(File::open(fixture(&format!("{set}/corpus.jsonl"))).unwrap());
    ws.ingest(manifest, input, false).unwrap();
    ws
}

/// Production session `prod` over the whole corpus, split between `ann-a`
/// and `ann-b`.
pub fn production_session(ws: &Workspace) {
    ws.create_session(SessionSpec {
        id: "prod".into(),
        phase: Phase::Production,
        annotators: vec!["ann-a".into(), "ann-b".into()],
        items: None,
        sample: None,
        icr_threshold: None,
        skip_gate_check: true,
    })
    .unwrap();
    ws.assign("prod", 11, false).unwrap();
}

/// Record the fixture labels as production annotations by whoever was
/// assigned each item.
pub fn annotate_all(ws: &Workspace, gold: &[(String, FrameLabel)]) {
    let session = ws.session("prod").unwrap();
    for (id, label) in gold {
        let annotator =
            session.assignment.iter().find(|(_, items)| items.contains(id)).map(|(a, _)| a.clone()).unwrap();
        ws.record_annotation(input(&annotator, id, *label)).unwrap();
    }
}

pub fn input(annotator: &str, article: &str, primary: FrameLabel) -> AnnotationInput {
    AnnotationInput {
        session_id: "prod".into(),
        article_id: article.into(),
        annotator_id: annotator.into(),
        primary,
        secondary: None,
        submission_id: None,
        codebook_version: None,
    }
}
