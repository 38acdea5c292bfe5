mod common;

use std::sync::Arc;

use common::*;
use framelab_core::inference::{BackendConfig, MockBackend, Strategy};
use framelab_core::FrameLabel;
use framelab_workbench::service;
use framelab_workbench::Workspace;
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    ws: Arc<Workspace>,
    client: reqwest::Client,
    _stop: tokio::sync::oneshot::Sender<()>,
    _dir: tempfile::TempDir,
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).json(&body).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }
}

/// mock50 corpus, a production session and, with `adjudication`, a mock
/// classification run plus a review queue.
async fn start(adjudication: bool) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let ws = ingested(dir.path(), "mock50");
    production_session(&ws);
    if adjudication {
        annotate_all(&ws, &labels("mock50"));
        ws.classify(&MockBackend::new(3), &BackendConfig::default(), Strategy::Definitions).await.unwrap();
        ws.build_adjudication(None, 0.3, 4, false).unwrap();
    }
    let ws = Arc::new(ws);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(service::serve(Arc::clone(&ws), listener, async {
        let _ = rx.await;
    }));
    Server { base, ws, client: reqwest::Client::new(), _stop: tx, _dir: dir }
}

fn version(s: &Server) -> Value {
    Value::String(s.ws.codebook_version().to_string())
}

#[tokio::test]
async fn codebook_endpoint() {
    let s = start(false).await;
    let (status, body) = s.get("/v1/codebook").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["codebook_version"], version(&s));
    assert_eq!(body["codebook"]["frames"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn annotate_flow_round_trip() {
    let s = start(false).await;
    let (status, next) = s.get("/v1/sessions/prod/next?annotator=ann-a").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["codebook_version"], version(&s));
    assert_eq!(next["done"], 0);
    let article = next["item"]["article_id"].as_str().unwrap().to_string();
    let headline = next["item"]["headline"].as_str().unwrap();
    assert_eq!(s.ws.corpus().unwrap().get(&article).unwrap().headline, headline);

    let body = json!({
        "session_id": "prod",
        "article_id": article,
        "annotator_id": "ann-a",
        "primary": "human_interest",
        "secondary": "conflict",
        "submission_id": "sub-1",
    });
    let (status, echo) = s.post("/v1/annotations", body.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(echo["codebook_version"], version(&s));
    assert_eq!(echo["created"], true);
    assert_eq!(echo["annotation"]["primary"], "human_interest");
    assert_eq!(echo["annotation"]["phase"], "production");
    let stored = &s.ws.annotation_history()[0];
    assert_eq!(serde_json::to_value(stored).unwrap(), echo["annotation"]);

    // a retried submission is not stored twice
    let (status, again) = s.post("/v1/annotations", body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["created"], false);
    assert_eq!(s.ws.annotation_history().len(), 1);

    let (_, next) = s.get("/v1/sessions/prod/next?annotator=ann-a").await;
    assert_eq!(next["done"], 1);
    assert_ne!(next["item"]["article_id"], Value::String(article));

    let (status, progress) = s.get("/v1/sessions/prod/progress").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["codebook_version"], version(&s));
    let rows = progress["progress"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r["total"].as_u64().unwrap()).sum::<u64>(), 50);
}

#[tokio::test]
async fn annotation_errors_map_to_status_codes() {
    let s = start(false).await;
    let (_, next) = s.get("/v1/sessions/prod/next?annotator=ann-a").await;
    let article = next["item"]["article_id"].as_str().unwrap().to_string();
    let base = json!({"session_id": "prod", "article_id": article, "annotator_id": "ann-a", "primary": "morality"});

    let mut same = base.clone();
    same["secondary"] = json!("morality");
    let (status, body) = s.post("/v1/annotations", same).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["codebook_version"], version(&s));

    let mut unknown_field = base.clone();
    unknown_field["confidence"] = json!(0.9);
    assert_eq!(s.post("/v1/annotations", unknown_field).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut bad_label = base.clone();
    bad_label["primary"] = json!("sports");
    assert_eq!(s.post("/v1/annotations", bad_label).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut other_session = base.clone();
    other_session["session_id"] = json!("nope");
    assert_eq!(s.post("/v1/annotations", other_session).await.0, StatusCode::NOT_FOUND);

    // ann-b is not assigned ann-a's item
    let mut not_assigned = base.clone();
    not_assigned["annotator_id"] = json!("ann-b");
    assert_eq!(s.post("/v1/annotations", not_assigned).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let mut stale = base.clone();
    stale["codebook_version"] = json!("sha256:0000");
    assert_eq!(s.post("/v1/annotations", stale).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let r = s
        .client
        .post(s.url("/v1/annotations"))
        .header(service::ANNOTATOR_HEADER, "ann-b")
        .json(&base)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);

    let r = s.client.post(s.url("/v1/annotations")).body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    assert_eq!(s.get("/v1/sessions/nope/next?annotator=ann-a").await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/v1/sessions/prod/next?annotator=zed").await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/v1/sessions/prod/next").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(s.get("/v1/nothing").await.0, StatusCode::NOT_FOUND);
    assert!(s.ws.annotation_history().is_empty());

    // identity from the header alone
    let r =
        s.client.get(s.url("/v1/sessions/prod/next")).header(service::ANNOTATOR_HEADER, "ann-b").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
}

#[tokio::test]
async fn icr_endpoint_reports_gate() {
    let s = start(false).await;
    s.ws.create_session(framelab_workbench::workspace::SessionSpec {
        id: "t1".into(),
        phase: framelab_core::annotation::Phase::Training1,
        annotators: vec!["ann-a".into(), "ann-b".into()],
        items: Some(vec!["m50-00".into(), "m50-01".into(), "m50-02".into(), "m50-03".into()]),
        sample: None,
        icr_threshold: None,
        skip_gate_check: false,
    })
    .unwrap();
    assert_eq!(s.get("/v1/sessions/t1/icr").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    use FrameLabel::*;
    let a = [HumanInterest, HumanInterest, Conflict, NoFrame];
    let b = [HumanInterest, Conflict, Conflict, NoFrame];
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        for (who, label) in [("ann-a", *x), ("ann-b", y)] {
            let body =
                json!({"session_id": "t1", "article_id": format!("m50-0{i}"), "annotator_id": who, "primary": label});
            assert_eq!(s.post("/v1/annotations", body).await.0, StatusCode::OK);
        }
    }
    let (status, body) = s.get("/v1/sessions/t1/icr").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["codebook_version"], version(&s));
    assert!((body["report"]["kappa"].as_f64().unwrap() - 0.4375 / 0.6875).abs() < 1e-12);
    assert_eq!(body["gate"], "repeat");
    assert_eq!(body["last_recorded_gate"], Value::Null);
    assert_eq!(s.get("/v1/sessions/t1/icr?a=ann-a&b=ghost").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn adjudication_is_blind_and_write_once() {
    let s = start(true).await;
    let items = s.ws.adjudication_items().unwrap();
    let reviewer = items[0].reviewer_id.clone().unwrap();

    let (status, next) = s.get(&format!("/v1/adjudication/next?reviewer={reviewer}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["codebook_version"], version(&s));
    let keys: Vec<&str> = next.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["item_id", "headline", "proposed"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    let text = next.to_string();
    for forbidden in ["provenance", "model", "original_human", "control_random", "article_id"] {
        assert!(!keys.contains(&forbidden));
        assert!(!text.contains(&format!("\"{forbidden}\"")));
    }

    let item_id = next["item_id"].as_str().unwrap().to_string();
    let body = json!({"item_id": item_id, "reviewer_id": reviewer, "verdict": "agree"});
    let (status, v) = s.post("/v1/adjudication/verdict", body.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["codebook_version"], version(&s));
    assert!(!v.to_string().contains("provenance"));
    let (status, err) = s.post("/v1/adjudication/verdict", body).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["codebook_version"], version(&s));

    let unknown = json!({"item_id": "adj-0000", "reviewer_id": reviewer, "verdict": "agree"});
    assert_eq!(s.post("/v1/adjudication/verdict", unknown).await.0, StatusCode::NOT_FOUND);
    let extra = json!({"item_id": item_id, "reviewer_id": reviewer, "verdict": "agree", "provenance": "model"});
    assert_eq!(s.post("/v1/adjudication/verdict", extra).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    // someone else's item
    if let Some(other) = items.iter().find(|i| i.reviewer_id.as_deref() != Some(reviewer.as_str())) {
        let body = json!({"item_id": other.item_id, "reviewer_id": reviewer, "verdict": "agree"});
        assert_eq!(s.post("/v1/adjudication/verdict", body).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    }

    // work through the queue; the final payload reports completion
    loop {
        let (_, next) = s.get(&format!("/v1/adjudication/next?reviewer={reviewer}")).await;
        if next["done"] == true {
            assert!(next.get("item_id").is_none());
            assert_eq!(next["pending"], 0);
            assert!(next["reviewed"].as_u64().unwrap() >= 1);
            break;
        }
        let body = json!({"item_id": next["item_id"], "reviewer_id": reviewer, "verdict": "disagree"});
        assert_eq!(s.post("/v1/adjudication/verdict", body).await.0, StatusCode::OK);
    }
}

#[tokio::test]
async fn reports_are_served_as_json_and_csv() {
    let s = start(true).await;
    for kind in ["frames", "months"] {
        let (status, body) = s.get(&format!("/v1/reports/{kind}")).await;
        assert_eq!(status, StatusCode::OK, "{kind}: {body}");
        assert_eq!(body["codebook_version"], version(&s));
        assert_eq!(body["source"], "human");
        let (status, body) = s.get(&format!("/v1/reports/{kind}?source=model")).await;
        assert_eq!(status, StatusCode::OK, "{kind}: {body}");
    }
    // the mock50 fixture carries no sentiment labels
    assert_eq!(s.get("/v1/reports/sentiment").await.0, StatusCode::NOT_FOUND);
    let (_, months) = s.get("/v1/reports/months").await;
    assert_eq!(months["data"]["buckets"].as_array().unwrap().len(), 22);

    let r = s.client.get(s.url("/v1/reports/frames?format=csv")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()[service::VERSION_HEADER].to_str().unwrap(), s.ws.codebook_version());
    let served = r.text().await.unwrap();
    let expected = s.ws.report_frames(&framelab_workbench::workspace::LabelSource::Human).unwrap().to_csv();
    assert_eq!(served, expected);

    assert_eq!(s.get("/v1/reports/pie").await.0, StatusCode::NOT_FOUND);
    assert_eq!(s.get("/v1/reports/frames?source=oracle").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reports_without_labels_are_not_found() {
    let s = start(false).await;
    let (status, body) = s.get("/v1/reports/frames").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["codebook_version"], version(&s));
    assert_eq!(s.get("/v1/adjudication/next?reviewer=ann-a").await.0, StatusCode::NOT_FOUND);
}
