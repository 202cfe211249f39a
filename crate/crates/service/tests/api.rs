use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use workbench::model::Hyperparams;
use workbench::workspace::{Arch, CreateState, Workspace};
use workbench_service::api::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    app: AppState,
    router: Router,
    /// Untrained MLP on bars8.
    root: String,
    /// `root` after a short training run.
    trained: String,
    run: String,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path(), None).unwrap();
    let hp = Hyperparams {
        epochs: 6,
        ..Hyperparams::default()
    };
    let root = ws.create_state(&CreateState::new(Arch::Mlp, "bars8", hp)).unwrap();
    let summary = ws.train(&root, None, None, |_| {}).unwrap();
    let app = AppState::new(ws);
    Fixture {
        _dir: dir,
        router: router(app.clone(), None),
        app,
        root,
        trained: summary.state_id,
        run: summary.run_id,
    }
}

async fn raw(router: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = router.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call(router: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(router, method, uri, body).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn get(router: &Router, uri: &str) -> (StatusCode, Value) {
    call(router, Method::GET, uri, None).await
}

async fn post(router: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(router, Method::POST, uri, Some(body)).await
}

#[tokio::test]
async fn explainer_registry_and_docs() {
    let f = fixture();
    let (s, v) = get(&f.router, "/api/explainers").await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 13);
    let family = |fam: &str| list.iter().filter(|d| d["family"] == fam).count();
    assert_eq!((family("attribution"), family("introspection")), (8, 4));
    let (s, v) = get(&f.router, "/api/doc/conv2d").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["title"], "Convolution layer");
    let (s, v) = get(&f.router, "/api/doc/frobnicate").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
}

#[tokio::test]
async fn states_listing_and_model_files() {
    let f = fixture();
    let (s, v) = get(&f.router, "/api/states").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 2);
    let (s, bytes) = raw(&f.router, Method::GET, &format!("/api/states/{}", f.trained), None).await;
    assert_eq!(s, StatusCode::OK);
    let on_disk = std::fs::read(f.app.ws.state_path(&f.trained)).unwrap();
    assert_eq!(bytes, on_disk);
    let (s, v) = get(&f.router, "/api/states/unknown").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "NotFound");
    assert!(v["message"].as_str().unwrap().contains("unknown"));

    let (s, v) = post(&f.router, "/api/states", json!({"arch": "cnn", "dataset": "bars8"})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(v["state_id"].as_str().unwrap().starts_with("s-"));
    let (s, v) = post(&f.router, "/api/states", json!({"arch": "rnn"})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidInput")));
}

#[tokio::test]
async fn run_endpoints() {
    let f = fixture();
    let (s, v) = get(&f.router, "/api/runs").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["run_id"], f.run.as_str());
    assert_eq!(v[0]["final_state"], f.trained.as_str());

    let (s, v) = get(&f.router, &format!("/api/runs/{}/graph", f.run)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["nodes"][0]["name"], "input");

    let (s, v) = get(&f.router, &format!("/api/runs/{}/series/dense1/weights?stat=l2", f.run)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), 6);
    assert_eq!(v["node"], "dense1/weights");
    let (s, v) = get(&f.router, &format!("/api/runs/{}/series/train%2Floss", f.run)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["stat"], "mean");

    let (s, v) = get(&f.router, &format!("/api/runs/{}/histos/logits/bias", f.run)).await;
    assert_eq!(s, StatusCode::OK);
    let h = &v["histograms"][0];
    assert_eq!(h["edges"].as_array().unwrap().len(), 31);
    assert_eq!(h["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 2);

    let (s, _) = get(&f.router, &format!("/api/runs/{}/series/dense1/weights?stat=median", f.run)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get(&f.router, &format!("/api/runs/{}/series/nope", f.run)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&f.router, "/api/runs/run-missing/graph").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&f.router, "/api/runs/..%2F..%2Fetc/graph").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn explain_endpoint() {
    let f = fixture();
    let req = json!({
        "explainer": "integrated_gradients", "state": f.trained, "sample": 3, "target": 1, "params": {"m": 64}
    });
    let (s, v) = post(&f.router, "/api/explain", req).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["explainer_id"], "integrated_gradients");
    assert_eq!(v["values"].as_array().unwrap().len(), 64);
    assert_eq!(v["meta"]["steps"], 64);
    assert_eq!(v["sample"], "test:3");

    let (s, v) = post(&f.router, "/api/explain", json!({"explainer": "lime", "state": f.trained, "sample": "train:0"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["shape"], json!([16]));

    let (s, v) = post(&f.router, "/api/explain", json!({"explainer": "nope", "state": f.trained, "sample": 0})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let (s, v) = post(
        &f.router,
        "/api/explain",
        json!({"explainer": "integrated_gradients", "state": f.trained, "sample": 0, "params": {"m": 0}}),
    )
    .await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidParam")));
    let (s, _) = post(&f.router, "/api/explain", json!({"explainer": "saliency", "state": f.trained, "sample": 100000})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&f.router, Method::POST, "/api/explain", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidInput")));
}

#[tokio::test]
async fn scan_endpoint() {
    let f = fixture();
    let (s, v) = post(&f.router, "/api/scan", json!({"explainer": "dead_weight", "run": f.run, "node": "dense1"})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["payload"]["type"], "weight_scan");
    assert_eq!(v["payload"]["total"], 64 * 16);
    let (s, v) = post(
        &f.router,
        "/api/scan",
        json!({"explainer": "saturated_weight", "state": f.trained, "node": "logits", "params": {"threshold": 0.0}}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["payload"]["fraction"], 0.0);
    let (s, v) = post(&f.router, "/api/scan", json!({"explainer": "histo_trend", "run": f.run, "node": "dense1/weights"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["payload"]["counts"].as_array().unwrap().len(), 6);
    let (s, v) = post(&f.router, "/api/scan", json!({"explainer": "minmax", "run": f.run, "node": "dense1/bias"})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["payload"]["points"].as_array().unwrap().len(), 6);

    // the untrained root has no run
    let (s, _) = post(&f.router, "/api/scan", json!({"explainer": "dead_weight", "state": f.root, "node": "dense1"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = post(
        &f.router,
        "/api/scan",
        json!({"explainer": "dead_weight", "run": f.run, "node": "dense1", "params": {"window": 1}}),
    )
    .await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("InvalidParam")));
}

#[tokio::test]
async fn scan_with_one_checkpoint_is_unprocessable() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path(), None).unwrap();
    let hp = Hyperparams {
        epochs: 1,
        ..Hyperparams::default()
    };
    let root = ws.create_state(&CreateState::new(Arch::Mlp, "bars8", hp)).unwrap();
    let run = ws.train(&root, None, None, |_| {}).unwrap().run_id;
    let r = router(AppState::new(ws), None);
    let (s, v) = post(&r, "/api/scan", json!({"explainer": "dead_weight", "run": run, "node": "dense1"})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("InsufficientCheckpoints")));
}

#[tokio::test]
async fn metrics_compare_and_recommendations() {
    let f = fixture();
    let (s, v) = get(&f.router, &format!("/api/states/{}/metrics?split=train", f.trained)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["split"], "train");
    let total: u64 = v["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(total, 400);
    let (s, _) = get(&f.router, &format!("/api/states/{}/metrics?split=val", f.trained)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = get(&f.router, &format!("/api/states/{}/compare/{}?sample=2", f.root, f.trained)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["attribution_diffs"].as_array().unwrap().len(), 3);
    let (s, back) = get(&f.router, &format!("/api/states/{}/compare/{}?sample=2", f.trained, f.root)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        v["metric_deltas"]["accuracy"].as_f64().unwrap(),
        -back["metric_deltas"]["accuracy"].as_f64().unwrap()
    );
    let (s, _) = get(&f.router, &format!("/api/states/{}/compare/s-missing", f.root)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = get(&f.router, &format!("/api/states/{}/recommendations", f.trained)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["rule_id"], "R1");
    assert_eq!(v[0]["transition"]["kind"], "architecture_patch");
}

#[tokio::test]
async fn apply_transitions() {
    let f = fixture();
    let (_, recs) = get(&f.router, &format!("/api/states/{}/recommendations", f.trained)).await;
    let t = recs[0]["transition"].clone();
    let (s, v) = post(&f.router, "/api/transitions/apply", json!({"state": f.trained, "transition": t})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let cnn = v["state_id"].as_str().unwrap().to_string();
    let (_, model) = get(&f.router, &format!("/api/states/{cnn}")).await;
    assert_eq!(model["graph"]["nodes"][1]["kind"], "conv2d");
    assert_eq!(model["lineage"]["parent"], f.trained.as_str());

    let retrain = json!({"kind": "retrain", "payload": {"epochs": 2, "seed": 7, "dataset_id": "bars8"}});
    let (s, v) = post(&f.router, "/api/transitions/apply", json!({"state": cnn, "transition": retrain})).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert!(v["transition"]["transition_id"].as_str().unwrap().starts_with("t-"));
    assert_eq!(v["transition"]["provenance"], "manual");

    let bad = json!({"kind": "architecture_patch", "payload": {"insert_after": "nope", "filters": 8, "kernel_size": 3}});
    let (s, v) = post(&f.router, "/api/transitions/apply", json!({"state": f.trained, "transition": bad})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("InvalidPatch")));
    let (s, _) = post(&f.router, "/api/transitions/apply", json!({"state": "s-missing", "transition": t})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let _busy = f.app.jobs.reserve(&f.trained).unwrap();
    let retrain = json!({"kind": "retrain", "payload": {"epochs": 1, "seed": 7, "dataset_id": "bars8"}});
    let (s, v) = post(&f.router, "/api/transitions/apply", json!({"state": f.trained, "transition": retrain})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("Busy")));
}

#[tokio::test(flavor = "multi_thread")]
async fn training_jobs() {
    let f = fixture();
    let (s, v) = post(&f.router, "/api/train", json!({"state": f.root, "epochs": 3, "seed": 11})).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = v["job_id"].as_str().unwrap().to_string();
    assert_eq!(v["epochs"], 3);
    let mut last = Value::Null;
    for _ in 0..600 {
        let (s, v) = get(&f.router, &format!("/api/train/{job}")).await;
        assert_eq!(s, StatusCode::OK);
        last = v;
        if last["status"] == "done" || last["status"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(last["status"], "done", "{last}");
    assert_eq!(last["epoch"], 3);
    let new_state = last["state_id"].as_str().unwrap();
    let (s, _) = get(&f.router, &format!("/api/states/{new_state}")).await;
    assert_eq!(s, StatusCode::OK);

    let _busy = f.app.jobs.reserve(&f.root).unwrap();
    let (s, v) = post(&f.router, "/api/train", json!({"state": f.root})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("Busy")));
    let (s, _) = post(&f.router, "/api/train", json!({"state": "s-missing"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get(&f.router, "/api/train/job-999").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn provenance_cards_and_reports() {
    let f = fixture();
    let (_, map) = post(&f.router, "/api/explain", json!({"explainer": "saliency", "state": f.trained, "sample": 0})).await;
    let card = json!({
        "kind": "attribution",
        "payload": map,
        "source": {"state_id": f.trained, "explainer_id": "saliency", "sample": "test:0"},
        "annotation": "first look"
    });
    let (s, a) = post(&f.router, "/api/provenance/cards", card).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(a["card_id"], "card-1");
    let (s, b) = post(&f.router, "/api/provenance/cards", json!({"kind": "note", "payload": {"text": "hello"}})).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = post(&f.router, "/api/provenance/cards", json!({"kind": "note", "payload": null})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&f.router, "/api/provenance/cards", json!({"kind": "poem", "payload": {}})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&f.router, Method::PATCH, "/api/provenance/cards/card-1", Some(json!({"annotation": "second look", "group_id": "g1"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["annotation_history"], json!(["first look", "second look"]));
    assert_eq!(v["group_id"], "g1");
    let (s, _) = call(&f.router, Method::PATCH, "/api/provenance/cards/card-9", Some(json!({"annotation": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = get(&f.router, "/api/provenance/cards").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 2);
    let (_, v) = get(&f.router, "/api/provenance/cards?kind=note").await;
    assert_eq!(v[0]["card_id"], b["card_id"]);
    let (_, v) = get(&f.router, "/api/provenance/cards?group_id=g1").await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    let (_, v) = get(&f.router, &format!("/api/provenance/cards?state_id={}", f.trained)).await;
    assert_eq!(v[0]["card_id"], "card-1");
    let (s, _) = get(&f.router, "/api/provenance/cards?kind=poem").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = get(&f.router, "/api/provenance/cards/card-1").await;
    assert_eq!((s, v["kind"].as_str()), (StatusCode::OK, Some("attribution")));

    let body = json!({"title": "Findings", "sections": [{"heading": "Saliency", "card_ids": ["card-1"], "narrative": "Bars light up."}]});
    let (s, report) = post(&f.router, "/api/reports", body).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = report["report_id"].as_str().unwrap().to_string();
    let (s, v) = post(&f.router, "/api/reports", json!({"title": "Broken", "sections": [{"heading": "x", "card_ids": ["card-42"]}]})).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("DanglingReference")));

    let (s, v) = call(&f.router, Method::DELETE, "/api/provenance/cards/card-1", None).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("DanglingReference")));
    let (s, _) = call(&f.router, Method::DELETE, "/api/provenance/cards/card-2", None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = get(&f.router, "/api/provenance/cards/card-2").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = get(&f.router, "/api/reports").await;
    assert_eq!((s, v.as_array().unwrap().len()), (StatusCode::OK, 1));
    let (s, v) = get(&f.router, &format!("/api/reports/{id}")).await;
    assert_eq!((s, v["title"].as_str()), (StatusCode::OK, Some("Findings")));
    let (s, _) = get(&f.router, "/api/reports/r-missing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = post(&f.router, &format!("/api/reports/{id}/export"), Value::Null).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["files"], json!(["report.md", "cards/card-1.svg"]));
    let (s, md) = raw(&f.router, Method::GET, &format!("/api/reports/{id}/files/report.md"), None).await;
    assert_eq!(s, StatusCode::OK);
    let md = String::from_utf8(md).unwrap();
    assert!(md.starts_with("# Findings\n"));
    assert!(md.contains("![card-1 heatmap](cards/card-1.svg)"));
    assert!(md.contains("> second look"));
    let (s, svg) = raw(&f.router, Method::GET, &format!("/api/reports/{id}/files/cards/card-1.svg"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(svg.starts_with(b"<svg"));
    let (s, _) = raw(&f.router, Method::GET, &format!("/api/reports/{id}/files/..%2F..%2Fconfig.toml"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = post(&f.router, &format!("/api/reports/{id}/export?format=json"), Value::Null).await;
    assert_eq!((s, v["files"].clone()), (StatusCode::OK, json!(["report.json"])));
    let (s, v) = post(&f.router, &format!("/api/reports/{id}/export?format=svg_bundle"), Value::Null).await;
    assert_eq!((s, v["files"].clone()), (StatusCode::OK, json!(["cards/card-1.svg"])));
    let (s, v) = post(&f.router, &format!("/api/reports/{id}/export?format=pdf"), Value::Null).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNSUPPORTED_MEDIA_TYPE, Some("UnsupportedFormat")));
}

#[tokio::test]
async fn unknown_routes_and_cors() {
    let f = fixture();
    let (s, v) = get(&f.router, "/api/nothing").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("NotFound")));
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/explainers")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = f.router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn state_survives_service_restart() {
    let dir = tempfile::tempdir().unwrap();
    let card_id = {
        let r = router(AppState::new(Workspace::open(dir.path(), None).unwrap()), None);
        let (_, v) = post(&r, "/api/states", json!({"arch": "mlp"})).await;
        assert!(v["state_id"].is_string());
        let (_, c) = post(&r, "/api/provenance/cards", json!({"kind": "note", "payload": {"text": "kept"}})).await;
        c["card_id"].as_str().unwrap().to_string()
    };
    let r = router(AppState::new(Workspace::open(dir.path(), None).unwrap()), None);
    let (_, states) = get(&r, "/api/states").await;
    assert_eq!(states.as_array().unwrap().len(), 1);
    let (s, c) = get(&r, &format!("/api/provenance/cards/{card_id}")).await;
    assert_eq!((s, c["payload"]["text"].as_str()), (StatusCode::OK, Some("kept")));
}

#[tokio::test]
async fn serves_ui_directory_when_given() {
    let f = fixture();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ui</html>").unwrap();
    let r = router(f.app.clone(), Some(ui.path().to_path_buf()));
    let (s, body) = raw(&r, Method::GET, "/index.html", None).await;
    assert_eq!((s, body.as_slice()), (StatusCode::OK, b"<html>ui</html>".as_slice()));
    let (s, v) = get(&r, "/api/explainers").await;
    assert_eq!((s, v.as_array().unwrap().len()), (StatusCode::OK, 13));
}
