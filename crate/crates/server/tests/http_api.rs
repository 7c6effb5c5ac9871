//! The `/api/v1` surface driven through the axum router in-process.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use nocode_core::runner::probe;
use nocode_server::http::router;

use common::{config, open_with, Scripted};

const TOKEN: &str = "operator-token";

struct Api {
    app: Router,
    _tmp: tempfile::TempDir,
}

impl Api {
    fn new(range: (u16, u16)) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = config(tmp.path());
        c.token = Some(TOKEN.into());
        c.runner.port_range = range;
        c.runner.readiness_timeout_s = 10.0;
        let svc = Arc::new(open_with(c, &Scripted::with_delay(0)));
        Api {
            app: router(svc),
            _tmp: tmp,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (s, b) = self.call(method, uri, body, Some(TOKEN)).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }
}

#[tokio::test]
async fn auth_is_required_except_for_runtime_config() {
    let api = Api::new((24520, 24529));
    let (s, body) = api.call(Method::GET, "/api/v1/config", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let cfg: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(cfg["api_base"], "/api/v1");
    assert_eq!(cfg["auth_required"], true);
    let (s, body) = api.call(Method::GET, "/api/v1/projects", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["code"], "unauthorized");
    let (s, _) = api.call(Method::GET, "/api/v1/projects", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = api.call(Method::GET, "/api/v1/projects", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn project_prompt_rollback_round_trip() {
    let api = Api::new((24530, 24539));
    let (s, p) = api
        .json(
            Method::POST,
            "/api/v1/projects",
            Some(json!({"name": "Forum", "context_description": "Q&A", "stack_profile": "static-test"})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED, "{p}");
    assert_eq!(p["features"].as_array().unwrap().len(), 2);
    let id = p["id"].as_str().unwrap().to_string();
    let base = format!("/api/v1/projects/{id}");

    let (s, e) = api
        .json(Method::POST, "/api/v1/projects", Some(json!({"name": "forum", "stack_profile": "static-test"})))
        .await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));

    let (s, e) = api.json(Method::POST, &format!("{base}/rollback"), None).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("at-root")));

    let (s, _) = api
        .json(Method::POST, &format!("{base}/pages"), Some(json!({"name": "Questions", "description": "List questions"})))
        .await;
    assert_eq!(s, StatusCode::CREATED);

    let (s, e) = api
        .json(Method::POST, &format!("{base}/prompts"), Some(json!({"kind": "feature", "page": "Questions", "text": ""})))
        .await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));

    let (s, job) = api
        .json(Method::POST, &format!("{base}/prompts"), Some(json!({"kind": "initial", "page": "Questions"})))
        .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{job}");
    assert_eq!(job["kind"], "generation");
    let job_uri = format!("/api/v1/jobs/{}?wait_ms=5000", job["id"].as_str().unwrap());
    let (s, job) = api.json(Method::GET, &job_uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(job["state"], "done", "{job}");
    let snap = job["result"]["snapshot_id"].as_str().unwrap().to_string();

    let (s, files) = api.json(Method::GET, &format!("{base}/files"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(files.as_array().unwrap().iter().any(|f| f["path"] == "client/gen/step001.txt"));
    let (s, bytes) = api.call(Method::GET, &format!("{base}/files/client/gen/step001.txt"), None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!bytes.is_empty());
    let (s, _) = api.json(Method::GET, &format!("{base}/files/client/missing.txt"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, h) = api.json(Method::GET, &format!("{base}/history"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h.as_array().unwrap().len(), 1);
    assert_eq!(h[0]["request"]["temperature"], 0.0);

    let (s, g) = api.json(Method::GET, &format!("{base}/graph"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["counts"]["abandoned_branches"], 0);

    let (s, r) = api.json(Method::POST, &format!("{base}/rollback"), Some(json!({"steps": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["label"], "scaffold");
    let (s, g) = api.json(Method::GET, &format!("{base}/graph"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["counts"]["abandoned_branches"], 1);
    let (s, dot) = api.call(Method::GET, &format!("{base}/graph?format=dot"), None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(dot).unwrap().contains("cluster_branch_1"));

    let (s, c) = api.json(Method::POST, &format!("{base}/checkout"), Some(json!({"snapshot": snap}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(c["id"], snap.as_str());

    let (s, stats) = api.json(Method::GET, &format!("{base}/stats"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stats["kinds"]["initial"], 1);
    assert_eq!(stats["rollbacks"]["rollbacks"], 1);

    let (s, f) = api.json(Method::POST, &format!("{base}/features/login"), None).await;
    assert_eq!(s, StatusCode::CREATED, "{f}");
    assert_eq!(f["snapshot"]["label"], "login");
    let (s, _) = api.json(Method::POST, &format!("{base}/features/login"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn malformed_input_and_unknown_ids() {
    let api = Api::new((24540, 24549));
    let (s, body) = api.call(Method::POST, "/api/v1/projects", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&body));
    let (s, e) = api.json(Method::POST, "/api/v1/projects", Some(json!({"name": "x", "colour": 1}))).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));
    let (s, e) = api.json(Method::GET, "/api/v1/projects/prj_nope", None).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::NOT_FOUND, Some("not-found")));
    let (s, _) = api.json(Method::GET, "/api/v1/jobs/job_nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = api
        .json(Method::POST, "/api/v1/projects", Some(json!({"name": "P", "stack_profile": "static-test"})))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = api.json(Method::GET, "/api/v1/projects/P/graph?format=svg", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api.json(Method::GET, "/api/v1/projects/P/run", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, e) = api
        .json(Method::POST, "/api/v1/projects/P/prompts", Some(json!({"kind": "dance", "page": "x", "text": "y"})))
        .await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("validation")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_on_the_test_profile_serves_a_preview() {
    let api = Api::new((24550, 24559));
    let (s, _) = api
        .json(Method::POST, "/api/v1/projects", Some(json!({"name": "Site", "stack_profile": "static-test"})))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let started = Instant::now();
    let (s, run) = api.json(Method::POST, "/api/v1/projects/Site/run", None).await;
    assert_eq!(s, StatusCode::OK, "{run}");
    assert_eq!(run["state"], "running", "{run}");
    assert!(started.elapsed() < Duration::from_secs(5));
    let port = run["frontend_port"].as_u64().unwrap() as u16;
    assert!(probe("127.0.0.1", port, "/"));
    let (s, again) = api.json(Method::POST, "/api/v1/projects/Site/run", None).await;
    assert_eq!((s, again["code"].as_str()), (StatusCode::CONFLICT, Some("contract-violation")));
    let (s, status) = api.json(Method::GET, "/api/v1/projects/Site/run", None).await;
    assert_eq!((s, status["state"].as_str()), (StatusCode::OK, Some("running")));
    let (s, stopped) = api.json(Method::POST, "/api/v1/projects/Site/stop", None).await;
    assert_eq!((s, stopped["state"].as_str()), (StatusCode::OK, Some("stopped")));
    assert!(!probe("127.0.0.1", port, "/"));
}
