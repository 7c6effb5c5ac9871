//! The `nocode` binary: exit codes, report output and crash recovery of
//! `nocode serve`.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nocode"));
    c.env_remove("RUST_LOG");
    for (k, _) in std::env::vars() {
        if k.starts_with("NOCODE_") {
            c.env_remove(k);
        }
    }
    c
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn session(name: &str, file: &str) -> String {
    fixtures().join(name).join(file).display().to_string()
}

fn log(name: &str) -> String {
    fixtures().join("logs").join(name).display().to_string()
}

#[test]
fn replay_passes_and_reports_the_graph() {
    let o = run(&["replay", &session("p2-session", "script.jsonl"), "--fixtures", &session("p2-session", "mocks")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("active path 9, abandoned branches 4, discarded 7"), "{out}");
    assert!(out.contains("PASS"));
}

#[test]
fn replay_without_fixtures_exits_2() {
    let empty = tempfile::tempdir().unwrap();
    let o = run(&[
        "replay",
        &session("todo-app", "script.jsonl"),
        "--fixtures",
        empty.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixture"));
}

#[test]
fn failed_expectation_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let script = std::fs::read_to_string(session("todo-app", "script.jsonl")).unwrap();
    let script = script + "{\"step\":\"expect\",\"expect\":\"file_exists\",\"path\":\"client/src/views/Nope.vue\"}\n";
    let path = tmp.path().join("script.jsonl");
    std::fs::write(&path, script).unwrap();
    let o = run(&["replay", path.to_str().unwrap(), "--fixtures", &session("todo-app", "mocks")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Nope.vue"));
}

#[test]
fn malformed_script_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.jsonl");
    std::fs::write(&path, "{\"step\":\"add_page\",\"name\":\"x\"}\n").unwrap();
    let o = run(&["replay", path.to_str().unwrap(), "--fixtures", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_prints_the_category_table() {
    let o = run(&["analyze", &log("exploratory.jsonl")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let total = out.lines().find(|l| l.starts_with("Total")).unwrap();
    assert_eq!(total.split_whitespace().collect::<Vec<_>>(), ["Total", "65", "53", "46"]);

    let o = run(&["analyze", &log("exploratory.jsonl"), "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["participants"][1]["counts"]["bug_fixing"], 24);
}

#[test]
fn stats_and_graph_over_logs() {
    let o = run(&["stats", &log("second_experiment.jsonl"), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"], 5);

    let o = run(&["export-graph", &log("pilot.jsonl"), "--participant", "P2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["counts"]["active_path"], 9);
    assert_eq!(v["counts"]["discarded"], 7);

    let o = run(&["export-graph", &log("pilot.jsonl"), "--participant", "P2"]);
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph"), "{dot}");

    let o = run(&["export-graph", &log("pilot.jsonl")]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["export-graph", &log("pilot.jsonl"), "--participant", "P9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reports_over_a_replayed_project() {
    let data = tempfile::tempdir().unwrap();
    let d = data.path().to_str().unwrap();
    let o = run(&[
        "replay",
        &session("p2-session", "script.jsonl"),
        "--fixtures",
        &session("p2-session", "mocks"),
        "--data",
        d,
    ]);
    assert_eq!(o.status.code(), Some(0));

    let o = run(&["stats", "todoapp", "--data", d, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"], 4);
    assert_eq!(v["participants"][0]["discarded"], 7);

    let o = run(&["export-graph", "TodoApp", "--data", d, "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["counts"]["nodes"], 17);

    let o = run(&["stats", "Missing", "--data", d]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["stats", "TodoApp", "--data", "/nonexistent/data"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_rejects_a_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("nocode.toml");
    std::fs::write(&path, "data_root = \"x\"\ncolour = 1\n").unwrap();
    let o = run(&["serve", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(config: &Path) -> Self {
        let bind = {
            let text = std::fs::read_to_string(config).unwrap();
            let line = text.lines().find(|l| l.starts_with("bind")).unwrap().to_string();
            line.split('"').nth(1).unwrap().to_string()
        };
        let child = bin()
            .args(["serve", "--config", config.to_str().unwrap()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let base = format!("http://{bind}/api/v1");
        let t0 = Instant::now();
        while t0.elapsed() < Duration::from_secs(10) {
            if ureq::get(format!("{base}/config")).call().is_ok() {
                return Server { child, base };
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        panic!("server did not come up on {bind}");
    }

    fn kill(mut self) {
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGKILL);
        }
        self.child.wait().unwrap();
    }

    fn agent() -> ureq::Agent {
        ureq::Agent::config_builder().http_status_as_error(false).build().into()
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut r = Self::agent().get(format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }

    fn get_raw(&self, path: &str) -> String {
        Self::agent()
            .get(format!("{}{path}", self.base))
            .call()
            .unwrap()
            .body_mut()
            .read_to_string()
            .unwrap()
    }

    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut r = Self::agent().post(format!("{}{path}", self.base)).send_json(body).unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn state_survives_a_killed_server() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let mocks = tmp.path().join("mocks");
    std::fs::create_dir_all(&mocks).unwrap();
    let config = tmp.path().join("nocode.toml");
    std::fs::write(
        &config,
        format!(
            "data_root = \"{}\"\nbind = \"127.0.0.1:{}\"\n\n[provider]\nmode = \"mock\"\nmodel_id = \"gpt-4\"\nfixtures_dir = \"{}\"\n\n[runner]\nport_range = [24640, 24659]\n",
            data.display(),
            free_port(),
            mocks.display()
        ),
    )
    .unwrap();

    let srv = Server::start(&config);
    let (s, p) = srv.post(
        "/projects",
        json!({"name": "ForumApp", "context_description": "A question and answer forum."}),
    );
    assert_eq!(s, 201, "{p}");
    let id = p["id"].as_str().unwrap().to_string();
    assert_eq!(srv.post(&format!("/projects/{id}/features/login"), json!({})).0, 201);
    assert_eq!(srv.post(&format!("/projects/{id}/features/user_registration"), json!({})).0, 201);
    assert_eq!(
        srv.post(&format!("/projects/{id}/pages"), json!({"name": "Answers", "description": "Answers of a question"})).0,
        201
    );
    // no mock recorded for this prompt: the job fails, nothing is committed
    let (s, job) = srv.post(&format!("/projects/{id}/prompts"), json!({"kind": "initial", "page": "Answers"}));
    assert_eq!(s, 202, "{job}");
    let (_, job) = srv.get(&format!("/jobs/{}?wait_ms=5000", job["id"].as_str().unwrap()));
    assert_eq!(job["state"], "failed", "{job}");
    assert_eq!(job["error"]["code"], "fixture-missing");
    assert_eq!(srv.post(&format!("/projects/{id}/rollback"), json!({"steps": 1})).0, 200);

    let (_, before) = srv.get(&format!("/projects/{id}"));
    let (_, snaps_before) = srv.get(&format!("/projects/{id}/snapshots"));
    let (_, files_before) = srv.get(&format!("/projects/{id}/files"));
    let login_before = srv.get_raw(&format!("/projects/{id}/files/client/src/views/LoginView.vue"));
    srv.kill();

    let srv = Server::start(&config);
    let (s, after) = srv.get(&format!("/projects/{id}"));
    assert_eq!(s, 200);
    assert_eq!(after["head_snapshot"], before["head_snapshot"]);
    assert_eq!(srv.get(&format!("/projects/{id}/snapshots")).1, snaps_before);
    assert_eq!(srv.get(&format!("/projects/{id}/files")).1, files_before);
    assert_eq!(srv.get_raw(&format!("/projects/{id}/files/client/src/views/LoginView.vue")), login_before);
    assert_eq!(srv.get(&format!("/projects/{id}/stats")).1["rollbacks"]["rollbacks"], 1);
    // the page whose generation failed can still be generated later
    let pages = after["pages"].as_array().unwrap();
    assert!(pages.iter().any(|p| p["name"] == "Answers" && p["status"] == "failed"), "{after}");
    // and the restarted server accepts new work on the project
    let (s, _) = srv.post(&format!("/projects/{id}/rollback"), json!({"steps": 1}));
    assert_eq!(s, 200);
    let (s, e) = srv.post(
        "/projects",
        json!({"name": "forumapp", "context_description": "duplicate"}),
    );
    assert_eq!((s, e["code"].as_str()), (409, Some("conflict")));
}

/// Each bundled mock is named by the hash of a prompt the script composes,
/// recomputed here from the persisted messages.
#[test]
fn fixture_names_are_request_hashes() {
    use nocode_core::digest::Digest;
    use nocode_core::gateway::transcript;
    use nocode_core::store::{list_projects, Store};

    for name in ["todo-app", "forum-app", "p2-session"] {
        let data = tempfile::tempdir().unwrap();
        let o = run(&[
            "replay",
            &session(name, "script.jsonl"),
            "--fixtures",
            &session(name, "mocks"),
            "--data",
            data.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        let store = Store::open(&data.path().join("nocode.sqlite")).unwrap();
        let mut projects = store.read(list_projects).unwrap();
        assert_eq!(projects.len(), 1);
        let project = projects.remove(0);
        let exchanges = store.read(|c| transcript(c, &project.id)).unwrap();

        let mut hashes: Vec<String> = exchanges
            .iter()
            .map(|x| {
                let messages: Vec<[&str; 2]> = x
                    .request
                    .composed_prompt
                    .messages
                    .iter()
                    .map(|m| [m.role.as_str(), m.text.as_str()])
                    .collect();
                let canonical = format!(
                    "{{\"model\":{},\"messages\":{}}}",
                    serde_json::to_string(&x.request.model_id).unwrap(),
                    serde_json::to_string(&messages).unwrap()
                );
                let hex = Digest::of(canonical.as_bytes()).to_hex();
                assert_eq!(hex, x.request.request_hash.to_hex());
                hex
            })
            .collect();
        hashes.sort();
        hashes.dedup();
        let mut files: Vec<String> = std::fs::read_dir(fixtures().join(name).join("mocks"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().trim_end_matches(".txt").to_string())
            .collect();
        files.sort();
        assert_eq!(hashes, files, "{name}");
    }
}
