use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nocode_core::analytics::{graph_export, Expectation, GraphCounts, ScriptLine, SessionScript, Step};
use nocode_core::clock::{LogicalClock, SequentialIds};
use nocode_core::digest::Digest;
use nocode_core::gateway::{
    recorded_temperatures, Completion, Failure, MockProvider, Provider, ProviderConfig, ProviderRequest, TokenUsage,
};
use nocode_core::model::{PageStatus, Project};
use nocode_core::projector::fs::scan_dir;
use nocode_core::prompt::PromptKind;
use nocode_core::version::list_rollbacks;
use nocode_core::{Error, ErrorKind, Result};
use nocode_server::{JobState, ServerConfig, Service, ServiceOptions, Submission};

/// Model id used for replays; it is part of every fixture hash.
pub const REPLAY_MODEL: &str = "gpt-4";

pub struct ReplayOptions {
    /// Directory of `<hash>.txt` mock fixtures.
    pub fixtures: PathBuf,
    /// Keep the replayed project here instead of a temporary directory.
    pub data_root: Option<PathBuf>,
    /// Authored replies, one file per submit step in name order. When set,
    /// the replay answers from these and writes the fixtures it would need.
    pub record_from: Option<PathBuf>,
}

impl ReplayOptions {
    pub fn mock(fixtures: impl Into<PathBuf>) -> Self {
        ReplayOptions {
            fixtures: fixtures.into(),
            data_root: None,
            record_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectFailure {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ExpectFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A step that could not be carried out; the replay stops there.
#[derive(Debug)]
pub struct StepError {
    pub line: usize,
    pub step: String,
    pub error: Error,
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} ({}): {}", self.line, self.step, self.error)
    }
}

impl std::error::Error for StepError {}

impl StepError {
    /// Fixture misses and configuration problems are setup errors (exit 2);
    /// anything else means the session did not behave as scripted (exit 1).
    pub fn exit_code(&self) -> i32 {
        match self.error.kind() {
            ErrorKind::FixtureMissing | ErrorKind::Config => 2,
            _ => 1,
        }
    }
}

pub struct ReplayReport {
    pub project: Project,
    pub tree_digest: Digest,
    pub graph: GraphCounts,
    pub requests: usize,
    pub recorded: usize,
    pub failures: Vec<ExpectFailure>,
    pub elapsed: Duration,
    pub workspace: PathBuf,
    /// Keeps a temporary data root alive as long as the report.
    _tmp: Option<tempfile::TempDir>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "project {}: {} snapshot(s), {} request(s), tree {}\n  graph: active path {}, abandoned branches {}, discarded {}\n  {} in {:.2}s",
            self.project.name,
            self.graph.nodes,
            self.requests,
            self.tree_digest.to_hex(),
            self.graph.active_path,
            self.graph.abandoned_branches,
            self.graph.discarded,
            if self.passed() { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
        );
        for f in &self.failures {
            out.push_str(&format!("\n  expectation failed at {f}"));
        }
        out
    }
}

/// Answers from authored replies in order and freezes each one as a mock
/// fixture under the request hash.
struct Recorder {
    replies: Mutex<Vec<(String, String)>>,
    fixtures: PathBuf,
    count: Arc<AtomicUsize>,
}

impl Recorder {
    fn open(dir: &Path, fixtures: &Path, count: Arc<AtomicUsize>) -> Result<Self> {
        let mut names: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::Config(format!("cannot read responses {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut replies = Vec::new();
        for p in names.into_iter().rev() {
            let text = fs::read_to_string(&p)?;
            replies.push((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), text));
        }
        fs::create_dir_all(fixtures)?;
        Ok(Recorder {
            replies: Mutex::new(replies),
            fixtures: fixtures.to_path_buf(),
            count,
        })
    }

    fn remaining(&self) -> Vec<String> {
        self.replies.lock().unwrap_or_else(|e| e.into_inner()).iter().rev().map(|r| r.0.clone()).collect()
    }
}

struct SharedRecorder(Arc<Recorder>);

impl Provider for SharedRecorder {
    fn complete(&self, req: &ProviderRequest) -> std::result::Result<Completion, Failure> {
        let next = self.0.replies.lock().unwrap_or_else(|e| e.into_inner()).pop();
        let Some((name, text)) = next else {
            return Err(Failure::Fatal(Error::Config("no authored response left for this request".into())));
        };
        MockProvider::record(&self.0.fixtures, req.hash, &text).map_err(Failure::Fatal)?;
        self.0.count.fetch_add(1, Ordering::SeqCst);
        log::info!("recorded {name} as {}", req.hash.to_hex());
        Ok(Completion {
            text,
            usage: TokenUsage::default(),
            finish_reason: "stop".into(),
        })
    }
}

fn step_name(step: &Step) -> String {
    match step {
        Step::CreateProject { name, .. } => format!("create_project {name}"),
        Step::AddPage { name, .. } => format!("add_page {name}"),
        Step::ApplyFeature { feature } => format!("apply_feature {feature}"),
        Step::Submit { kind, page, .. } => format!("submit {kind} {page}"),
        Step::Rollback { steps } => format!("rollback {steps}"),
        Step::Checkout { label } => format!("checkout {label}"),
        Step::Expect(_) => "expect".into(),
    }
}

fn job_error(job: &nocode_server::Job) -> Error {
    let e = job.error.clone().unwrap_or_else(|| nocode_server::ApiError::new("unknown", "job failed"));
    match e.code.as_str() {
        "fixture-missing" => Error::FixtureMissing {
            hash: e.message.rsplit(' ').next().unwrap_or_default().to_string(),
        },
        "configuration" => Error::Config(e.message),
        "provider-timeout" => Error::Provider(e.message),
        _ => Error::Provider(format!("{}: {}", e.code, e.message)),
    }
}

fn check(svc: &Service, project: &str, e: &Expectation) -> Result<Option<String>> {
    let fail = |m: String| Ok(Some(m));
    match e {
        Expectation::FileExists { path } => match svc.file(project, path) {
            Ok(_) => Ok(None),
            Err(err) if err.kind() == ErrorKind::NotFound => fail(format!("expected {path} to exist")),
            Err(err) => Err(err),
        },
        Expectation::FileAbsent { path } => match svc.file(project, path) {
            Ok(_) => fail(format!("expected {path} to be absent")),
            Err(err) if err.kind() == ErrorKind::NotFound => Ok(None),
            Err(err) => Err(err),
        },
        Expectation::FileContains { path, needle } => match svc.file(project, path) {
            Ok(f) if String::from_utf8_lossy(&f.content).contains(needle.as_str()) => Ok(None),
            Ok(_) => fail(format!("{path} does not contain {needle:?}")),
            Err(err) if err.kind() == ErrorKind::NotFound => fail(format!("expected {path} to exist")),
            Err(err) => Err(err),
        },
        Expectation::TreeDigest { digest } => {
            let p = svc.project(project)?;
            let snap = svc
                .snapshots(project)?
                .into_iter()
                .find(|s| Some(&s.id) == p.head_snapshot.as_ref())
                .ok_or_else(|| Error::ContractViolation("HEAD snapshot missing".into()))?;
            if snap.tree_digest.to_hex() == *digest {
                Ok(None)
            } else {
                fail(format!("tree digest is {}, expected {digest}", snap.tree_digest.to_hex()))
            }
        }
        Expectation::PageStatus { page, status } => {
            let p = svc.project(project)?;
            let want = PageStatus::parse(status).ok_or_else(|| Error::Validation(format!("unknown page status `{status}`")))?;
            match p.page_by_name(page) {
                Some(pg) if pg.status == want => Ok(None),
                Some(pg) => fail(format!("page {page} is {}, expected {status}", pg.status.as_str())),
                None => fail(format!("no page named {page}")),
            }
        }
        Expectation::Graph {
            nodes,
            active_path,
            abandoned_branches,
            discarded,
        } => {
            let c = graph_export(&svc.graph(project)?).counts;
            let mut bad = Vec::new();
            let mut cmp = |what: &str, want: &Option<usize>, got: usize| {
                if let Some(w) = want {
                    if *w != got {
                        bad.push(format!("{what} {got} (expected {w})"));
                    }
                }
            };
            cmp("nodes", nodes, c.nodes);
            cmp("active path", active_path, c.active_path);
            cmp("abandoned branches", abandoned_branches, c.abandoned_branches);
            cmp("discarded", discarded, c.discarded);
            if bad.is_empty() {
                Ok(None)
            } else {
                fail(format!("graph has {}", bad.join(", ")))
            }
        }
        Expectation::Rollbacks { count } => {
            let p = svc.project(project)?;
            let n = svc.store().read(|c| list_rollbacks(c, &p.id))?.len() as u32;
            if n == *count {
                Ok(None)
            } else {
                fail(format!("{n} rollback(s), expected {count}"))
            }
        }
        Expectation::TemperatureZero => {
            let temps = svc.store().read(recorded_temperatures)?;
            let bad = temps.iter().filter(|t| **t != 0.0).count();
            if bad == 0 {
                Ok(None)
            } else {
                fail(format!("{bad} of {} request(s) used a nonzero temperature", temps.len()))
            }
        }
    }
}

fn parse_kind(kind: &str) -> Result<PromptKind> {
    kind.parse().map_err(|e| Error::Validation(format!("{e}")))
}

/// Runs a scripted session against a fresh data root with the logical clock
/// and sequential ids, so two replays of one script are byte-identical.
pub fn replay(script: &SessionScript, opts: &ReplayOptions) -> std::result::Result<ReplayReport, StepError> {
    let started = Instant::now();
    let setup = |error: Error| StepError {
        line: 0,
        step: "setup".into(),
        error,
    };
    let (root, tmp) = match &opts.data_root {
        Some(p) => (p.clone(), None),
        None => {
            let t = tempfile::tempdir().map_err(|e| setup(e.into()))?;
            (t.path().to_path_buf(), Some(t))
        }
    };
    let mut config = ServerConfig::local(&root);
    config.workers = 1;
    config.provider = ProviderConfig::mock(&opts.fixtures, REPLAY_MODEL);
    let recorded = Arc::new(AtomicUsize::new(0));
    let mut options = ServiceOptions::new(config)
        .clock(Arc::new(LogicalClock::default()))
        .ids(Arc::new(SequentialIds::default()));
    let mut recorder = None;
    if let Some(dir) = &opts.record_from {
        let r = Arc::new(Recorder::open(dir, &opts.fixtures, recorded.clone()).map_err(setup)?);
        options = options.provider(Box::new(SharedRecorder(r.clone())));
        recorder = Some(r);
    }
    let svc = Service::open(options).map_err(setup)?;

    let mut project_name = String::new();
    let mut failures = Vec::new();
    for ScriptLine { line, step } in &script.steps {
        let at = |error: Error| StepError {
            line: *line,
            step: step_name(step),
            error,
        };
        match step {
            Step::CreateProject {
                name,
                description,
                profile,
            } => {
                let p = svc.create_project(name, description, profile).map_err(at)?;
                project_name = p.name;
            }
            Step::AddPage { name, description } => {
                svc.add_page(&project_name, name, description).map_err(at)?;
            }
            Step::ApplyFeature { feature } => {
                svc.apply_feature(&project_name, feature).map_err(at)?;
            }
            Step::Submit {
                kind,
                page,
                target,
                text,
            } => {
                let submission = Submission {
                    kind: parse_kind(kind).map_err(at)?,
                    page: page.clone(),
                    target: target.clone(),
                    text: text.clone(),
                };
                let job = svc.submit_and_wait(&project_name, &submission).map_err(at)?;
                if job.state != JobState::Done {
                    return Err(at(job_error(&job)));
                }
                if job.result.as_ref().is_some_and(|r| r.no_files_emitted) {
                    log::warn!("line {line}: the reply emitted no files");
                }
            }
            Step::Rollback { steps } => {
                svc.rollback(&project_name, *steps).map_err(at)?;
            }
            Step::Checkout { label } => {
                svc.checkout(&project_name, label).map_err(at)?;
            }
            Step::Expect(e) => {
                if let Some(message) = check(&svc, &project_name, e).map_err(at)? {
                    failures.push(ExpectFailure { line: *line, message });
                }
            }
        }
    }

    let last = script.steps.last().map(|l| l.line).unwrap_or(0);
    let finish = |error: Error| StepError {
        line: last,
        step: "summary".into(),
        error,
    };
    let project = svc.project(&project_name).map_err(finish)?;
    let graph = graph_export(&svc.graph(&project_name).map_err(finish)?).counts;
    let head = svc
        .snapshots(&project_name)
        .map_err(finish)?
        .into_iter()
        .find(|s| Some(&s.id) == project.head_snapshot.as_ref())
        .ok_or_else(|| finish(Error::ContractViolation("HEAD snapshot missing".into())))?;
    let requests = svc.history(&project_name).map_err(finish)?.len();
    let workspace = svc.workspace_dir(&project.id);
    let profile = svc.catalog().profile(&project.stack_profile_id).map_err(finish)?;
    let on_disk = scan_dir(&workspace, &profile.ignore).map_err(finish)?.tree_digest();
    if on_disk != head.tree_digest {
        failures.push(ExpectFailure {
            line: last,
            message: format!("workspace on disk is {}, HEAD is {}", on_disk.short(), head.tree_digest.short()),
        });
    }
    if let Some(r) = recorder {
        let left = r.remaining();
        if !left.is_empty() {
            failures.push(ExpectFailure {
                line: last,
                message: format!("authored responses never used: {}", left.join(", ")),
            });
        }
    }
    svc.shutdown();
    Ok(ReplayReport {
        project,
        tree_digest: head.tree_digest,
        graph,
        requests,
        recorded: recorded.load(Ordering::SeqCst),
        failures,
        elapsed: started.elapsed(),
        workspace,
        _tmp: tmp,
    })
}
