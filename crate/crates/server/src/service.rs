use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use nocode_core::catalog::{Catalog, StackProfile};
use nocode_core::clock::{Clock, IdSource, RandomIds, SystemClock};
use nocode_core::digest::Digest;
use nocode_core::gateway::{transcript, Exchange, Gateway, Provider};
use nocode_core::model::{FileEntry, JobId, Page, PageId, PageStatus, Project, ProjectId};
use nocode_core::path::RelPath;
use nocode_core::projector::fs::{materialize, DiskSink};
use nocode_core::projector::{project_response, ProjectionResult};
use nocode_core::prompt::{compose_page_creation, compose_refinement, compose_transition, PromptKind};
use nocode_core::runner::{self, InstallReport, RunHandle, Runner};
use nocode_core::store::{find_project, insert_project, list_projects, save_project_state, Store};
use nocode_core::version::{self, CommitMeta, ObjectStore, Snapshot, VersionGraph};
use nocode_core::{Error, Result};

use crate::config::ServerConfig;
use crate::jobs::{self, Job, JobKind, JobRequest, JobResult, JobState};
use crate::ApiError;

/// Everything a [`Service`] needs besides its config. Defaults are the
/// wall clock, random ids, the builtin catalog and the configured provider.
pub struct ServiceOptions {
    pub config: ServerConfig,
    pub clock: Arc<dyn Clock>,
    pub ids: Arc<dyn IdSource>,
    pub catalog: Option<Catalog>,
    pub provider: Option<Box<dyn Provider>>,
}

impl ServiceOptions {
    pub fn new(config: ServerConfig) -> Self {
        ServiceOptions {
            config,
            clock: Arc::new(SystemClock),
            ids: Arc::new(RandomIds),
            catalog: None,
            provider: None,
        }
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn ids(mut self, ids: Arc<dyn IdSource>) -> Self {
        self.ids = ids;
        self
    }

    pub fn catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = Some(catalog);
        self
    }

    pub fn provider(mut self, provider: Box<dyn Provider>) -> Self {
        self.provider = Some(provider);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: String,
    pub page_name: String,
    pub description: String,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectView {
    #[serde(flatten)]
    pub project: Project,
    pub features: Vec<FeatureSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSummary {
    pub path: RelPath,
    pub size: usize,
    pub digest: Digest,
}

/// A prompt as submitted. `page` and `target` take a page id or name; the
/// text of an `Initial` submission is ignored since page creation is driven
/// by the page description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub kind: PromptKind,
    pub page: String,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub text: String,
}

struct Inner {
    config: ServerConfig,
    catalog: Catalog,
    store: Store,
    objects: ObjectStore,
    gateway: Gateway,
    runner: Runner,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
    /// Projects whose writer lock is taken, with what holds it.
    busy: Mutex<HashMap<ProjectId, String>>,
    installed: Mutex<HashSet<ProjectId>>,
    finished: (Mutex<u64>, Condvar),
}

/// The project writer lock. Released on drop.
struct WriterGuard {
    inner: Option<Arc<Inner>>,
    project: ProjectId,
}

impl Drop for WriterGuard {
    fn drop(&mut self) {
        if let Some(inner) = self.inner.take() {
            lock(&inner.busy).remove(&self.project);
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Queued {
    job: JobId,
    guard: WriterGuard,
}

pub struct Service {
    inner: Arc<Inner>,
    queue: Mutex<Option<mpsc::Sender<Queued>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Service {
    pub fn open(opts: ServiceOptions) -> Result<Self> {
        let ServiceOptions {
            config,
            clock,
            ids,
            catalog,
            provider,
        } = opts;
        config.validate()?;
        let catalog = match catalog {
            Some(c) => c,
            None => Catalog::load(config.templates_dir.as_deref(), config.profiles_dir.as_deref())?,
        };
        fs::create_dir_all(config.workspaces_dir())?;
        let store = Store::open(&config.db_path())?;
        let objects = ObjectStore::open(config.objects_dir())?;
        let gateway = match provider {
            Some(p) => Gateway::with_provider(config.provider.clone(), p)?,
            None => Gateway::new(config.provider.clone())?,
        };
        let runner = Runner::new(config.runner.to_runner_config()?)?;
        let interrupted = store.write(|c| jobs::fail_interrupted(c, clock.now()))?;
        if interrupted > 0 {
            log::warn!("marked {interrupted} interrupted job(s) as failed");
        }
        let workers = config.workers;
        let inner = Arc::new(Inner {
            config,
            catalog,
            store,
            objects,
            gateway,
            runner,
            clock,
            ids,
            busy: Mutex::new(HashMap::new()),
            installed: Mutex::new(HashSet::new()),
            finished: (Mutex::new(0), Condvar::new()),
        });
        let (tx, rx) = mpsc::channel::<Queued>();
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers)
            .map(|i| {
                let inner = inner.clone();
                let rx = rx.clone();
                thread::Builder::new()
                    .name(format!("nocode-worker-{i}"))
                    .spawn(move || loop {
                        let next = lock(&rx).recv();
                        match next {
                            Ok(q) => inner.run_job(&q.job, q.guard),
                            Err(_) => break,
                        }
                    })
                    .map_err(Error::Io)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Service {
            inner,
            queue: Mutex::new(Some(tx)),
            workers: Mutex::new(handles),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.inner.catalog
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.inner.objects
    }

    pub fn workspace_dir(&self, project: &ProjectId) -> PathBuf {
        self.inner.workspace_dir(project)
    }

    pub fn project(&self, id_or_name: &str) -> Result<Project> {
        self.inner.resolve(id_or_name)
    }

    pub fn projects(&self) -> Result<Vec<Project>> {
        self.inner.store.read(list_projects)
    }

    pub fn view(&self, project: Project) -> Result<ProjectView> {
        let profile = self.inner.profile(&project)?;
        let features = profile
            .predefined_features
            .iter()
            .map(|f| FeatureSummary {
                id: f.id.clone(),
                page_name: f.page_name.clone(),
                description: f.description.clone(),
                applied: project.page_by_name(&f.page_name).is_some(),
            })
            .collect();
        Ok(ProjectView { project, features })
    }

    /// Creates the project and writes its scaffold as the root snapshot.
    pub fn create_project(&self, name: &str, description: &str, profile: &str) -> Result<Project> {
        let inner = &self.inner;
        if !inner.catalog.has_profile(profile) {
            return Err(Error::Config(format!("unknown stack profile `{profile}`")));
        }
        let mut project = Project::new(name, description, profile, &*inner.ids, &*inner.clock)?;
        let dir = inner.workspace_dir(&project.id);
        let res = inner.store.write(|c| {
            insert_project(c, &project)?;
            let mut sink = DiskSink::new(&dir)?;
            runner::scaffold(c, &inner.objects, &inner.catalog, &mut project, &mut sink, &*inner.clock)
        });
        if let Err(e) = res {
            let _ = fs::remove_dir_all(&dir);
            return Err(e);
        }
        Ok(project)
    }

    pub fn add_page(&self, project: &str, name: &str, description: &str) -> Result<Page> {
        let mut project = self.inner.resolve(project)?;
        let _guard = self.inner.acquire(&project.id, "add_page")?;
        let page = project
            .add_page(PageId::generate(&*self.inner.ids), name, description)?
            .clone();
        self.inner.store.write(|c| save_project_state(c, &project))?;
        Ok(page)
    }

    pub fn apply_feature(&self, project: &str, feature: &str) -> Result<(Snapshot, ProjectionResult)> {
        let inner = &self.inner;
        let mut project = inner.resolve(project)?;
        let _guard = inner.acquire(&project.id, "apply_feature")?;
        let dir = inner.workspace_dir(&project.id);
        let head = inner.head(&project)?;
        let ignore = inner.profile(&project)?.ignore.clone();
        materialize(&dir, &head, &ignore)?;
        let res = inner.store.write(|c| {
            let mut sink = DiskSink::new(&dir)?;
            runner::apply_predefined_feature(
                c,
                &inner.objects,
                &inner.catalog,
                &mut project,
                feature,
                &mut sink,
                &*inner.ids,
                &*inner.clock,
            )
        });
        if res.is_err() {
            let _ = materialize(&dir, &head, &ignore);
        }
        res
    }

    /// Queues a prompt job and returns its ticket without waiting.
    pub fn submit(&self, project: &str, submission: &Submission) -> Result<Job> {
        let (job, guard) = self.inner.accept(project, submission)?;
        let queue = lock(&self.queue);
        let tx = queue
            .as_ref()
            .ok_or_else(|| Error::ContractViolation("the service is shutting down".into()))?;
        tx.send(Queued {
            job: job.id.clone(),
            guard,
        })
        .map_err(|_| Error::ContractViolation("the worker pool has stopped".into()))?;
        Ok(job)
    }

    /// Runs the job on the calling thread and returns the finished ticket.
    pub fn submit_and_wait(&self, project: &str, submission: &Submission) -> Result<Job> {
        let (job, guard) = self.inner.accept(project, submission)?;
        self.inner.run_job(&job.id, guard);
        self.job(&job.id)
    }

    pub fn job(&self, id: &JobId) -> Result<Job> {
        self.inner.store.read(|c| jobs::get_job(c, id))
    }

    /// Blocks until the job finishes or `timeout` passes, then returns it.
    pub fn wait_job(&self, id: &JobId, timeout: Duration) -> Result<Job> {
        let deadline = Instant::now() + timeout;
        let (m, cv) = &self.inner.finished;
        let mut seen = lock(m);
        loop {
            let job = self.job(id)?;
            let now = Instant::now();
            if job.state.is_finished() || now >= deadline {
                return Ok(job);
            }
            seen = cv.wait_timeout(seen, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    pub fn rollback(&self, project: &str, steps: u32) -> Result<Snapshot> {
        let inner = &self.inner;
        let mut project = inner.resolve(project)?;
        let _guard = inner.acquire(&project.id, "rollback")?;
        let dir = inner.workspace_dir(&project.id);
        let ignore = inner.profile(&project)?.ignore.clone();
        inner.store.write(|c| {
            let (snap, ws) = version::rollback(c, &inner.objects, &mut project, steps, &*inner.clock)?;
            materialize(&dir, &ws, &ignore)?;
            Ok(snap)
        })
    }

    pub fn checkout(&self, project: &str, id_or_label: &str) -> Result<Snapshot> {
        let inner = &self.inner;
        let mut project = inner.resolve(project)?;
        let _guard = inner.acquire(&project.id, "checkout")?;
        let dir = inner.workspace_dir(&project.id);
        let ignore = inner.profile(&project)?.ignore.clone();
        inner.store.write(|c| {
            let target = version::find_snapshot(c, &project.id, id_or_label)?;
            let (snap, ws) = version::checkout(c, &inner.objects, &mut project, &target.id)?;
            materialize(&dir, &ws, &ignore)?;
            Ok(snap)
        })
    }

    pub fn history(&self, project: &str) -> Result<Vec<Exchange>> {
        let project = self.inner.resolve(project)?;
        self.inner.store.read(|c| transcript(c, &project.id))
    }

    pub fn snapshots(&self, project: &str) -> Result<Vec<Snapshot>> {
        let project = self.inner.resolve(project)?;
        self.inner.store.read(|c| version::list_snapshots(c, &project.id))
    }

    pub fn graph(&self, project: &str) -> Result<VersionGraph> {
        let project = self.inner.resolve(project)?;
        self.inner.store.read(|c| version::version_graph(c, &project))
    }

    pub fn files(&self, project: &str) -> Result<Vec<FileSummary>> {
        let project = self.inner.resolve(project)?;
        Ok(self
            .inner
            .head(&project)?
            .entries()
            .map(|e| FileSummary {
                path: e.path.clone(),
                size: e.content.len(),
                digest: e.digest,
            })
            .collect())
    }

    pub fn file(&self, project: &str, path: &str) -> Result<FileEntry> {
        let project = self.inner.resolve(project)?;
        let rel = RelPath::parse(path).map_err(|reason| Error::UnsafePath {
            path: path.to_string(),
            reason,
        })?;
        self.inner
            .head(&project)?
            .get(&rel)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("file `{rel}` at HEAD")))
    }

    pub fn install(&self, project: &str) -> Result<InstallReport> {
        let project = self.inner.resolve(project)?;
        let _guard = self.inner.acquire(&project.id, "install")?;
        self.inner.install(&project)
    }

    /// Starts the app, installing dependencies first if this process has
    /// not done so for the project yet.
    pub fn run(&self, project: &str) -> Result<RunHandle> {
        let inner = &self.inner;
        let project = inner.resolve(project)?;
        if !lock(&inner.installed).contains(&project.id) {
            let _guard = inner.acquire(&project.id, "install")?;
            inner.install(&project)?;
        }
        let profile = inner.profile(&project)?;
        inner.runner.start(&project.id, profile, &inner.workspace_dir(&project.id))
    }

    pub fn stop(&self, project: &str) -> Result<RunHandle> {
        let project = self.inner.resolve(project)?;
        self.inner.runner.stop(&project.id)
    }

    pub fn run_status(&self, project: &str) -> Result<RunHandle> {
        let project = self.inner.resolve(project)?;
        self.inner
            .runner
            .status(&project.id)
            .ok_or_else(|| Error::NotFound(format!("no run for project `{}`", project.name)))
    }

    /// Stops accepting jobs, lets queued ones finish and stops all apps.
    pub fn shutdown(&self) {
        lock(&self.queue).take();
        for h in lock(&self.workers).drain(..) {
            let _ = h.join();
        }
        self.inner.runner.shutdown();
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn is_submittable(kind: PromptKind) -> bool {
    matches!(
        kind,
        PromptKind::Initial | PromptKind::Feature | PromptKind::BugFix | PromptKind::Layout | PromptKind::Transition
    )
}

fn find_page<'a>(project: &'a Project, id_or_name: &str) -> Result<&'a Page> {
    project
        .page(&PageId::from(id_or_name))
        .or_else(|| project.page_by_name(id_or_name))
        .ok_or_else(|| Error::NotFound(format!("page `{id_or_name}` in project `{}`", project.name)))
}

impl Inner {
    fn workspace_dir(&self, project: &ProjectId) -> PathBuf {
        self.config.workspaces_dir().join(project.as_str())
    }

    fn resolve(&self, id_or_name: &str) -> Result<Project> {
        self.store
            .read(|c| find_project(c, id_or_name))?
            .ok_or_else(|| Error::NotFound(format!("project `{id_or_name}`")))
    }

    fn profile(&self, project: &Project) -> Result<&StackProfile> {
        self.catalog.profile(&project.stack_profile_id)
    }

    fn head(&self, project: &Project) -> Result<nocode_core::model::Workspace> {
        self.store.read(|c| version::head_workspace(c, &self.objects, project))
    }

    fn acquire(self: &Arc<Self>, project: &ProjectId, what: &str) -> Result<WriterGuard> {
        let mut busy = lock(&self.busy);
        if let Some(holder) = busy.get(project) {
            return Err(Error::Conflict(format!("project is busy: {holder} in progress")));
        }
        busy.insert(project.clone(), what.to_string());
        Ok(WriterGuard {
            inner: Some(self.clone()),
            project: project.clone(),
        })
    }

    fn install(&self, project: &Project) -> Result<InstallReport> {
        let report = self.runner.install(self.profile(project)?, &self.workspace_dir(&project.id))?;
        lock(&self.installed).insert(project.id.clone());
        Ok(report)
    }

    /// Validates a submission, takes the writer lock and records a queued
    /// ticket. The ticket is durable before this returns.
    fn accept(self: &Arc<Self>, project: &str, s: &Submission) -> Result<(Job, WriterGuard)> {
        let project = self.resolve(project)?;
        if !is_submittable(s.kind) {
            return Err(Error::Validation(format!("prompts of kind {} cannot be submitted", s.kind)));
        }
        let page = find_page(&project, &s.page)?;
        if s.kind == PromptKind::Initial {
            if page.is_generated() {
                return Err(Error::ContractViolation(format!(
                    "page `{}` is already generated; refine it instead",
                    page.name
                )));
            }
            if page.description.trim().is_empty() {
                return Err(Error::Validation(format!("page `{}` has an empty description", page.name)));
            }
        } else if s.text.trim().is_empty() {
            return Err(Error::Validation("prompt text must not be empty".into()));
        }
        let target = match (s.kind, &s.target) {
            (PromptKind::Transition, Some(t)) => {
                let t = find_page(&project, t)?;
                if t.id == page.id {
                    return Err(Error::Validation("a page cannot transition to itself".into()));
                }
                Some(t.id.clone())
            }
            (PromptKind::Transition, None) => return Err(Error::Validation("a transition needs a target page".into())),
            (_, Some(_)) => return Err(Error::Validation("only transitions take a target page".into())),
            (_, None) => None,
        };
        let guard = self.acquire(&project.id, "prompt job")?;
        let now = self.clock.now();
        let job = Job {
            id: JobId::generate(&*self.ids),
            project_id: project.id.clone(),
            kind: JobKind::of(s.kind),
            state: JobState::Queued,
            request: JobRequest {
                kind: s.kind,
                page_id: page.id.clone(),
                target_page_id: target,
                text: s.text.clone(),
            },
            result: None,
            error: None,
            created_at: now,
            updated_at: now,
        };
        self.store.write(|c| jobs::insert_job(c, &job))?;
        Ok((job, guard))
    }

    fn run_job(self: &Arc<Self>, id: &JobId, mut guard: WriterGuard) {
        let outcome = self.store.write(|c| {
            let mut job = jobs::get_job(c, id)?;
            job.state = JobState::Running;
            job.updated_at = self.clock.now();
            jobs::update_job(c, &job)?;
            Ok(job)
        });
        let mut job = match outcome {
            Ok(job) => job,
            Err(e) => {
                log::error!("job {id}: cannot start: {e}");
                return;
            }
        };
        match self.execute(&job.project_id, &job.request) {
            Ok(result) => {
                job.state = JobState::Done;
                job.result = Some(result);
            }
            Err(e) => {
                log::warn!("job {id} failed: {e}");
                job.state = JobState::Failed;
                job.error = Some(ApiError::from(&e));
                if job.request.kind == PromptKind::Initial {
                    if let Err(e) = self.mark_page_failed(&job.project_id, &job.request.page_id) {
                        log::error!("job {id}: cannot mark page failed: {e}");
                    }
                }
            }
        }
        job.updated_at = self.clock.now();
        // Hold the busy table while the final state lands so a client that
        // sees `done` can submit again at once.
        let mut busy = lock(&self.busy);
        if let Err(e) = self.store.write(|c| jobs::update_job(c, &job)) {
            log::error!("job {id}: cannot record outcome: {e}");
        }
        busy.remove(&guard.project);
        guard.inner = None;
        drop(busy);
        let (m, cv) = &self.finished;
        *lock(m) += 1;
        cv.notify_all();
    }

    fn mark_page_failed(&self, project: &ProjectId, page: &PageId) -> Result<()> {
        self.store.write(|c| {
            let mut project = nocode_core::store::load_project(c, project)?;
            if let Some(p) = project.pages.iter_mut().find(|p| &p.id == page) {
                if p.status == PageStatus::Pending {
                    p.status = PageStatus::Failed;
                }
            }
            save_project_state(c, &project)
        })
    }

    /// compose, send, project, commit
    fn execute(&self, project_id: &ProjectId, req: &JobRequest) -> Result<JobResult> {
        let mut project = self.store.read(|c| nocode_core::store::load_project(c, project_id))?;
        let profile = self.profile(&project)?;
        let head = self.head(&project)?;
        let page = project
            .page(&req.page_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("page `{}`", req.page_id)))?;
        let prompt = match req.kind {
            PromptKind::Initial => compose_page_creation(&self.catalog, &project, &page, &head)?,
            PromptKind::Transition => {
                let target_id = req
                    .target_page_id
                    .as_ref()
                    .ok_or_else(|| Error::Validation("a transition needs a target page".into()))?;
                let target = project
                    .page(target_id)
                    .ok_or_else(|| Error::NotFound(format!("page `{target_id}`")))?;
                compose_transition(&self.catalog, &project, &page, target, &head, &req.text)?
            }
            kind => compose_refinement(&self.catalog, &project, &page, &head, &req.text, kind)?,
        };
        let dir = self.workspace_dir(project_id);
        materialize(&dir, &head, &profile.ignore)?;
        let exchange = self.gateway.send(&self.store, project_id, &prompt, &*self.ids, &*self.clock)?;
        let response = exchange
            .response
            .as_ref()
            .ok_or_else(|| Error::Provider("no response recorded".into()))?;

        let mut ws = head.clone();
        let mut scratch = page.clone();
        let mut sink = DiskSink::new(&dir)?;
        let projection = project_response(&mut ws, &response.text, &mut scratch, &mut sink, &profile.ignore)?;
        let mut result = JobResult {
            request_id: Some(exchange.request.id.clone()),
            narrative: projection.narrative.clone(),
            applied: projection.applied_paths().map(|p| p.to_string()).collect(),
            rejected: projection.rejected.clone(),
            warnings: projection.warnings.clone(),
            ..JobResult::default()
        };
        if projection.is_empty_projection() {
            result.no_files_emitted = true;
            return Ok(result);
        }
        let meta = CommitMeta {
            prompt_record_id: Some(exchange.request.id.clone()),
            page_id: Some(page.id.clone()),
            applied_paths: projection.applied_paths().cloned().collect(),
            label: None,
        };
        match self
            .store
            .write(|c| version::commit_snapshot(c, &self.objects, &mut project, &ws, meta, &*self.clock))
        {
            Ok(snap) => result.snapshot_id = Some(snap.id),
            Err(Error::NoChange(_)) => result.unchanged = true,
            Err(e) => {
                let _ = materialize(&dir, &head, &profile.ignore);
                return Err(e);
            }
        }
        Ok(result)
    }
}
