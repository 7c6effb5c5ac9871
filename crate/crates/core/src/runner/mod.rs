//! Installs and runs the generated application for live preview.
//!
//! Each server is spawned as the leader of its own process group so that
//! stop can signal the whole tree (`npx` → `node` and the like). A waiter
//! thread per child reaps it and flips the handle to `failed` as soon as a
//! server exits on its own.

mod logs;
mod ports;
mod setup;

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use logs::{LogRing, DEFAULT_LOG_LINES};
pub use ports::{PortAllocator, DEFAULT_PORT_RANGE};
pub use setup::{apply_predefined_feature, scaffold};

use crate::catalog::{CommandSpec, ServerSpec, StackProfile};
use crate::error::{Error, Result};
use crate::model::ProjectId;

const LOG_TAIL: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub host: String,
    pub port_range: (u16, u16),
    pub readiness_timeout: Duration,
    pub stop_grace: Duration,
    pub log_lines: usize,
    pub install_timeout: Duration,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            host: "127.0.0.1".to_string(),
            port_range: DEFAULT_PORT_RANGE,
            readiness_timeout: Duration::from_secs(30),
            stop_grace: Duration::from_secs(2),
            log_lines: DEFAULT_LOG_LINES,
            install_timeout: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Starting,
    Running,
    Failed,
    Stopped,
}

impl RunState {
    pub fn is_active(self) -> bool {
        matches!(self, RunState::Starting | RunState::Running)
    }
}

/// Point-in-time view of a project's running app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHandle {
    pub project_id: ProjectId,
    pub state: RunState,
    pub pids: Vec<u32>,
    pub frontend_port: u16,
    pub backend_port: u16,
    pub preview_url: String,
    pub detail: Option<String>,
    pub log_tail: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallStep {
    pub command: String,
    pub exit_code: i32,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstallReport {
    pub steps: Vec<InstallStep>,
    pub log_tail: Vec<String>,
}

type Exit = Arc<(Mutex<Option<ExitStatus>>, Condvar)>;

struct Proc {
    role: &'static str,
    pid: u32,
    exit: Exit,
    readers: Vec<JoinHandle<()>>,
}

struct Status {
    state: RunState,
    detail: Option<String>,
}

struct App {
    project_id: ProjectId,
    ports: (u16, u16),
    preview_url: String,
    procs: Vec<Proc>,
    log: Arc<LogRing>,
    status: Arc<Mutex<Status>>,
    stopping: Arc<AtomicBool>,
}

impl App {
    fn handle(&self) -> RunHandle {
        let status = self.status.lock().expect("status poisoned");
        RunHandle {
            project_id: self.project_id.clone(),
            state: status.state,
            pids: self.procs.iter().map(|p| p.pid).collect(),
            frontend_port: self.ports.0,
            backend_port: self.ports.1,
            preview_url: self.preview_url.clone(),
            detail: status.detail.clone(),
            log_tail: self.log.tail(LOG_TAIL),
        }
    }

    fn state(&self) -> RunState {
        self.status.lock().expect("status poisoned").state
    }

    fn set(&self, state: RunState, detail: Option<String>) {
        let mut s = self.status.lock().expect("status poisoned");
        s.state = state;
        if detail.is_some() {
            s.detail = detail;
        }
    }
}

pub struct Runner {
    config: RunnerConfig,
    ports: PortAllocator,
    apps: Mutex<HashMap<ProjectId, Arc<Mutex<Option<App>>>>>,
}

impl Runner {
    pub fn new(config: RunnerConfig) -> Result<Self> {
        let ports = PortAllocator::new(config.port_range, &config.host)?;
        Ok(Runner {
            config,
            ports,
            apps: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }

    /// Per-project slot; holding its lock serializes start/stop.
    fn slot(&self, project: &ProjectId) -> Arc<Mutex<Option<App>>> {
        self.apps
            .lock()
            .expect("runner table poisoned")
            .entry(project.clone())
            .or_default()
            .clone()
    }

    /// Runs the profile's install commands in order inside `workspace`.
    pub fn install(&self, profile: &StackProfile, workspace: &Path) -> Result<InstallReport> {
        let log = Arc::new(LogRing::new(self.config.log_lines));
        let vars = [("workspace", workspace.display().to_string())];
        let mut steps = Vec::new();
        for spec in &profile.install_commands {
            let spec = spec.expand(&vars);
            let started = Instant::now();
            log.push(format!("$ {}", spec.display()));
            let mut child = spawn(&spec, workspace)?;
            let readers = pipe_output(&mut child, "install", &log);
            let pid = child.id();
            let status = loop {
                if let Some(status) = child.try_wait()? {
                    break Some(status);
                }
                if started.elapsed() > self.config.install_timeout {
                    signal_group(pid, libc::SIGKILL);
                    let _ = child.wait();
                    log.push(format!("install command timed out after {:?}", self.config.install_timeout));
                    break None;
                }
                thread::sleep(Duration::from_millis(20));
            };
            // the group may still hold the pipes open; do not wait forever
            signal_group(pid, libc::SIGKILL);
            join_bounded(readers, Duration::from_secs(1));
            let code = status.and_then(|s| s.code());
            if code != Some(0) {
                return Err(Error::InstallFailed {
                    command: spec.display(),
                    exit_code: code,
                    log_tail: log.tail(LOG_TAIL),
                });
            }
            steps.push(InstallStep {
                command: spec.display(),
                exit_code: 0,
                duration_ms: started.elapsed().as_millis() as u64,
            });
        }
        Ok(InstallReport {
            steps,
            log_tail: log.tail(LOG_TAIL),
        })
    }

    /// Starts both servers and blocks until they answer their readiness
    /// probes or the deadline passes. A deadline miss or an early exit
    /// yields a `failed` handle with the log tail rather than an error.
    pub fn start(&self, project: &ProjectId, profile: &StackProfile, workspace: &Path) -> Result<RunHandle> {
        let slot = self.slot(project);
        let mut guard = slot.lock().expect("runner slot poisoned");
        if let Some(app) = guard.as_ref() {
            if app.state().is_active() {
                return Err(Error::contract(format!("project {project} already has a running app")));
            }
        }
        if let Some(mut old) = guard.take() {
            self.terminate(&mut old);
        }
        let workspace = workspace
            .canonicalize()
            .map_err(|e| Error::config(format!("workspace {}: {e}", workspace.display())))?;
        let ports = self.ports.allocate(project)?;
        let vars = [
            ("frontend_port", ports.0.to_string()),
            ("backend_port", ports.1.to_string()),
            ("workspace", workspace.display().to_string()),
        ];
        let log = Arc::new(LogRing::new(self.config.log_lines));
        let mut app = App {
            project_id: project.clone(),
            ports,
            preview_url: format!("http://{}:{}/", self.config.host, ports.0),
            procs: Vec::new(),
            log: log.clone(),
            status: Arc::new(Mutex::new(Status {
                state: RunState::Starting,
                detail: None,
            })),
            stopping: Arc::new(AtomicBool::new(false)),
        };
        let groups: Arc<Mutex<Vec<u32>>> = Arc::default();
        let servers = [
            ("frontend", &profile.run_commands.frontend),
            ("backend", &profile.run_commands.backend),
        ];
        for (role, server) in servers {
            let spec = server.command.expand(&vars);
            log.push(format!("[{role}] $ {}", spec.display()));
            match spawn(&spec, &workspace) {
                Ok(child) => app.procs.push(self.supervise(child, role, &app, &groups)),
                Err(e) => {
                    self.terminate(&mut app);
                    return Err(e);
                }
            }
        }

        let deadline = Instant::now() + self.config.readiness_timeout;
        let probes: [(u16, &ServerSpec); 2] = [(ports.0, servers[0].1), (ports.1, servers[1].1)];
        let mut ready = [false, false];
        loop {
            if app.state() == RunState::Failed {
                break;
            }
            for (i, (port, server)) in probes.iter().enumerate() {
                if !ready[i] {
                    ready[i] = probe(&self.config.host, *port, &server.probe_path);
                }
            }
            if ready.iter().all(|r| *r) {
                app.set(RunState::Running, None);
                log.push(format!("ready at {}", app.preview_url));
                break;
            }
            if Instant::now() >= deadline {
                let msg = format!("readiness deadline of {:?} exceeded", self.config.readiness_timeout);
                log.push(msg.clone());
                app.set(RunState::Failed, Some(msg));
                self.terminate(&mut app);
                break;
            }
            thread::sleep(Duration::from_millis(50));
        }
        let handle = app.handle();
        *guard = Some(app);
        Ok(handle)
    }

    fn supervise(&self, mut child: Child, role: &'static str, app: &App, groups: &Arc<Mutex<Vec<u32>>>) -> Proc {
        let pid = child.id();
        groups.lock().expect("groups poisoned").push(pid);
        let readers = pipe_output(&mut child, role, &app.log);
        let exit: Exit = Arc::default();
        let (exit2, status, stopping, log, groups) =
            (exit.clone(), app.status.clone(), app.stopping.clone(), app.log.clone(), groups.clone());
        thread::spawn(move || {
            let result = child.wait();
            let described = match &result {
                Ok(s) => describe(s),
                Err(e) => format!("wait failed: {e}"),
            };
            if !stopping.load(Ordering::SeqCst) {
                log.push(format!("[{role}] exited unexpectedly: {described}"));
                {
                    // the first exit is the cause; the sibling dies because we kill it
                    let mut s = status.lock().expect("status poisoned");
                    if s.state != RunState::Failed {
                        s.state = RunState::Failed;
                        s.detail = Some(format!("{role} server exited: {described}"));
                    }
                }
                // take the sibling down too so nothing is left behind
                for &g in groups.lock().expect("groups poisoned").iter() {
                    signal_group(g, libc::SIGKILL);
                }
            }
            let (lock, cv) = &*exit2;
            *lock.lock().expect("exit poisoned") = Some(result.unwrap_or_else(|_| ExitStatus::from_raw(-1)));
            cv.notify_all();
        });
        Proc { role, pid, exit, readers }
    }

    /// Signals every process group of the app: SIGTERM, then SIGKILL after
    /// the grace period. Waits for the leaders to be reaped and the output
    /// pipes to drain.
    fn terminate(&self, app: &mut App) {
        app.stopping.store(true, Ordering::SeqCst);
        for p in &app.procs {
            signal_group(p.pid, libc::SIGTERM);
        }
        let deadline = Instant::now() + self.config.stop_grace;
        for p in &app.procs {
            if !wait_exit(&p.exit, deadline.saturating_duration_since(Instant::now())) {
                app.log.push(format!("[{}] did not stop within grace, killing", p.role));
            }
        }
        for p in &app.procs {
            // also reaches grandchildren that outlived their leader
            signal_group(p.pid, libc::SIGKILL);
            wait_exit(&p.exit, Duration::from_secs(2));
        }
        for p in &mut app.procs {
            join_bounded(std::mem::take(&mut p.readers), Duration::from_secs(1));
        }
        self.ports.release(&app.project_id);
    }

    pub fn stop(&self, project: &ProjectId) -> Result<RunHandle> {
        let slot = self.slot(project);
        let mut guard = slot.lock().expect("runner slot poisoned");
        let app = guard
            .as_mut()
            .ok_or_else(|| Error::not_found(format!("no app has been started for project {project}")))?;
        self.terminate(app);
        let was = app.state();
        if was != RunState::Failed {
            app.set(RunState::Stopped, None);
        }
        app.log.push("stopped");
        Ok(app.handle())
    }

    pub fn status(&self, project: &ProjectId) -> Option<RunHandle> {
        let slot = self.apps.lock().expect("runner table poisoned").get(project).cloned()?;
        let guard = slot.lock().expect("runner slot poisoned");
        guard.as_ref().map(App::handle)
    }

    /// Stops every app. Called on service shutdown.
    pub fn shutdown(&self) {
        let slots: Vec<_> = self.apps.lock().expect("runner table poisoned").values().cloned().collect();
        for slot in slots {
            let mut guard = slot.lock().expect("runner slot poisoned");
            if let Some(app) = guard.as_mut() {
                if !app.stopping.load(Ordering::SeqCst) || app.procs.iter().any(|p| !exited(&p.exit)) {
                    self.terminate(app);
                    if app.state().is_active() {
                        app.set(RunState::Stopped, None);
                    }
                }
            }
        }
    }
}

impl Drop for Runner {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn spawn(spec: &CommandSpec, workspace: &Path) -> Result<Child> {
    let (program, args) = spec
        .argv
        .split_first()
        .ok_or_else(|| Error::config("command spec has an empty argv"))?;
    let cwd: PathBuf = match &spec.cwd {
        Some(rel) => workspace.join(rel.as_str()),
        None => workspace.to_path_buf(),
    };
    if !cwd.is_dir() {
        return Err(Error::config(format!("working directory {} does not exist", cwd.display())));
    }
    Command::new(program)
        .args(args)
        .current_dir(&cwd)
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| Error::config(format!("cannot start `{}`: {e}", spec.display())))
}

fn pipe_output(child: &mut Child, role: &'static str, log: &Arc<LogRing>) -> Vec<JoinHandle<()>> {
    let mut readers = Vec::new();
    let streams: [Option<Box<dyn Read + Send>>; 2] = [
        child.stdout.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
        child.stderr.take().map(|s| Box::new(s) as Box<dyn Read + Send>),
    ];
    for stream in streams.into_iter().flatten() {
        let log = log.clone();
        readers.push(thread::spawn(move || {
            let mut reader = BufReader::new(stream);
            let mut buf = Vec::new();
            while matches!(reader.read_until(b'\n', &mut buf), Ok(n) if n > 0) {
                let line = String::from_utf8_lossy(&buf);
                log.push(format!("[{role}] {}", line.trim_end()));
                buf.clear();
            }
        }));
    }
    readers
}

fn join_bounded(handles: Vec<JoinHandle<()>>, limit: Duration) {
    let deadline = Instant::now() + limit;
    for h in handles {
        while !h.is_finished() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(10));
        }
        if h.is_finished() {
            let _ = h.join();
        }
    }
}

fn wait_exit(exit: &Exit, limit: Duration) -> bool {
    let (lock, cv) = &**exit;
    let guard = lock.lock().expect("exit poisoned");
    let (guard, _) = cv
        .wait_timeout_while(guard, limit, |s| s.is_none())
        .expect("exit poisoned");
    guard.is_some()
}

fn exited(exit: &Exit) -> bool {
    exit.0.lock().expect("exit poisoned").is_some()
}

fn describe(status: &ExitStatus) -> String {
    match (status.code(), status.signal()) {
        (Some(c), _) => format!("exit code {c}"),
        (None, Some(sig)) => format!("signal {sig}"),
        _ => "unknown status".to_string(),
    }
}

fn signal_group(pgid: u32, signal: libc::c_int) {
    // SAFETY: killpg has no memory-safety preconditions.
    unsafe {
        libc::killpg(pgid as libc::pid_t, signal);
    }
}

/// Processes still alive in process group `pgid`. Zombies awaiting a reaper
/// are not counted. Used by tests and the stop audit.
pub fn live_group_members(pgid: u32) -> Vec<u32> {
    let Ok(dir) = std::fs::read_dir("/proc") else {
        // SAFETY: signal 0 only checks for existence.
        let alive = unsafe { libc::kill(-(pgid as libc::pid_t), 0) } == 0;
        return if alive { vec![pgid] } else { Vec::new() };
    };
    let mut out = Vec::new();
    for entry in dir.flatten() {
        let Ok(pid) = entry.file_name().to_string_lossy().parse::<u32>() else { continue };
        let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else { continue };
        // pid (comm) state ppid pgrp ...; comm may contain spaces
        let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() > 2 && fields[0] != "Z" && fields[2].parse::<u32>() == Ok(pgid) {
            out.push(pid);
        }
    }
    out
}

/// One HTTP GET; any status in 200..400 counts as ready.
pub fn probe(host: &str, port: u16, path: &str) -> bool {
    let timeout = Duration::from_millis(500);
    let Some(addr) = (host, port).to_socket_addrs().ok().and_then(|mut a| a.next()) else {
        return false;
    };
    let Ok(mut stream) = TcpStream::connect_timeout(&addr, timeout) else {
        return false;
    };
    let _ = stream.set_read_timeout(Some(timeout));
    let _ = stream.set_write_timeout(Some(timeout));
    let request = format!("GET {path} HTTP/1.0\r\nHost: {host}:{port}\r\nConnection: close\r\n\r\n");
    if stream.write_all(request.as_bytes()).is_err() {
        return false;
    }
    let mut line = String::new();
    if BufReader::new(stream).read_line(&mut line).is_err() {
        return false;
    }
    line.split_whitespace()
        .nth(1)
        .and_then(|c| c.parse::<u16>().ok())
        .is_some_and(|c| (200..400).contains(&c))
}
