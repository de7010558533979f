//! Local debugging engine: one node's runtime wrapped with per-process
//! debugger state (breakpoints, stepping, capture bookkeeping).
//!
//! The facade is callable from any number of threads. A single scheduler
//! thread executes task statements one at a time under the engine lock;
//! service calls take the same lock, so every observation sees a state
//! between two statements.

mod session;

pub use session::LocalSession;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::launcher::{self, CaptureRequest, LauncherConfig};
use crate::minipvm::{Expr, ExprError, Line, Program, Runtime, RuntimeError, SpawnMode, StepOutcome, Task, TaskStatus, Tid};
use crate::service::{ErrorCode, ServiceError, When};
use crate::wire::EventKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub id: u64,
    pub line: Line,
    pub when: When,
    pub one_shot: bool,
}

/// One row of `list_tids`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessInfo {
    pub tid: Tid,
    pub att: bool,
    pub tp_pid: u32,
    pub lld_pid: u32,
    pub l_tid: Tid,
    pub machine: String,
    pub program: String,
}

/// Status plus the current line, as returned by `status` and `wait_stop`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessStatus {
    pub status: TaskStatus,
    pub pc: Line,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineEvent {
    pub kind: EventKind,
    pub tid: Tid,
    pub body: Value,
}

#[derive(Debug, Default)]
struct Record {
    attached: bool,
    bound: bool,
    breakpoints: BTreeMap<u64, Breakpoint>,
    next_bp: u64,
    /// Line whose Before check is skipped on the next execution turn: set
    /// when resuming from a stop before it, or while blocked in a receive.
    skip_before: Option<Line>,
    stepping: bool,
    /// Spawner waiting for its launcher to finish.
    capture_pending: bool,
}

impl Record {
    /// Takes the breakpoint matching `(line, when)`, removing it if one-shot.
    fn hit(&mut self, line: Line, when: When) -> bool {
        let found = self.breakpoints.values().find(|b| b.line == line && b.when == when).cloned();
        match found {
            Some(bp) => {
                if bp.one_shot {
                    self.breakpoints.remove(&bp.id);
                }
                true
            }
            None => false,
        }
    }
}

struct State {
    rt: Runtime,
    procs: BTreeMap<Tid, Record>,
    outputs: Vec<(Tid, String)>,
    launcher: LauncherConfig,
    last_scheduled: Tid,
    shutdown: bool,
}

struct Inner {
    state: Mutex<State>,
    changed: Condvar,
    subscribers: Mutex<Vec<Sender<EngineEvent>>>,
    machine: String,
}

struct StopScheduler(Arc<Inner>);

impl Drop for StopScheduler {
    fn drop(&mut self) {
        if let Ok(mut st) = self.0.state.lock() {
            st.shutdown = true;
        }
        self.0.changed.notify_all();
    }
}

#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
    /// Absent on the handles given to launcher threads, so they do not keep
    /// the scheduler alive.
    _guard: Option<Arc<StopScheduler>>,
}

fn err(code: ErrorCode, message: impl Into<String>) -> ServiceError {
    ServiceError::new(code, message)
}

fn unknown_tid(tid: Tid) -> ServiceError {
    err(ErrorCode::UnknownTid, format!("unknown tid {tid}"))
}

fn host_name() -> String {
    std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "localhost".to_string())
}

impl Engine {
    /// Engine over a fresh runtime reading programs from `programs_dir`.
    pub fn new(programs_dir: Option<PathBuf>) -> Engine {
        Engine::with_runtime(Runtime::new(programs_dir, SpawnMode::Capture))
    }

    pub fn with_runtime(rt: Runtime) -> Engine {
        let inner = Arc::new(Inner {
            state: Mutex::new(State {
                rt,
                procs: BTreeMap::new(),
                outputs: Vec::new(),
                launcher: LauncherConfig::default(),
                last_scheduled: 0,
                shutdown: false,
            }),
            changed: Condvar::new(),
            subscribers: Mutex::new(Vec::new()),
            machine: host_name(),
        });
        let sched = inner.clone();
        thread::Builder::new()
            .name("engine-scheduler".into())
            .spawn(move || scheduler(sched))
            .expect("spawn scheduler thread");
        Engine { _guard: Some(Arc::new(StopScheduler(inner.clone()))), inner }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().unwrap()
    }

    pub fn machine(&self) -> &str {
        &self.inner.machine
    }

    pub fn set_launcher(&self, config: LauncherConfig) {
        self.lock().launcher = config;
    }

    pub fn launcher(&self) -> LauncherConfig {
        self.lock().launcher.clone()
    }

    pub fn add_program(&self, program: Program) {
        self.lock().rt.add_program(program);
    }

    /// Receives every engine event from now on.
    pub fn subscribe(&self) -> Receiver<EngineEvent> {
        let (tx, rx) = mpsc::channel();
        self.inner.subscribers.lock().unwrap().push(tx);
        rx
    }

    fn emit(&self, kind: EventKind, tid: Tid, body: Value) {
        emit(&self.inner, kind, tid, body)
    }

    /// Starts `program` under debugger control, stopped at its entry.
    pub fn start(&self, program: &str) -> Result<Tid, ServiceError> {
        let tid = {
            let mut st = self.lock();
            st.rt.spawn_task(program, true).map_err(runtime_error)?
        };
        self.register_process(tid)?;
        self.bind_output(tid)?;
        Ok(tid)
    }

    /// Puts an existing, not yet running task under debugger control.
    /// Registering twice is harmless.
    pub fn register_process(&self, tid: Tid) -> Result<Tid, ServiceError> {
        let mut st = self.lock();
        let task = st.rt.task(tid).ok_or_else(|| unknown_tid(tid))?;
        if st.procs.contains_key(&tid) {
            return Ok(tid);
        }
        if !(task.status.is_stopped() || task.status.is_terminal()) {
            return Err(err(ErrorCode::NotStopped, format!("task {tid} is already running")));
        }
        let program = task.program.name.clone();
        st.procs.insert(tid, Record::default());
        self.emit(EventKind::Spawned, tid, json!({ "tid": tid, "program": program }));
        self.inner.changed.notify_all();
        Ok(tid)
    }

    /// Surfaces the task's printed output as Output events.
    pub fn bind_output(&self, tid: Tid) -> Result<(), ServiceError> {
        let mut st = self.lock();
        st.procs.get_mut(&tid).ok_or_else(|| unknown_tid(tid))?.bound = true;
        Ok(())
    }

    /// Lets a spawner continue once its child's launcher is done; on
    /// failure the spawner errors.
    pub fn complete_capture(&self, spawner: Tid, result: Result<(), String>) {
        let mut st = self.lock();
        let Some(rec) = st.procs.get_mut(&spawner) else { return };
        rec.capture_pending = false;
        if let Err(reason) = result {
            let reason = format!("engine unreachable: {reason}");
            if let Some(task) = st.rt.task_mut(spawner) {
                task.status = TaskStatus::Errored { reason };
                let body = json!({ "tid": spawner, "status": task.status, "pc": task.pc });
                self.emit(EventKind::Exited, spawner, body);
            }
        }
        self.inner.changed.notify_all();
    }

    pub fn list_tids(&self) -> Vec<ProcessInfo> {
        let st = self.lock();
        st.procs
            .iter()
            .map(|(tid, rec)| ProcessInfo {
                tid: *tid,
                att: rec.attached,
                tp_pid: 1000 + tid,
                lld_pid: 2000 + tid,
                l_tid: *tid,
                machine: self.inner.machine.clone(),
                program: st.rt.task(*tid).map(|t| t.program.name.clone()).unwrap_or_default(),
            })
            .collect()
    }

    fn with_proc<T>(
        &self,
        tid: Tid,
        f: impl FnOnce(&mut Task, &mut Record) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let mut st = self.lock();
        let st = &mut *st;
        let rec = st.procs.get_mut(&tid).ok_or_else(|| unknown_tid(tid))?;
        let task = st.rt.task_mut(tid).ok_or_else(|| unknown_tid(tid))?;
        let out = f(task, rec);
        self.inner.changed.notify_all();
        out
    }

    pub fn set_breakpoint(&self, tid: Tid, line: Line, when: When, one_shot: bool) -> Result<u64, ServiceError> {
        self.with_proc(tid, |task, rec| {
            if !task.program.is_statement(line) {
                return Err(err(ErrorCode::BadLine, format!("no statement at line {line}")));
            }
            if rec.breakpoints.values().any(|b| b.line == line && b.when == when) {
                return Err(err(ErrorCode::DuplicateBreakpoint, format!("{when} {line} already set")));
            }
            rec.next_bp += 1;
            let id = rec.next_bp;
            rec.breakpoints.insert(id, Breakpoint { id, line, when, one_shot });
            Ok(id)
        })
    }

    pub fn clear_breakpoint(&self, tid: Tid, id: u64) -> Result<(), ServiceError> {
        self.with_proc(tid, |_, rec| {
            rec.breakpoints
                .remove(&id)
                .map(|_| ())
                .ok_or_else(|| err(ErrorCode::UnknownBreakpoint, format!("no breakpoint {id}")))
        })
    }

    pub fn breakpoints(&self, tid: Tid) -> Result<Vec<Breakpoint>, ServiceError> {
        self.with_proc(tid, |_, rec| Ok(rec.breakpoints.values().cloned().collect()))
    }

    fn set_running(&self, tid: Tid, stepping: bool) -> Result<(), ServiceError> {
        self.with_proc(tid, |task, rec| {
            if !task.status.is_stopped() {
                return Err(err(ErrorCode::NotStopped, format!("tid {tid} is {:?}", task.status)));
            }
            rec.attached = true;
            rec.stepping = stepping;
            rec.skip_before = match task.status {
                TaskStatus::StoppedBefore { line } => Some(line),
                _ if stepping => Some(task.pc),
                _ => None,
            };
            task.status = TaskStatus::Runnable;
            Ok(())
        })
    }

    /// Lets the process run until a breakpoint, exit or error.
    pub fn resume(&self, tid: Tid) -> Result<(), ServiceError> {
        self.set_running(tid, false)
    }

    /// Executes one statement, then stops before the next one.
    pub fn single_step(&self, tid: Tid) -> Result<(), ServiceError> {
        self.set_running(tid, true)
    }

    /// Waits until the process is stopped or finished. A process blocked in
    /// a receive counts as running.
    pub fn wait_stop(&self, tid: Tid, timeout: Duration) -> Result<ProcessStatus, ServiceError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        loop {
            let rec = st.procs.get(&tid).ok_or_else(|| unknown_tid(tid))?;
            let task = st.rt.task(tid).ok_or_else(|| unknown_tid(tid))?;
            let settled = task.status.is_stopped() || task.status.is_terminal();
            if settled && !rec.capture_pending {
                return Ok(ProcessStatus { status: task.status.clone(), pc: task.pc });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(err(ErrorCode::Timeout, format!("tid {tid} still {:?}", task.status)));
            }
            st = self.inner.changed.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    pub fn status(&self, tid: Tid) -> Result<ProcessStatus, ServiceError> {
        self.with_proc(tid, |task, _| Ok(ProcessStatus { status: task.status.clone(), pc: task.pc }))
    }

    /// Evaluates `expr` in the process's variables. A bare variable that was
    /// never assigned yields `(0, false)`.
    pub fn evaluate(&self, tid: Tid, expr: &str) -> Result<(i64, bool), ServiceError> {
        let parsed = Expr::parse(expr).map_err(|e| err(ErrorCode::ParseError, e.to_string()))?;
        self.with_proc(tid, |task, _| {
            if task.status.is_running() {
                return Err(err(ErrorCode::NotStopped, format!("tid {tid} is running")));
            }
            if let Expr::Var(name) = &parsed {
                return Ok(task.vars.get(name).map_or((0, false), |v| (*v, true)));
            }
            match parsed.eval(&task.vars) {
                Ok(v) => Ok((v, true)),
                Err(e @ ExprError::Uninitialized(_)) => Err(err(ErrorCode::Uninitialized, e.to_string())),
                Err(e) => Err(err(ErrorCode::BadValue, e.to_string())),
            }
        })
    }

    pub fn info_line(&self, tid: Tid) -> Result<(Line, String), ServiceError> {
        self.with_proc(tid, |task, _| {
            if task.status.is_running() {
                return Err(err(ErrorCode::NotStopped, format!("tid {tid} is running")));
            }
            Ok((task.pc, task.program.file_name()))
        })
    }

    pub fn set_variable(&self, tid: Tid, name: &str, value: i64) -> Result<(), ServiceError> {
        let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(err(ErrorCode::BadArgs, format!("`{name}` is not a variable name")));
        }
        self.with_proc(tid, |task, _| {
            if !task.status.is_stopped() {
                return Err(err(ErrorCode::NotStopped, format!("tid {tid} is {:?}", task.status)));
            }
            task.vars.insert(name.to_string(), value);
            Ok(())
        })
    }

    pub fn read_source(&self, tid: Tid) -> Result<(String, String), ServiceError> {
        self.with_proc(tid, |task, _| Ok((task.program.file_name(), task.program.source().to_string())))
    }

    /// Copy of the task's full state, for inspection in tests and tools.
    pub fn task_snapshot(&self, tid: Tid) -> Option<Task> {
        self.lock().rt.task(tid).cloned()
    }

    /// Every line printed by any task, in execution order.
    pub fn outputs(&self) -> Vec<(Tid, String)> {
        self.lock().outputs.clone()
    }
}

fn runtime_error(e: RuntimeError) -> ServiceError {
    match e {
        RuntimeError::UnknownTid(t) => unknown_tid(t),
        RuntimeError::UnknownProgram(_) => err(ErrorCode::UnknownProgram, e.to_string()),
        RuntimeError::BadProgram { .. } => err(ErrorCode::BadProgram, e.to_string()),
        RuntimeError::NotRunnable(_) => err(ErrorCode::NotStopped, e.to_string()),
    }
}

fn emit(inner: &Inner, kind: EventKind, tid: Tid, body: Value) {
    let event = EngineEvent { kind, tid, body };
    inner.subscribers.lock().unwrap().retain(|tx| tx.send(event.clone()).is_ok());
}

impl State {
    fn pick_runnable(&self) -> Option<Tid> {
        let ready = |tid: &Tid, task: &Task| {
            task.status == TaskStatus::Runnable && !self.procs.get(tid).is_some_and(|r| r.capture_pending)
        };
        let after = self.last_scheduled;
        let tasks: Vec<(&Tid, &Task)> = self.rt.tasks().map(|t| (&t.local_tid, t)).collect();
        tasks
            .iter()
            .filter(|(tid, _)| **tid > after)
            .chain(tasks.iter().filter(|(tid, _)| **tid <= after))
            .find(|(tid, task)| ready(tid, task))
            .map(|(tid, _)| **tid)
    }

    /// Runs one scheduling turn of `tid`. Returns a capture request when the
    /// statement was a spawn that must go through the launcher.
    fn run_turn(&mut self, inner: &Inner, tid: Tid) -> Option<CaptureRequest> {
        self.last_scheduled = tid;
        let line = self.rt.task(tid).map(|t| t.pc)?;
        let registered = self.procs.remove(&tid);
        let known = registered.is_some();
        let mut rec = registered.unwrap_or_default();
        let capture = self.turn(inner, tid, line, &mut rec);
        if known {
            self.procs.insert(tid, rec);
        }
        capture
    }

    fn turn(&mut self, inner: &Inner, tid: Tid, line: Line, rec: &mut Record) -> Option<CaptureRequest> {
        let skip = rec.skip_before.take();
        if skip != Some(line) && !rec.stepping && rec.hit(line, When::Before) {
            self.stop(inner, tid, TaskStatus::StoppedBefore { line });
            return None;
        }
        let outcome = match self.rt.execute_line(tid) {
            Ok(outcome) => outcome,
            Err(e) => {
                log::error!("scheduler could not run tid {tid}: {e}");
                return None;
            }
        };
        let mut capture = None;
        match outcome {
            StepOutcome::Blocked(_) => {
                rec.skip_before = Some(line);
                return None;
            }
            StepOutcome::Exited(_) | StepOutcome::Errored(_) => {
                rec.hit(line, When::After);
                rec.stepping = false;
                let task = self.rt.task(tid).unwrap();
                let body = json!({ "tid": tid, "status": task.status, "pc": task.pc });
                emit(inner, EventKind::Exited, tid, body);
                return None;
            }
            StepOutcome::Spawned { program, tid: child } if self.rt.spawn_mode() == SpawnMode::Capture => {
                rec.capture_pending = true;
                capture = Some(CaptureRequest { spawner: tid, child, program });
            }
            StepOutcome::Output(text) => {
                if rec.bound {
                    emit(inner, EventKind::Output, tid, json!({ "tid": tid, "text": text }));
                }
                self.outputs.push((tid, text));
            }
            _ => {}
        }
        if rec.stepping {
            rec.stepping = false;
            let pc = self.rt.task(tid).unwrap().pc;
            self.stop(inner, tid, TaskStatus::StoppedBefore { line: pc });
        } else if rec.hit(line, When::After) {
            self.stop(inner, tid, TaskStatus::StoppedAfter { line });
        }
        capture
    }

    fn stop(&mut self, inner: &Inner, tid: Tid, status: TaskStatus) {
        let task = self.rt.task_mut(tid).unwrap();
        task.status = status;
        let body = json!({ "tid": tid, "status": task.status, "pc": task.pc });
        emit(inner, EventKind::Stopped, tid, body);
    }
}

fn scheduler(inner: Arc<Inner>) {
    let mut st = inner.state.lock().unwrap();
    loop {
        if st.shutdown {
            return;
        }
        let Some(tid) = st.pick_runnable() else {
            st = inner.changed.wait(st).unwrap();
            continue;
        };
        let capture = st.run_turn(&inner, tid);
        inner.changed.notify_all();
        if let Some(req) = capture {
            let config = st.launcher.clone();
            let engine = Engine { inner: inner.clone(), _guard: None };
            thread::Builder::new()
                .name(format!("launcher-{}", req.child))
                .spawn(move || launcher::run_capture(&engine, &config, req))
                .expect("spawn launcher thread");
        }
        drop(st);
        thread::yield_now();
        st = inner.state.lock().unwrap();
    }
}
