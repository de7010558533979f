//! Deipa: drives an application through the global breakpoints of a TeSS
//! specification.
//!
//! One controller thread per involved process arms a one-shot breakpoint,
//! resumes the process and waits for it to stop; all of them resume before
//! any waits, so processes that rendezvous on a message pair can both get
//! there. Variable patches are applied once every process has arrived.
//! Processes spawned along the way are announced by their launcher and
//! mapped to the first free spawn-table row running their program.

mod announce;
mod report;
mod vidmap;

pub use announce::{announce, serve_announce, Pending};
pub use report::{render, row_line, setvar_line, Position, ReportRow, BEGIN, END};
pub use vidmap::VidMap;

use std::collections::BTreeMap;
use std::net::ToSocketAddrs;
use std::path::Path;
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use crate::engine::ProcessStatus;
use crate::minipvm::{TaskStatus, Tid};
use crate::net::ServerHandle;
use crate::service::{Endpoint, ErrorCode, Service, ServiceError, When};
use crate::tess::{self, GlobalBp, LocalBp, TessSpec};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum DeipaError {
    #[error("no TeSS file loaded")]
    NoSpec,
    #[error("{0}")]
    Load(String),
    #[error("application already started")]
    AlreadyStarted,
    #[error("application not started")]
    NotStarted,
    #[error("cannot start application: {0}")]
    Startup(ServiceError),
    #[error("end of script: all {0} global breakpoints reached")]
    EndOfScript(usize),
    #[error("global breakpoint #{gbp}: vids {vids:?} did not reach their breakpoints")]
    DriveTimeout { gbp: usize, vids: Vec<u32>, reasons: Vec<String>, output: Vec<String> },
    #[error("global breakpoint #{gbp}: setvar on vid {vid} failed: {error}")]
    Patch { gbp: usize, vid: u32, error: ServiceError, output: Vec<String> },
}

impl DeipaError {
    /// Lines the failed operation printed before failing.
    pub fn output(&self) -> &[String] {
        match self {
            DeipaError::DriveTimeout { output, .. } | DeipaError::Patch { output, .. } => output,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct VidState {
    prev: Option<Position>,
    actual: Option<Position>,
}

pub struct Deipa {
    endpoint: Arc<dyn Endpoint>,
    spec: Option<TessSpec>,
    vids: VidMap,
    pending: Pending,
    cursor: usize,
    started: bool,
    states: BTreeMap<u32, VidState>,
    /// Breakpoints armed by Deipa, per process. One-shot ones vanish on
    /// hit, so some of these ids may be gone already.
    armed: Mutex<BTreeMap<Tid, Vec<u64>>>,
    timeout: Duration,
    transcript: Vec<String>,
    listener: Option<ServerHandle>,
}

fn status_of(ep: &dyn Endpoint, tid: Tid) -> Result<ProcessStatus, ServiceError> {
    parse_status(ep.call(&Service::Status { tid })?)
}

fn parse_status(v: Value) -> Result<ProcessStatus, ServiceError> {
    serde_json::from_value(v).map_err(|e| ServiceError::new(ErrorCode::Internal, e.to_string()))
}

/// Exact match of the current stop with `(when, line)`. A process that
/// exited at `line` counts as stopped after it; a fresh process counts as
/// stopped before its entry line.
fn satisfied(st: &ProcessStatus, target: Position) -> bool {
    match (&st.status, target.when) {
        (TaskStatus::StoppedBefore { line }, When::Before) | (TaskStatus::StoppedAfter { line }, When::After) => {
            *line == target.line
        }
        (TaskStatus::Created, When::Before) | (TaskStatus::Exited { .. }, When::After) => st.pc == target.line,
        _ => false,
    }
}

fn describe(st: &ProcessStatus) -> String {
    match &st.status {
        TaskStatus::Exited { code } => format!("exited with {code} at line {}", st.pc),
        TaskStatus::Errored { reason } => format!("errored at line {}: {reason}", st.pc),
        TaskStatus::BlockedRecv { tag } => format!("blocked in recv({tag}) at line {}", st.pc),
        other => format!("{other:?} at line {}", st.pc),
    }
}

impl Deipa {
    pub fn new(endpoint: Arc<dyn Endpoint>) -> Deipa {
        Deipa {
            endpoint,
            spec: None,
            vids: VidMap::default(),
            pending: Pending::default(),
            cursor: 0,
            started: false,
            states: BTreeMap::new(),
            armed: Mutex::new(BTreeMap::new()),
            timeout: DEFAULT_TIMEOUT,
            transcript: Vec::new(),
            listener: None,
        }
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Starts accepting launcher announcements on `addr` and returns the
    /// bound address, for the launchers' configuration.
    pub fn listen(&mut self, addr: impl ToSocketAddrs) -> std::io::Result<String> {
        let handle = serve_announce(addr, self.vids.clone(), self.pending.clone())?;
        let bound = handle.local_addr().to_string();
        if let Some(old) = self.listener.replace(handle) {
            old.shutdown();
        }
        Ok(bound)
    }

    pub fn vids(&self) -> &VidMap {
        &self.vids
    }

    pub fn spec(&self) -> Option<&TessSpec> {
        self.spec.as_ref()
    }

    /// Index of the last global breakpoint reached; 0 before the first.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Every line printed by `run` and `step` so far.
    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    pub fn open(&mut self, path: &Path) -> Result<usize, DeipaError> {
        let text = std::fs::read_to_string(path).map_err(|e| DeipaError::Load(format!("{}: {e}", path.display())))?;
        self.open_text(&text)
    }

    /// Loads a specification, replacing the current one and resetting the
    /// drive state. Returns the number of global breakpoints.
    pub fn open_text(&mut self, text: &str) -> Result<usize, DeipaError> {
        let spec = tess::parse_tess(text).map_err(|e| DeipaError::Load(e.to_string()))?;
        self.vids.reset(&spec.spawn_rows);
        self.pending.lock().unwrap().clear();
        self.states.clear();
        self.armed.lock().unwrap().clear();
        self.cursor = 0;
        self.started = false;
        let n = spec.global_bps.len();
        self.spec = Some(spec);
        Ok(n)
    }

    /// Starts the application and drives it to the first global breakpoint.
    pub fn run(&mut self) -> Result<Vec<String>, DeipaError> {
        let spec = self.spec.clone().ok_or(DeipaError::NoSpec)?;
        if self.started {
            return Err(DeipaError::AlreadyStarted);
        }
        let payload = self
            .endpoint
            .call(&Service::Start { program: spec.start_file.clone() })
            .map_err(DeipaError::Startup)?;
        let tid = payload
            .get("tid")
            .and_then(Value::as_u64)
            .and_then(|t| Tid::try_from(t).ok())
            .ok_or_else(|| DeipaError::Startup(ServiceError::new(ErrorCode::Internal, format!("bad start reply {payload}"))))?;
        let root = spec.spawn_rows.iter().find(|r| r.parent_vid == 0).expect("checked at parse time");
        self.vids.map_root(root.vid, tid);
        self.started = true;
        match spec.global_bps.first() {
            None => Ok(Vec::new()),
            Some(gbp) => {
                self.cursor = 1;
                self.advance(1, gbp, false)
            }
        }
    }

    /// Drives the application to the next global breakpoint.
    pub fn step(&mut self) -> Result<Vec<String>, DeipaError> {
        let spec = self.spec.clone().ok_or(DeipaError::NoSpec)?;
        if !self.started {
            return Err(DeipaError::NotStarted);
        }
        let Some(gbp) = spec.global_bps.get(self.cursor) else {
            return Err(DeipaError::EndOfScript(spec.global_bps.len()));
        };
        self.cursor += 1;
        self.advance(self.cursor, gbp, true)
    }

    /// Current process list.
    pub fn state(&self) -> Vec<String> {
        render(&self.rows(&self.vids.vids()))
    }

    /// Removes Deipa's breakpoints and lets every stopped process run.
    /// Returns the vids resumed.
    pub fn release(&mut self) -> Result<Vec<u32>, ServiceError> {
        let armed = std::mem::take(&mut *self.armed.lock().unwrap());
        for (tid, ids) in armed {
            for id in ids {
                let _ = self.endpoint.call(&Service::ClearBreakpoint { tid, id });
            }
        }
        let mut resumed = Vec::new();
        for vid in self.vids.vids() {
            let tid = self.vids.tid(vid).expect("listed");
            if status_of(&*self.endpoint, tid)?.status.is_stopped() {
                self.endpoint.call(&Service::Resume { tid })?;
                resumed.push(vid);
            }
        }
        Ok(resumed)
    }

    fn rows(&self, vids: &[u32]) -> Vec<ReportRow> {
        vids.iter()
            .map(|vid| {
                let s = self.states.get(vid).copied().unwrap_or_default();
                ReportRow { vid: *vid, prev: s.prev, actual: s.actual }
            })
            .collect()
    }

    fn advance(&mut self, n: usize, gbp: &GlobalBp, with_report: bool) -> Result<Vec<String>, DeipaError> {
        let known = self.vids.vids();
        let outcomes = self.drive_to(gbp);

        for vid in &known {
            let s = self.states.entry(*vid).or_default();
            s.prev = s.actual;
        }
        let mut failed = Vec::new();
        let mut reasons = Vec::new();
        for (l, outcome) in gbp.locals.iter().zip(outcomes) {
            match outcome {
                Ok(()) => self.states.entry(l.vid).or_default().actual = Some(Position { when: l.when, line: l.line }),
                Err(reason) => {
                    failed.push(l.vid);
                    reasons.push(format!("vid {}: {reason}", l.vid));
                }
            }
        }

        let mut output = if with_report { render(&self.rows(&known)) } else { Vec::new() };
        output.append(&mut self.pending.lock().unwrap());

        let result = if failed.is_empty() {
            self.patch(n, gbp, &mut output)
        } else {
            failed.sort_unstable();
            Err(DeipaError::DriveTimeout { gbp: n, vids: failed, reasons, output: Vec::new() })
        };
        self.transcript.extend(output.iter().cloned());
        match result {
            Ok(()) => Ok(output),
            Err(DeipaError::DriveTimeout { gbp, vids, reasons, .. }) => {
                Err(DeipaError::DriveTimeout { gbp, vids, reasons, output })
            }
            Err(DeipaError::Patch { gbp, vid, error, .. }) => Err(DeipaError::Patch { gbp, vid, error, output }),
            Err(e) => Err(e),
        }
    }

    fn patch(&self, n: usize, gbp: &GlobalBp, output: &mut Vec<String>) -> Result<(), DeipaError> {
        for a in gbp.actions() {
            let fail = |error| DeipaError::Patch { gbp: n, vid: a.vid, error, output: Vec::new() };
            let tid = self
                .vids
                .tid(a.vid)
                .ok_or_else(|| fail(ServiceError::new(ErrorCode::UnknownTid, format!("vid {} is not mapped", a.vid))))?;
            self.endpoint
                .call(&Service::SetVariable { tid, name: a.var.clone(), value: a.int_value() })
                .map_err(fail)?;
            output.push(setvar_line(&a.var, &a.value));
        }
        Ok(())
    }

    /// Drives every process named in `gbp` to its local breakpoint, one
    /// thread per process. Outcomes are in `gbp.locals` order.
    fn drive_to(&self, gbp: &GlobalBp) -> Vec<Result<(), String>> {
        let barrier = Barrier::new(gbp.locals.len());
        thread::scope(|scope| {
            let workers: Vec<_> = gbp
                .locals
                .iter()
                .map(|l| {
                    let barrier = &barrier;
                    thread::Builder::new()
                        .name(format!("deipa-vid{}", l.vid))
                        .spawn_scoped(scope, move || self.drive_one(l, barrier))
                        .expect("spawn process thread")
                })
                .collect();
            workers.into_iter().map(|w| w.join().unwrap_or_else(|_| Err("controller panicked".into()))).collect()
        })
    }

    fn drive_one(&self, l: &LocalBp, barrier: &Barrier) -> Result<(), String> {
        let deadline = Instant::now() + self.timeout;
        let target = Position { when: l.when, line: l.line };
        // processes already known are released before anyone waits; the
        // others are waited for once everyone is moving, since a peer has
        // to spawn them first
        let early = self.vids.tid(l.vid).map(|tid| (tid, self.arm_and_resume(tid, target)));
        barrier.wait();
        let (tid, started) = match early {
            Some(e) => e,
            None => {
                let tid = self
                    .vids
                    .wait_tid(l.vid, deadline.saturating_duration_since(Instant::now()))
                    .ok_or_else(|| "never announced".to_string())?;
                (tid, self.arm_and_resume(tid, target))
            }
        };
        if started? {
            return Ok(());
        }
        let ep = &*self.endpoint;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(format!("timed out, {}", describe(&status_of(ep, tid).map_err(|e| e.to_string())?)));
            }
            match ep.call(&Service::WaitStop { tid, timeout: left }).and_then(parse_status) {
                Ok(st) if satisfied(&st, target) => return Ok(()),
                Ok(st) if st.status.is_terminal() => return Err(describe(&st)),
                // parked somewhere else, by another client's breakpoint
                Ok(_) => ep.call(&Service::Resume { tid }).map(|_| ()).map_err(|e| e.to_string())?,
                Err(e) if e.code == ErrorCode::Timeout => {
                    return Err(format!("timed out, {}", describe(&status_of(ep, tid).map_err(|e| e.to_string())?)));
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }

    /// Returns `Ok(true)` when the process is already where it should be.
    fn arm_and_resume(&self, tid: Tid, target: Position) -> Result<bool, String> {
        let ep = &*self.endpoint;
        let st = status_of(ep, tid).map_err(|e| e.to_string())?;
        if satisfied(&st, target) {
            return Ok(true);
        }
        if st.status.is_terminal() {
            return Err(describe(&st));
        }
        let stale = self.armed.lock().unwrap().remove(&tid).unwrap_or_default();
        for id in stale {
            let _ = ep.call(&Service::ClearBreakpoint { tid, id });
        }
        let armed = ep.call(&Service::SetBreakpoint { tid, line: target.line, when: target.when, one_shot: true });
        match armed {
            Ok(v) => {
                if let Some(id) = v.get("id").and_then(Value::as_u64) {
                    self.armed.lock().unwrap().entry(tid).or_default().push(id);
                }
            }
            Err(e) if e.code == ErrorCode::DuplicateBreakpoint => {}
            Err(e) => return Err(e.to_string()),
        }
        if st.status.is_stopped() {
            ep.call(&Service::Resume { tid }).map_err(|e| e.to_string())?;
        }
        Ok(false)
    }
}

impl Drop for Deipa {
    fn drop(&mut self) {
        if let Some(l) = self.listener.take() {
            l.shutdown();
        }
    }
}
