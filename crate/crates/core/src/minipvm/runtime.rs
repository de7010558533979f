use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{Expr, ExprError};
use super::program::{Line, PrintItem, Program, ProgramError, Stmt};

/// Task identifier, local to one node.
pub type Tid = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskStatus {
    Created,
    Runnable,
    BlockedRecv { tag: i64 },
    StoppedBefore { line: Line },
    StoppedAfter { line: Line },
    Exited { code: i64 },
    Errored { reason: String },
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskStatus::Exited { .. } | TaskStatus::Errored { .. })
    }

    /// Stopped from a debugger's point of view: parked and resumable.
    pub fn is_stopped(&self) -> bool {
        matches!(
            self,
            TaskStatus::Created | TaskStatus::StoppedBefore { .. } | TaskStatus::StoppedAfter { .. }
        )
    }

    /// Running or blocked in a receive.
    pub fn is_running(&self) -> bool {
        matches!(self, TaskStatus::Runnable | TaskStatus::BlockedRecv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub src: Tid,
    pub tag: i64,
    pub payload: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub local_tid: Tid,
    pub program: Arc<Program>,
    pub pc: Line,
    pub vars: BTreeMap<String, i64>,
    pub outbuf: Vec<i64>,
    pub inbuf: VecDeque<i64>,
    pub mailbox: VecDeque<Message>,
    pub status: TaskStatus,
}

impl Task {
    fn new(local_tid: Tid, program: Arc<Program>, status: TaskStatus) -> Task {
        Task {
            local_tid,
            pc: program.entry(),
            program,
            vars: BTreeMap::new(),
            outbuf: Vec::new(),
            inbuf: VecDeque::new(),
            mailbox: VecDeque::new(),
            status,
        }
    }

    fn eval(&self, expr: &Expr) -> Result<i64, ExprError> {
        expr.eval(&self.vars)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    Blocked(i64),
    Spawned { program: String, tid: Tid },
    Exited(i64),
    Output(String),
    Errored(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnMode {
    /// Spawned tasks wait in `Created` until a debugger registers them.
    Capture,
    /// Spawned tasks are runnable at once.
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("unknown tid {0}")]
    UnknownTid(Tid),
    #[error("unknown program `{0}`")]
    UnknownProgram(String),
    #[error("program `{name}`: {source}")]
    BadProgram { name: String, source: ProgramError },
    #[error("task {0} is not runnable")]
    NotRunnable(Tid),
}

/// One node's worth of simulated tasks, their programs and mailboxes.
#[derive(Debug)]
pub struct Runtime {
    programs_dir: Option<PathBuf>,
    programs: HashMap<String, Arc<Program>>,
    tasks: BTreeMap<Tid, Task>,
    spawn_mode: SpawnMode,
}

impl Runtime {
    pub fn new(programs_dir: Option<PathBuf>, spawn_mode: SpawnMode) -> Runtime {
        Runtime { programs_dir, programs: HashMap::new(), tasks: BTreeMap::new(), spawn_mode }
    }

    pub fn spawn_mode(&self) -> SpawnMode {
        self.spawn_mode
    }

    pub fn programs_dir(&self) -> Option<&Path> {
        self.programs_dir.as_deref()
    }

    /// Registers an in-memory program, shadowing any file of the same name.
    pub fn add_program(&mut self, program: Program) {
        self.programs.insert(program.name.clone(), Arc::new(program));
    }

    /// Resolves `name` from the in-memory table or `<programs-dir>/<name>.mpl`.
    pub fn load_program(&mut self, name: &str) -> Result<Arc<Program>, RuntimeError> {
        if let Some(p) = self.programs.get(name) {
            return Ok(p.clone());
        }
        let valid_name = !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != "..";
        let dir = self.programs_dir.as_ref().filter(|_| valid_name);
        let path = dir
            .map(|d| d.join(format!("{name}.mpl")))
            .ok_or_else(|| RuntimeError::UnknownProgram(name.to_string()))?;
        let source = std::fs::read_to_string(&path)
            .map_err(|_| RuntimeError::UnknownProgram(name.to_string()))?;
        let program = Program::parse(&source, name)
            .map_err(|source| RuntimeError::BadProgram { name: name.to_string(), source })?
            .with_source_path(&path);
        let program = Arc::new(program);
        self.programs.insert(name.to_string(), program.clone());
        Ok(program)
    }

    pub fn task(&self, tid: Tid) -> Option<&Task> {
        self.tasks.get(&tid)
    }

    pub fn task_mut(&mut self, tid: Tid) -> Option<&mut Task> {
        self.tasks.get_mut(&tid)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    fn fresh_tid(&self) -> Tid {
        (1..).find(|t| !self.tasks.contains_key(t)).unwrap()
    }

    /// Creates a task running `program_name`. With `debug_capture` the task
    /// stays `Created` until someone makes it runnable.
    pub fn spawn_task(&mut self, program_name: &str, debug_capture: bool) -> Result<Tid, RuntimeError> {
        let program = self.load_program(program_name)?;
        let tid = self.fresh_tid();
        let status = if debug_capture { TaskStatus::Created } else { TaskStatus::Runnable };
        self.tasks.insert(tid, Task::new(tid, program, status));
        Ok(tid)
    }

    /// Appends a message to `dst`'s mailbox, waking it if it is blocked on a
    /// matching receive.
    pub fn deliver(&mut self, src: Tid, dst: Tid, tag: i64, payload: Vec<i64>) -> Result<(), RuntimeError> {
        let task = self.tasks.get_mut(&dst).ok_or(RuntimeError::UnknownTid(dst))?;
        task.mailbox.push_back(Message { src, tag, payload });
        if let TaskStatus::BlockedRecv { tag: want } = task.status {
            if want == -1 || want == tag {
                task.status = TaskStatus::Runnable;
            }
        }
        Ok(())
    }

    /// Executes the statement at `tid`'s pc. Failures inside the task are
    /// reported as [`StepOutcome::Errored`] and park the task; only
    /// addressing errors surface as `Err`.
    pub fn execute_line(&mut self, tid: Tid) -> Result<StepOutcome, RuntimeError> {
        let task = self.tasks.get(&tid).ok_or(RuntimeError::UnknownTid(tid))?;
        if task.status != TaskStatus::Runnable {
            return Err(RuntimeError::NotRunnable(tid));
        }
        let outcome = match self.step(tid) {
            Ok(outcome) => outcome,
            Err(reason) => StepOutcome::Errored(reason),
        };
        let task = self.tasks.get_mut(&tid).unwrap();
        match &outcome {
            StepOutcome::Blocked(tag) => task.status = TaskStatus::BlockedRecv { tag: *tag },
            StepOutcome::Exited(code) => task.status = TaskStatus::Exited { code: *code },
            StepOutcome::Errored(reason) => task.status = TaskStatus::Errored { reason: reason.clone() },
            _ => {}
        }
        Ok(outcome)
    }

    fn step(&mut self, tid: Tid) -> Result<StepOutcome, String> {
        let task = &self.tasks[&tid];
        let pc = task.pc;
        let program = task.program.clone();
        let Some(stmt) = program.stmt(pc) else {
            // fell off the end of the program
            return Ok(StepOutcome::Exited(0));
        };
        let next = program.next_after(pc);
        let eval = |task: &Task, e: &Expr| task.eval(e).map_err(|e| e.to_string());

        let outcome = match stmt {
            Stmt::MyTid { var } => {
                let task = self.tasks.get_mut(&tid).unwrap();
                task.vars.insert(var.clone(), tid as i64);
                StepOutcome::Advanced
            }
            Stmt::Spawn { program: name, var } => {
                let capture = self.spawn_mode == SpawnMode::Capture;
                let child = self.spawn_task(name, capture).map_err(|e| e.to_string())?;
                let task = self.tasks.get_mut(&tid).unwrap();
                task.vars.insert(var.clone(), child as i64);
                StepOutcome::Spawned { program: name.clone(), tid: child }
            }
            Stmt::InitSend => {
                self.tasks.get_mut(&tid).unwrap().outbuf.clear();
                StepOutcome::Advanced
            }
            Stmt::Pack(e) => {
                let v = eval(task, e)?;
                self.tasks.get_mut(&tid).unwrap().outbuf.push(v);
                StepOutcome::Advanced
            }
            Stmt::Send { dest, tag } => {
                let dst = eval(task, dest)?;
                let tag = eval(task, tag)?;
                let payload = task.outbuf.clone();
                let dst = Tid::try_from(dst)
                    .ok()
                    .filter(|d| self.tasks.contains_key(d))
                    .ok_or_else(|| format!("send to unknown tid {dst}"))?;
                self.deliver(tid, dst, tag, payload).map_err(|e| e.to_string())?;
                StepOutcome::Advanced
            }
            Stmt::Recv { tag } => {
                let want = eval(task, tag)?;
                let task = self.tasks.get_mut(&tid).unwrap();
                let found = task.mailbox.iter().position(|m| want == -1 || m.tag == want);
                match found {
                    Some(idx) => {
                        let msg = task.mailbox.remove(idx).unwrap();
                        task.inbuf = msg.payload.into();
                        StepOutcome::Advanced
                    }
                    None => return Ok(StepOutcome::Blocked(want)),
                }
            }
            Stmt::Unpack { var } => {
                let task = self.tasks.get_mut(&tid).unwrap();
                let v = task.inbuf.pop_front().ok_or("unpack from empty receive buffer")?;
                task.vars.insert(var.clone(), v);
                StepOutcome::Advanced
            }
            Stmt::Set { var, value } => {
                let v = eval(task, value)?;
                self.tasks.get_mut(&tid).unwrap().vars.insert(var.clone(), v);
                StepOutcome::Advanced
            }
            Stmt::IfGoto { cond, target } => {
                let taken = eval(task, cond)? != 0;
                let task = self.tasks.get_mut(&tid).unwrap();
                task.pc = if taken { *target } else { next };
                return Ok(StepOutcome::Advanced);
            }
            Stmt::Print(items) => {
                let mut parts = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        PrintItem::Text(t) => parts.push(t.clone()),
                        PrintItem::Value(e) => parts.push(eval(task, e)?.to_string()),
                    }
                }
                StepOutcome::Output(parts.join(" "))
            }
            Stmt::Exit { code } => return Ok(StepOutcome::Exited(eval(task, code)?)),
        };
        self.tasks.get_mut(&tid).unwrap().pc = next;
        Ok(outcome)
    }

    /// Round-robin over runnable tasks until none is runnable or `max_steps`
    /// statements have run. Returns outputs in execution order.
    pub fn run_free(&mut self, max_steps: usize) -> Vec<(Tid, String)> {
        let mut outputs = Vec::new();
        let mut steps = 0;
        let mut last: Tid = 0;
        while steps < max_steps {
            let runnable = |t: &Task| t.status == TaskStatus::Runnable;
            let next = self
                .tasks
                .range(last + 1..)
                .chain(self.tasks.range(..=last))
                .find(|(_, t)| runnable(t))
                .map(|(tid, _)| *tid);
            let Some(tid) = next else { break };
            if let Ok(StepOutcome::Output(text)) = self.execute_line(tid) {
                outputs.push((tid, text));
            }
            last = tid;
            steps += 1;
        }
        outputs
    }
}
