//! Text consoles: command parsing and rendering, shared by the per-layer
//! console binaries. Every command issues at most one service request.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::engine::{Breakpoint, ProcessInfo, ProcessStatus};
use crate::minipvm::{Line, TaskStatus, Tid};
use crate::service::{Endpoint, ErrorCode, EvalResult, Service, ServiceError, When};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Tids,
    Evaluate,
    Set,
    Break,
    Delete,
    Continue,
    Step,
    Status,
    InfoLine,
    Breakpoints,
    Help,
    Quit,
}

const VERBS: [(&str, Verb); 12] = [
    ("tids", Verb::Tids),
    ("evaluate", Verb::Evaluate),
    ("set", Verb::Set),
    ("break", Verb::Break),
    ("delete", Verb::Delete),
    ("continue", Verb::Continue),
    ("step", Verb::Step),
    ("status", Verb::Status),
    ("info-line", Verb::InfoLine),
    ("breakpoints", Verb::Breakpoints),
    ("help", Verb::Help),
    ("quit", Verb::Quit),
];

impl Verb {
    pub fn name(self) -> &'static str {
        VERBS.iter().find(|(_, v)| *v == self).map(|(n, _)| *n).expect("every verb is listed")
    }

    fn per_process(self) -> bool {
        !matches!(self, Verb::Tids | Verb::Help | Verb::Quit)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub tid: Option<Tid>,
    pub verb: Verb,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("empty command")]
    Empty,
    #[error("unknown command `{0}`")]
    UnknownVerb(String),
    #[error("`{word}` is ambiguous: {}", .candidates.join(", "))]
    AmbiguousPrefix { word: String, candidates: Vec<&'static str> },
    #[error("`{0}` needs a target tid, as in `1 {0}`")]
    MissingTid(Verb),
}

/// Parses `[tid] verb args...`. Verbs may be abbreviated to any unique
/// prefix; an exact name always wins.
pub fn parse_command(line: &str) -> Result<Command, CommandError> {
    let mut words = line.split_whitespace().peekable();
    let tid = match words.peek().map(|w| w.parse::<Tid>()) {
        Some(Ok(tid)) => {
            words.next();
            Some(tid)
        }
        _ => None,
    };
    let word = words.next().ok_or(CommandError::Empty)?;
    let verb = match VERBS.iter().find(|(n, _)| *n == word) {
        Some((_, v)) => *v,
        None => {
            let matches: Vec<&(&str, Verb)> = VERBS.iter().filter(|(n, _)| n.starts_with(word)).collect();
            match matches.as_slice() {
                [] => return Err(CommandError::UnknownVerb(word.to_string())),
                [(_, v)] => *v,
                many => {
                    let candidates = many.iter().map(|(n, _)| *n).collect();
                    return Err(CommandError::AmbiguousPrefix { word: word.to_string(), candidates });
                }
            }
        }
    };
    if verb.per_process() && tid.is_none() {
        return Err(CommandError::MissingTid(verb));
    }
    let args: Vec<String> = words.map(str::to_string).collect();
    Ok(Command { tid, verb, args })
}

pub const TIDS_HEADER: &str = "  TID  ATT  TP_PID  LLD_PID  L_TID MACHINE";

fn pad(s: impl fmt::Display, width: usize) -> String {
    format!("{:<width$}", s.to_string())
}

pub fn render_tids(rows: &[ProcessInfo]) -> String {
    let mut out = String::from(TIDS_HEADER);
    for p in rows {
        let _ = write!(
            out,
            "\n  {}{}{}{}{}{}",
            pad(p.tid, 5),
            pad(if p.att { "y" } else { "n" }, 5),
            pad(p.tp_pid, 8),
            pad(p.lld_pid, 9),
            pad(p.l_tid, 6),
            p.machine
        );
    }
    out
}

pub fn render_eval(r: &EvalResult) -> String {
    let mut out = format!("=> ${} = {}", r.ordinal, r.value);
    if !r.initialized {
        out.push_str(" (uninitialized)");
    }
    out
}

pub fn render_info_line(line: Line, file: &str) -> String {
    format!("Line {line} of \"{file}\"")
}

pub fn render_status(st: &ProcessStatus) -> String {
    match &st.status {
        TaskStatus::Created => format!("created, line {}", st.pc),
        TaskStatus::Runnable => "running".to_string(),
        TaskStatus::BlockedRecv { tag } => format!("blocked in recv {tag} at line {}", st.pc),
        TaskStatus::StoppedBefore { line } => format!("stopped before line {line}"),
        TaskStatus::StoppedAfter { line } => format!("stopped after line {line}, next line {}", st.pc),
        TaskStatus::Exited { code } => format!("exited with {code} at line {}", st.pc),
        TaskStatus::Errored { reason } => format!("errored at line {}: {reason}", st.pc),
    }
}

pub fn render_error(e: &ServiceError) -> String {
    format!("! {}", e.code)
}

fn decode<T: DeserializeOwned>(v: Value) -> Result<T, ServiceError> {
    serde_json::from_value(v).map_err(|e| ServiceError::new(ErrorCode::Internal, e.to_string()))
}

pub const HELP: &str = "\
tids                      list processes
TID evaluate EXPR         evaluate an expression
TID set VAR VALUE         set a variable
TID break LINE [after]    set a breakpoint (before LINE by default)
TID delete ID             remove a breakpoint
TID breakpoints           list breakpoints
TID continue              resume
TID step                  execute one line
TID status                show where the process is
TID info-line             show the current line
help                      this text
quit                      leave the console
Commands may be shortened to any unambiguous prefix.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Text(String),
    Quit,
}

/// A console bound to one layer's endpoint.
pub struct Console {
    endpoint: Arc<dyn Endpoint>,
    layer: u8,
}

impl Console {
    pub fn new(endpoint: Arc<dyn Endpoint>, layer: u8) -> Console {
        Console { endpoint, layer }
    }

    pub fn prompt(&self) -> String {
        format!("f{}m []> ", self.layer)
    }

    pub fn banner(&self) -> String {
        format!("fiddle console, layer {}. Type `help` for commands; unambiguous abbreviations work.", self.layer)
    }

    /// Parses and runs one input line.
    pub fn handle_line(&self, line: &str) -> Option<Outcome> {
        match parse_command(line) {
            Ok(cmd) => Some(self.execute(&cmd)),
            Err(CommandError::Empty) => None,
            Err(e) => Some(Outcome::Text(format!("! {e}"))),
        }
    }

    pub fn execute(&self, cmd: &Command) -> Outcome {
        match cmd.verb {
            Verb::Quit => Outcome::Quit,
            Verb::Help => Outcome::Text(HELP.to_string()),
            _ => Outcome::Text(self.run(cmd).unwrap_or_else(|e| render_error(&e))),
        }
    }

    fn run(&self, cmd: &Command) -> Result<String, ServiceError> {
        let tid = cmd.tid.unwrap_or_default();
        let arg = |i: usize, what: &str| {
            cmd.args.get(i).cloned().ok_or_else(|| ServiceError::bad_args(format!("missing {what}")))
        };
        let num = |i: usize, what: &str| -> Result<u64, ServiceError> {
            arg(i, what)?.parse().map_err(|_| ServiceError::bad_args(format!("{what} must be a number")))
        };
        let call = |svc: Service| self.endpoint.call(&svc);
        match cmd.verb {
            Verb::Tids => Ok(render_tids(&decode::<Vec<ProcessInfo>>(call(Service::ListTids)?)?)),
            Verb::Evaluate => {
                if cmd.args.is_empty() {
                    return Err(ServiceError::bad_args("missing expression"));
                }
                let r: EvalResult = decode(call(Service::Evaluate { tid, expr: cmd.args.join(" ") })?)?;
                Ok(render_eval(&r))
            }
            Verb::Set => {
                let name = arg(0, "variable")?;
                let value = arg(1, "value")?
                    .parse::<i64>()
                    .map_err(|_| ServiceError::new(ErrorCode::BadValue, "value must be an integer"))?;
                call(Service::SetVariable { tid, name: name.clone(), value })?;
                Ok(format!("{name} = {value}"))
            }
            Verb::Break => {
                let line = Line::try_from(num(0, "line")?).map_err(|_| ServiceError::bad_args("line out of range"))?;
                let when = match cmd.args.get(1).map(String::as_str) {
                    None | Some("before") => When::Before,
                    Some("after") => When::After,
                    Some(other) => return Err(ServiceError::bad_args(format!("`{other}` is not before/after"))),
                };
                let id = call(Service::SetBreakpoint { tid, line, when, one_shot: false })?
                    .get("id")
                    .and_then(Value::as_u64)
                    .unwrap_or_default();
                Ok(format!("Breakpoint {id} {when} line {line}"))
            }
            Verb::Delete => {
                let id = num(0, "breakpoint id")?;
                call(Service::ClearBreakpoint { tid, id })?;
                Ok(format!("Deleted breakpoint {id}"))
            }
            Verb::Breakpoints => {
                let bps: Vec<Breakpoint> = decode(call(Service::ListBreakpoints { tid })?)?;
                if bps.is_empty() {
                    return Ok("No breakpoints.".to_string());
                }
                let lines: Vec<String> = bps
                    .iter()
                    .map(|b| format!("{:>3} {:<6} line {}{}", b.id, b.when, b.line, if b.one_shot { " (once)" } else { "" }))
                    .collect();
                Ok(lines.join("\n"))
            }
            Verb::Continue => call(Service::Resume { tid }).map(|_| "Continuing.".to_string()),
            Verb::Step => call(Service::SingleStep { tid }).map(|_| "Stepping.".to_string()),
            Verb::Status => Ok(render_status(&decode(call(Service::Status { tid })?)?)),
            Verb::InfoLine => {
                let v = call(Service::InfoLine { tid })?;
                let line = v.get("line").and_then(Value::as_u64).unwrap_or_default() as Line;
                Ok(render_info_line(line, v.get("file").and_then(Value::as_str).unwrap_or_default()))
            }
            Verb::Help | Verb::Quit => unreachable!("handled by execute"),
        }
    }
}
