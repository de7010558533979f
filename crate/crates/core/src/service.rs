//! Debugging services shared by every layer, their wire arguments and
//! error codes.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::minipvm::{Line, Tid};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnknownTid,
    UnknownGlobalTid,
    BadLine,
    DuplicateBreakpoint,
    UnknownBreakpoint,
    NotStopped,
    Timeout,
    BadValue,
    BadArgs,
    UnknownService,
    UnknownProgram,
    BadProgram,
    ParseError,
    Uninitialized,
    NodeUnreachable,
    EngineUnreachable,
    DuplicateEndpoint,
    WrongMode,
    BadRid,
    Disconnected,
    Internal,
    Other(String),
}

const CODES: [(ErrorCode, &str); 21] = [
    (ErrorCode::UnknownTid, "unknown_tid"),
    (ErrorCode::UnknownGlobalTid, "unknown_global_tid"),
    (ErrorCode::BadLine, "bad_line"),
    (ErrorCode::DuplicateBreakpoint, "duplicate_breakpoint"),
    (ErrorCode::UnknownBreakpoint, "unknown_breakpoint"),
    (ErrorCode::NotStopped, "not_stopped"),
    (ErrorCode::Timeout, "timeout"),
    (ErrorCode::BadValue, "bad_value"),
    (ErrorCode::BadArgs, "bad_args"),
    (ErrorCode::UnknownService, "unknown_service"),
    (ErrorCode::UnknownProgram, "unknown_program"),
    (ErrorCode::BadProgram, "bad_program"),
    (ErrorCode::ParseError, "parse_error"),
    (ErrorCode::Uninitialized, "uninitialized"),
    (ErrorCode::NodeUnreachable, "node_unreachable"),
    (ErrorCode::EngineUnreachable, "engine_unreachable"),
    (ErrorCode::DuplicateEndpoint, "duplicate_endpoint"),
    (ErrorCode::WrongMode, "wrong_mode"),
    (ErrorCode::BadRid, "bad_rid"),
    (ErrorCode::Disconnected, "disconnected"),
    (ErrorCode::Internal, "internal"),
];

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let ErrorCode::Other(s) = self {
            return f.write_str(s);
        }
        let (_, text) = CODES.iter().find(|(c, _)| c == self).expect("every code has text");
        f.write_str(text)
    }
}

impl FromStr for ErrorCode {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(CODES
            .iter()
            .find(|(_, text)| *text == s)
            .map(|(c, _)| c.clone())
            .unwrap_or_else(|| ErrorCode::Other(s.to_string())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ServiceError {
        ServiceError { code, message: message.into() }
    }

    pub fn bad_args(message: impl Into<String>) -> ServiceError {
        ServiceError::new(ErrorCode::BadArgs, message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum When {
    Before,
    After,
}

impl When {
    /// Numeric code used in behavior specifications: 1 before, 2 after.
    pub fn code(self) -> i64 {
        match self {
            When::Before => 1,
            When::After => 2,
        }
    }

    pub fn from_code(code: i64) -> Option<When> {
        match code {
            1 => Some(When::Before),
            2 => Some(When::After),
            _ => None,
        }
    }
}

impl fmt::Display for When {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            When::Before => "before",
            When::After => "after",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Service {
    ListTids,
    Start { program: String },
    SetBreakpoint { tid: Tid, line: Line, when: When, one_shot: bool },
    ClearBreakpoint { tid: Tid, id: u64 },
    ListBreakpoints { tid: Tid },
    Resume { tid: Tid },
    SingleStep { tid: Tid },
    WaitStop { tid: Tid, timeout: Duration },
    Evaluate { tid: Tid, expr: String },
    InfoLine { tid: Tid },
    Status { tid: Tid },
    SetVariable { tid: Tid, name: String, value: i64 },
    ReadSource { tid: Tid },
    FetchPending { max: usize },
}

pub const SERVICE_NAMES: [&str; 14] = [
    "list_tids",
    "start",
    "set_breakpoint",
    "clear_breakpoint",
    "list_breakpoints",
    "resume",
    "single_step",
    "wait_stop",
    "evaluate",
    "info_line",
    "status",
    "set_variable",
    "read_source",
    "fetch_pending",
];

fn arg<'a>(args: &'a [Value], idx: usize, what: &str) -> Result<&'a Value, ServiceError> {
    args.get(idx).ok_or_else(|| ServiceError::bad_args(format!("missing argument `{what}`")))
}

fn uint(args: &[Value], idx: usize, what: &str) -> Result<u64, ServiceError> {
    arg(args, idx, what)?
        .as_u64()
        .ok_or_else(|| ServiceError::bad_args(format!("`{what}` must be a non-negative integer")))
}

fn tid_arg(args: &[Value]) -> Result<Tid, ServiceError> {
    Tid::try_from(uint(args, 0, "tid")?).map_err(|_| ServiceError::bad_args("tid out of range"))
}

fn text(args: &[Value], idx: usize, what: &str) -> Result<String, ServiceError> {
    arg(args, idx, what)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ServiceError::bad_args(format!("`{what}` must be a string")))
}

/// Integer argument; strings holding an integer are accepted as well.
pub fn int_value(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn when_arg(v: &Value) -> Result<When, ServiceError> {
    let parsed = match v {
        Value::String(s) if s == "before" => Some(When::Before),
        Value::String(s) if s == "after" => Some(When::After),
        other => int_value(other).and_then(When::from_code),
    };
    parsed.ok_or_else(|| ServiceError::bad_args("`when` must be before/after or 1/2"))
}

impl Service {
    pub fn parse(name: &str, args: &[Value]) -> Result<Service, ServiceError> {
        let svc = match name {
            "list_tids" => Service::ListTids,
            "start" => Service::Start { program: text(args, 0, "program")? },
            "set_breakpoint" => Service::SetBreakpoint {
                tid: tid_arg(args)?,
                line: Line::try_from(uint(args, 1, "line")?)
                    .map_err(|_| ServiceError::bad_args("line out of range"))?,
                when: match args.get(2) {
                    Some(v) => when_arg(v)?,
                    None => When::Before,
                },
                one_shot: args.get(3).and_then(Value::as_bool).unwrap_or(false),
            },
            "clear_breakpoint" => Service::ClearBreakpoint { tid: tid_arg(args)?, id: uint(args, 1, "id")? },
            "list_breakpoints" => Service::ListBreakpoints { tid: tid_arg(args)? },
            "resume" => Service::Resume { tid: tid_arg(args)? },
            "single_step" => Service::SingleStep { tid: tid_arg(args)? },
            "wait_stop" => Service::WaitStop {
                tid: tid_arg(args)?,
                timeout: Duration::from_millis(uint(args, 1, "timeout_ms")?),
            },
            "evaluate" => Service::Evaluate { tid: tid_arg(args)?, expr: text(args, 1, "expr")? },
            "info_line" => Service::InfoLine { tid: tid_arg(args)? },
            "status" => Service::Status { tid: tid_arg(args)? },
            "set_variable" => {
                let value = arg(args, 2, "value")?;
                Service::SetVariable {
                    tid: tid_arg(args)?,
                    name: text(args, 1, "name")?,
                    value: int_value(value).ok_or_else(|| {
                        ServiceError::new(ErrorCode::BadValue, format!("`{value}` is not an integer"))
                    })?,
                }
            }
            "read_source" => Service::ReadSource { tid: tid_arg(args)? },
            "fetch_pending" => Service::FetchPending {
                max: args.first().and_then(Value::as_u64).map(|m| m as usize).unwrap_or(usize::MAX),
            },
            other => {
                return Err(ServiceError::new(ErrorCode::UnknownService, format!("unknown service `{other}`")))
            }
        };
        Ok(svc)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Service::ListTids => "list_tids",
            Service::Start { .. } => "start",
            Service::SetBreakpoint { .. } => "set_breakpoint",
            Service::ClearBreakpoint { .. } => "clear_breakpoint",
            Service::ListBreakpoints { .. } => "list_breakpoints",
            Service::Resume { .. } => "resume",
            Service::SingleStep { .. } => "single_step",
            Service::WaitStop { .. } => "wait_stop",
            Service::Evaluate { .. } => "evaluate",
            Service::InfoLine { .. } => "info_line",
            Service::Status { .. } => "status",
            Service::SetVariable { .. } => "set_variable",
            Service::ReadSource { .. } => "read_source",
            Service::FetchPending { .. } => "fetch_pending",
        }
    }

    pub fn args(&self) -> Vec<Value> {
        match self {
            Service::ListTids => vec![],
            Service::Start { program } => vec![json!(program)],
            Service::SetBreakpoint { tid, line, when, one_shot } => {
                vec![json!(tid), json!(line), json!(when), json!(one_shot)]
            }
            Service::ClearBreakpoint { tid, id } => vec![json!(tid), json!(id)],
            Service::WaitStop { tid, timeout } => vec![json!(tid), json!(timeout.as_millis() as u64)],
            Service::Evaluate { tid, expr } => vec![json!(tid), json!(expr)],
            Service::SetVariable { tid, name, value } => vec![json!(tid), json!(name), json!(value)],
            Service::ListBreakpoints { tid }
            | Service::Resume { tid }
            | Service::SingleStep { tid }
            | Service::InfoLine { tid }
            | Service::Status { tid }
            | Service::ReadSource { tid } => vec![json!(tid)],
            Service::FetchPending { max } => vec![json!(max)],
        }
    }

    /// Target process, for per-process services.
    pub fn tid(&self) -> Option<Tid> {
        match self {
            Service::ListTids | Service::Start { .. } | Service::FetchPending { .. } => None,
            Service::SetBreakpoint { tid, .. }
            | Service::ClearBreakpoint { tid, .. }
            | Service::ListBreakpoints { tid }
            | Service::Resume { tid }
            | Service::SingleStep { tid }
            | Service::WaitStop { tid, .. }
            | Service::Evaluate { tid, .. }
            | Service::InfoLine { tid }
            | Service::Status { tid }
            | Service::SetVariable { tid, .. }
            | Service::ReadSource { tid } => Some(*tid),
        }
    }

    /// Same service addressed to another process.
    pub fn with_tid(&self, new: Tid) -> Service {
        let mut svc = self.clone();
        match &mut svc {
            Service::SetBreakpoint { tid, .. }
            | Service::ClearBreakpoint { tid, .. }
            | Service::ListBreakpoints { tid }
            | Service::Resume { tid }
            | Service::SingleStep { tid }
            | Service::WaitStop { tid, .. }
            | Service::Evaluate { tid, .. }
            | Service::InfoLine { tid }
            | Service::Status { tid }
            | Service::SetVariable { tid, .. }
            | Service::ReadSource { tid } => *tid = new,
            _ => {}
        }
        svc
    }
}

/// Anything that executes services: an in-process engine, a session, or a
/// connection to a daemon.
pub trait Endpoint: Send + Sync {
    fn call(&self, service: &Service) -> Result<Value, ServiceError>;
}

/// Result of `evaluate`. The ordinal is stamped by whichever layer owns the
/// client session, so it counts that session's evaluations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub value: i64,
    pub initialized: bool,
    #[serde(default)]
    pub ordinal: u64,
}

/// Per-session `$n` counter for evaluation results.
#[derive(Debug, Default)]
pub struct Ordinals {
    last: u64,
}

impl Ordinals {
    /// Re-stamps an `evaluate` payload with this session's next ordinal.
    pub fn stamp(&mut self, service: &Service, payload: &mut Value) {
        if let (Service::Evaluate { .. }, Value::Object(map)) = (service, payload) {
            self.last += 1;
            map.insert("ordinal".into(), json!(self.last));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_args_agree() {
        let services = [
            Service::ListTids,
            Service::Start { program: "echo_client".into() },
            Service::SetBreakpoint { tid: 1, line: 17, when: When::After, one_shot: true },
            Service::ClearBreakpoint { tid: 1, id: 4 },
            Service::WaitStop { tid: 2, timeout: Duration::from_millis(1500) },
            Service::Evaluate { tid: 2, expr: "value".into() },
            Service::SetVariable { tid: 2, name: "value".into(), value: -1 },
            Service::FetchPending { max: 3 },
        ];
        for svc in services {
            assert_eq!(Service::parse(svc.name(), &svc.args()), Ok(svc.clone()));
        }
    }

    #[test]
    fn argument_errors() {
        assert_eq!(Service::parse("frob", &[]).unwrap_err().code, ErrorCode::UnknownService);
        assert_eq!(Service::parse("resume", &[]).unwrap_err().code, ErrorCode::BadArgs);
        assert_eq!(Service::parse("resume", &[json!(-1)]).unwrap_err().code, ErrorCode::BadArgs);
        let err = Service::parse("set_variable", &[json!(2), json!("value"), json!("abc")]).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadValue);
        let err = Service::parse("set_variable", &[json!(2), json!("value"), json!(1.5)]).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadValue);
        assert_eq!(
            Service::parse("set_variable", &[json!(2), json!("value"), json!("1")]),
            Ok(Service::SetVariable { tid: 2, name: "value".into(), value: 1 })
        );
    }

    #[test]
    fn when_accepts_codes() {
        let svc = Service::parse("set_breakpoint", &[json!(1), json!(28), json!(2)]).unwrap();
        assert!(matches!(svc, Service::SetBreakpoint { when: When::After, one_shot: false, .. }));
        assert!(Service::parse("set_breakpoint", &[json!(1), json!(28), json!(3)]).is_err());
    }

    #[test]
    fn error_codes_round_trip() {
        for (code, text) in CODES.iter() {
            assert_eq!(code.to_string(), *text);
            assert_eq!(text.parse::<ErrorCode>().unwrap(), *code);
        }
        assert_eq!("weird".parse::<ErrorCode>().unwrap(), ErrorCode::Other("weird".into()));
    }

    #[test]
    fn ordinals_only_stamp_evaluations() {
        let mut ords = Ordinals::default();
        let eval = Service::Evaluate { tid: 1, expr: "x".into() };
        let mut a = json!({"value": 1, "initialized": true});
        let mut b = json!({"value": 1, "initialized": true, "ordinal": 9});
        let mut other = json!({"value": 1});
        ords.stamp(&eval, &mut a);
        ords.stamp(&Service::Status { tid: 1 }, &mut other);
        ords.stamp(&eval, &mut b);
        assert_eq!(a["ordinal"], 1);
        assert_eq!(b["ordinal"], 2);
        assert!(other.get("ordinal").is_none());
    }
}
