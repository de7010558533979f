use std::sync::Mutex;

use serde_json::{json, Value};

use super::Engine;
use crate::service::{Endpoint, ErrorCode, Ordinals, Service, ServiceError};

impl Engine {
    /// Executes one service and builds its reply payload. Evaluation
    /// ordinals are left at 0; sessions stamp them.
    pub fn handle(&self, service: &Service) -> Result<Value, ServiceError> {
        let payload = match service {
            Service::ListTids => json!(self.list_tids()),
            Service::Start { program } => json!({ "tid": self.start(program)? }),
            Service::SetBreakpoint { tid, line, when, one_shot } => {
                json!({ "id": self.set_breakpoint(*tid, *line, *when, *one_shot)? })
            }
            Service::ClearBreakpoint { tid, id } => {
                self.clear_breakpoint(*tid, *id)?;
                Value::Null
            }
            Service::ListBreakpoints { tid } => json!(self.breakpoints(*tid)?),
            Service::Resume { tid } => {
                self.resume(*tid)?;
                Value::Null
            }
            Service::SingleStep { tid } => {
                self.single_step(*tid)?;
                Value::Null
            }
            Service::WaitStop { tid, timeout } => json!(self.wait_stop(*tid, *timeout)?),
            Service::Evaluate { tid, expr } => {
                let (value, initialized) = self.evaluate(*tid, expr)?;
                json!({ "value": value, "initialized": initialized, "ordinal": 0 })
            }
            Service::InfoLine { tid } => {
                let (line, file) = self.info_line(*tid)?;
                json!({ "line": line, "file": file })
            }
            Service::Status { tid } => json!(self.status(*tid)?),
            Service::SetVariable { tid, name, value } => {
                self.set_variable(*tid, name, *value)?;
                Value::Null
            }
            Service::ReadSource { tid } => {
                let (file, source) = self.read_source(*tid)?;
                json!({ "file": file, "source": source })
            }
            Service::FetchPending { .. } => {
                return Err(ServiceError::new(ErrorCode::WrongMode, "no event queue at this layer"))
            }
        };
        Ok(payload)
    }
}

/// A layer-0 client session: direct calls into an engine with this
/// session's evaluation ordinals.
pub struct LocalSession {
    engine: Engine,
    ordinals: Mutex<Ordinals>,
}

impl LocalSession {
    pub fn new(engine: Engine) -> LocalSession {
        LocalSession { engine, ordinals: Mutex::default() }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }
}

impl Endpoint for LocalSession {
    fn call(&self, service: &Service) -> Result<Value, ServiceError> {
        let mut payload = self.engine.handle(service)?;
        self.ordinals.lock().unwrap().stamp(service, &mut payload);
        Ok(payload)
    }
}

impl Endpoint for Engine {
    fn call(&self, service: &Service) -> Result<Value, ServiceError> {
        self.handle(service)
    }
}
