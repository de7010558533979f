//! Spawn capture. When a task spawns a child in capture mode, a launcher
//! agent brings the child under debugger control before it runs:
//!
//! 1. open a channel to the engine (the node daemon, or in-process);
//! 2. register the child with the engine and, when a hub is configured,
//!    obtain its global tid;
//! 3. announce the child to Deipa, if an announce endpoint is configured;
//! 4. bind the child's printed output to the engine's Output events;
//! 5. hand the child over to the debugger and let the spawner continue.
//!
//! The spawner stays parked until step 5, so the capture is complete by
//! the time the spawn statement finishes.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::client::Client;
use crate::engine::Engine;
use crate::minipvm::Tid;
use crate::service::ServiceError;
use crate::wire::{DeliveryMode, Role};

pub const ENV_HUB: &str = "FIDDLE_ENDPOINT";
pub const ENV_DEIPA: &str = "DEIPA_ENDPOINT";
pub const ENV_NODE: &str = "FIDDLE_NODE_ENDPOINT";

/// Step-by-step record of every capture, shared by all launcher agents of
/// one engine.
#[derive(Debug, Clone, Default)]
pub struct LaunchLog(Arc<Mutex<Vec<String>>>);

impl LaunchLog {
    fn push(&self, line: String) {
        log::info!("{line}");
        self.0.lock().unwrap().push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.0.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LauncherConfig {
    /// Node daemon serving this engine; without it the channel is in-process.
    pub node: Option<String>,
    pub hub: Option<String>,
    pub deipa: Option<String>,
    pub log: LaunchLog,
}

impl LauncherConfig {
    pub fn from_env() -> LauncherConfig {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        LauncherConfig { node: var(ENV_NODE), hub: var(ENV_HUB), deipa: var(ENV_DEIPA), log: LaunchLog::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRequest {
    pub spawner: Tid,
    pub child: Tid,
    pub program: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnounceMsg {
    pub program: String,
    pub global_tid: Tid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub local_tid: Tid,
    pub global_tid: Tid,
    pub vid: Option<u32>,
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("engine unreachable: {0}")]
    EngineUnreachable(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

enum Channel<'a> {
    InProcess(&'a Engine),
    Node(Client),
}

impl Channel<'_> {
    fn register_process(&self, tid: Tid) -> Result<Tid, LaunchError> {
        match self {
            Channel::InProcess(engine) => Ok(engine.register_process(tid)?),
            Channel::Node(client) => tid_of(&client.register("register_process", vec![json!(tid)])?),
        }
    }

    fn bind_output(&self, tid: Tid) -> Result<(), LaunchError> {
        match self {
            Channel::InProcess(engine) => Ok(engine.bind_output(tid)?),
            Channel::Node(client) => client.register("bind_output", vec![json!(tid)]).map(|_| ()).map_err(Into::into),
        }
    }
}

fn tid_of(payload: &Value) -> Result<Tid, LaunchError> {
    payload
        .get("tid")
        .and_then(Value::as_u64)
        .and_then(|t| Tid::try_from(t).ok())
        .ok_or_else(|| LaunchError::Unreachable(format!("reply without tid: {payload}")))
}

/// Announces a captured process to Deipa and returns the vid it assigned.
pub fn announce_to_deipa(endpoint: &str, msg: &AnnounceMsg) -> Result<u32, LaunchError> {
    let client = Client::connect(endpoint, Role::Launcher, DeliveryMode::Blocking)
        .map_err(|e| LaunchError::Unreachable(format!("{endpoint}: {e}")))?;
    let reply = client.register("announce", vec![json!(msg.program), json!(msg.global_tid)]);
    client.close();
    let payload = reply?;
    payload
        .get("vid")
        .and_then(Value::as_u64)
        .map(|v| v as u32)
        .ok_or_else(|| LaunchError::Unreachable(format!("announce reply without vid: {payload}")))
}

/// Steps 1 to 4 for one captured child.
pub fn capture_spawn(engine: &Engine, config: &LauncherConfig, req: &CaptureRequest) -> Result<Captured, LaunchError> {
    let tag = format!("launcher[{}]", req.child);
    let log = &config.log;

    let channel = match &config.node {
        Some(ep) => Channel::Node(
            Client::connect(ep.as_str(), Role::Launcher, DeliveryMode::Blocking)
                .map_err(|e| LaunchError::EngineUnreachable(format!("{ep}: {e}")))?,
        ),
        None => Channel::InProcess(engine),
    };
    log.push(format!("{tag}: 1 channel open ({})", config.node.as_deref().unwrap_or("in-process")));

    let local_tid = channel.register_process(req.child)?;
    let global_tid = match &config.hub {
        Some(ep) => {
            let hub = Client::connect(ep.as_str(), Role::Launcher, DeliveryMode::Blocking)
                .map_err(|e| LaunchError::EngineUnreachable(format!("{ep}: {e}")))?;
            let node = config.node.clone().unwrap_or_default();
            let reply = hub.register("register", vec![json!(node), json!(local_tid), json!(req.program)]);
            hub.close();
            tid_of(&reply?)?
        }
        None => local_tid,
    };
    log.push(format!("{tag}: 2 registered {} as tid {global_tid}", req.program));

    let msg = AnnounceMsg { program: req.program.clone(), global_tid };
    let vid = match &config.deipa {
        Some(ep) => match announce_to_deipa(ep, &msg) {
            Ok(vid) => {
                log.push(format!("{tag}: 3 announced, vid {vid}"));
                Some(vid)
            }
            Err(e) => {
                log.push(format!("{tag}: 3 announce failed: {e}"));
                None
            }
        },
        None => {
            log.push(format!("{tag}: 3 announce skipped"));
            None
        }
    };

    channel.bind_output(local_tid)?;
    log.push(format!("{tag}: 4 output bound"));
    if let Channel::Node(client) = channel {
        client.close();
    }
    Ok(Captured { local_tid, global_tid, vid })
}

/// Runs a whole capture and releases the spawner (step 5). A failed capture
/// errors the spawner.
pub fn run_capture(engine: &Engine, config: &LauncherConfig, req: CaptureRequest) {
    let result = capture_spawn(engine, config, &req);
    match &result {
        Ok(_) => config.log.push(format!("launcher[{}]: 5 handed over", req.child)),
        Err(e) => config.log.push(format!("launcher[{}]: capture failed: {e}", req.child)),
    }
    engine.complete_capture(req.spawner, result.map(|_| ()).map_err(|e| e.to_string()));
}
