#![allow(dead_code)]

pub mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use fiddle::client::Client;
use fiddle::corpus;
use fiddle::engine::Engine;
use fiddle::hub::{serve_hub, Hub};
use fiddle::launcher::LauncherConfig;
use fiddle::minipvm::{TaskStatus, Tid};
use fiddle::remote::{serve_node, L1Session};
use fiddle::service::When;
use fiddle::wire::{DeliveryMode, Role};
use fiddle::ServerHandle;

pub const WAIT: Duration = Duration::from_secs(5);

pub fn corpus_engine() -> Engine {
    let engine = Engine::new(None);
    for p in corpus::programs() {
        engine.add_program(p);
    }
    engine
}

/// Node daemon, routing session and hub on loopback ports.
pub struct Stack {
    pub engine: Engine,
    pub node: ServerHandle,
    pub node_addr: String,
    pub l1: L1Session,
    pub hub: Hub,
    pub hub_server: ServerHandle,
    pub hub_addr: String,
}

impl Stack {
    pub fn new() -> Stack {
        let engine = corpus_engine();
        let node = serve_node(engine.clone(), "127.0.0.1:0").unwrap();
        let node_addr = node.local_addr().to_string();
        let l1 = L1Session::new();
        l1.register_node(&node_addr).unwrap();
        let hub = Hub::new(l1.clone());
        let hub_server = serve_hub(hub.clone(), "127.0.0.1:0").unwrap();
        let hub_addr = hub_server.local_addr().to_string();
        Stack { engine, node, node_addr, l1, hub, hub_server, hub_addr }
    }

    /// Points the engine's launcher at the node, the hub and `deipa`.
    pub fn configure_launcher(&self, deipa: Option<String>) -> LauncherConfig {
        let config = LauncherConfig {
            node: Some(self.node_addr.clone()),
            hub: Some(self.hub_addr.clone()),
            deipa,
            ..LauncherConfig::default()
        };
        self.engine.set_launcher(config.clone());
        config
    }

    pub fn client(&self, mode: DeliveryMode) -> Client {
        Client::connect(self.hub_addr.as_str(), Role::Tool, mode).unwrap()
    }

    pub fn shutdown(&self) {
        self.l1.close();
        self.hub_server.shutdown();
        self.node.shutdown();
    }
}

/// Every stop of every process when the echo application runs with a
/// Before and an After breakpoint on each statement line, per tid.
pub fn observe_all_stops(patch: Option<&reference::Patch>) -> BTreeMap<Tid, Vec<(TaskStatus, reference::Snapshot)>> {
    let engine = corpus_engine();
    engine.start("echo_client").unwrap();
    let mut stops: BTreeMap<Tid, Vec<(TaskStatus, reference::Snapshot)>> = BTreeMap::new();
    let mut armed = BTreeSet::new();
    let snapshot = |tid: Tid| {
        let t = engine.task_snapshot(tid).unwrap();
        reference::Snapshot { pc: t.pc, vars: t.vars, outbuf: t.outbuf, inbuf: t.inbuf.into_iter().collect() }
    };
    loop {
        let mut progressed = false;
        for info in engine.list_tids() {
            let tid = info.tid;
            if armed.insert(tid) {
                let program = engine.task_snapshot(tid).unwrap().program;
                for line in program.lines.keys() {
                    engine.set_breakpoint(tid, *line, When::Before, false).unwrap();
                    engine.set_breakpoint(tid, *line, When::After, false).unwrap();
                }
            }
            let status = engine.status(tid).unwrap().status;
            if status.is_terminal() {
                continue;
            }
            if status.is_stopped() {
                engine.resume(tid).unwrap();
            }
            let Ok(st) = engine.wait_stop(tid, Duration::from_millis(100)) else { continue };
            progressed = true;
            stops.entry(tid).or_default().push((st.status.clone(), snapshot(tid)));
            if let (Some(p), TaskStatus::StoppedBefore { line }) = (patch, &st.status) {
                if info.program == p.program && *line == p.line {
                    engine.set_variable(tid, p.var, p.value).unwrap();
                }
            }
        }
        if !progressed {
            return stops;
        }
    }
}
