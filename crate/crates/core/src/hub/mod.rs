//! Multi-client daemon over an [`L1Session`].
//!
//! Every request from every client is appended to one log and executed by
//! a single executor thread in log order. `wait_stop` is ordered like any
//! other request but waits on its own thread so it cannot hold up the
//! queue. Replies go back inline (blocking sessions) or as `Reply` events
//! (event sessions), pushed at once (`event_async`) or kept until the
//! client asks for them with `fetch_pending` (`event_sync`).
//!
//! Besides process notifications, sessions receive `PeerRequest` events
//! naming services executed by other clients. This notification is an
//! extension; the original engine did not deliver it.

mod gateway;
mod server;

pub use gateway::{serve_gateway, INDEX_HTML};
pub use server::serve_hub;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::minipvm::Tid;
use crate::remote::{L1Event, L1Session};
use crate::service::{ErrorCode, Ordinals, Service, ServiceError};
use crate::wire::{DeliveryMode, Envelope, EventKind, EventRecord, Kind, Role};

/// Pending-queue length past which a session is reported as a slow consumer.
pub const PENDING_WARN: usize = 4096;
/// Number of request-log entries kept for inspection.
pub const LOG_CAPACITY: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub order: u64,
    pub client: String,
    pub rid: u64,
    pub service: String,
    pub args: Vec<Value>,
}

struct Session {
    mode: DeliveryMode,
    subscriptions: HashSet<EventKind>,
    pending: VecDeque<(u64, EventRecord)>,
    sink: Sender<Envelope>,
    last_rid: u64,
    ordinals: Ordinals,
    warned: bool,
}

enum Work {
    Service(Service),
    Register { node: String, ltid: Tid, program: String },
}

struct Job {
    client: String,
    rid: u64,
    work: Work,
}

struct Sessions {
    last_client: u64,
    last_seq: u64,
    last_order: u64,
    map: BTreeMap<String, Session>,
    jobs: Sender<Job>,
}

struct HubInner {
    l1: L1Session,
    sessions: Mutex<Sessions>,
    log: Mutex<VecDeque<LogEntry>>,
}

#[derive(Clone)]
pub struct Hub {
    inner: Arc<HubInner>,
}

impl Session {
    fn deliver(&mut self, client: &str, rid: u64, rec: EventRecord) {
        match self.mode {
            DeliveryMode::EventSync => {
                self.pending.push_back((rid, rec));
                if self.pending.len() > PENDING_WARN && !self.warned {
                    self.warned = true;
                    log::warn!("session {client} has {} undelivered events", self.pending.len());
                }
            }
            _ => {
                let _ = self.sink.send(Envelope::event(client, rid, &rec));
            }
        }
    }
}

impl Sessions {
    fn next_seq(&mut self) -> u64 {
        self.last_seq += 1;
        self.last_seq
    }

    /// Sends a notification to every subscribed session except `skip`.
    fn fan_out(&mut self, kind: EventKind, body: Value, skip: Option<&str>) {
        let seq = self.next_seq();
        for (id, s) in self.map.iter_mut() {
            if Some(id.as_str()) != skip && s.subscriptions.contains(&kind) {
                s.deliver(id, 0, EventRecord { seq, event: kind, body: body.clone() });
            }
        }
    }
}

fn reply_body(rid: u64, result: &Result<Value, ServiceError>) -> Value {
    match result {
        Ok(payload) => json!({ "rid": rid, "status": "ok", "payload": payload }),
        Err(e) => json!({ "rid": rid, "status": e.code.to_string(), "payload": { "message": e.message } }),
    }
}

impl Hub {
    pub fn new(l1: L1Session) -> Hub {
        let (jobs, queue) = mpsc::channel();
        let inner = Arc::new(HubInner {
            l1: l1.clone(),
            sessions: Mutex::new(Sessions {
                last_client: 0,
                last_seq: 0,
                last_order: 0,
                map: BTreeMap::new(),
                jobs,
            }),
            log: Mutex::new(VecDeque::new()),
        });
        let weak = Arc::downgrade(&inner);
        l1.set_listener(move |ev: L1Event| {
            if let Some(inner) = weak.upgrade() {
                inner.sessions.lock().unwrap().fan_out(ev.kind, ev.body, None);
            }
        });
        let hub = Hub { inner };
        let weak = Arc::downgrade(&hub.inner);
        thread::Builder::new().name("hub-executor".into()).spawn(move || executor(weak, queue)).expect("spawn");
        hub
    }

    pub fn l1(&self) -> &L1Session {
        &self.inner.l1
    }

    /// Creates a session; everything addressed to it arrives on the returned
    /// receiver as ready-to-send envelopes.
    pub fn open_session(&self, role: Role, mode: DeliveryMode) -> (String, Receiver<Envelope>) {
        let (sink, rx) = mpsc::channel();
        let mut s = self.inner.sessions.lock().unwrap();
        s.last_client += 1;
        let id = format!("c{}", s.last_client);
        let subscriptions = match (role, mode) {
            (Role::Tool, DeliveryMode::EventAsync | DeliveryMode::EventSync) => EventKind::NOTIFICATIONS.into(),
            _ => HashSet::new(),
        };
        s.map.insert(
            id.clone(),
            Session {
                mode,
                subscriptions,
                pending: VecDeque::new(),
                sink,
                last_rid: 0,
                ordinals: Ordinals::default(),
                warned: false,
            },
        );
        log::info!("session {id} opened ({role}, {mode})");
        (id, rx)
    }

    pub fn close_session(&self, id: &str) {
        if self.inner.sessions.lock().unwrap().map.remove(id).is_some() {
            log::info!("session {id} closed");
        }
    }

    pub fn sessions(&self) -> Vec<String> {
        self.inner.sessions.lock().unwrap().map.keys().cloned().collect()
    }

    /// Changes which notifications a session receives.
    pub fn subscribe(&self, id: &str, kinds: &[EventKind]) {
        if let Some(s) = self.inner.sessions.lock().unwrap().map.get_mut(id) {
            s.subscriptions = kinds.iter().copied().collect();
        }
    }

    /// The request log, oldest first.
    pub fn request_log(&self) -> Vec<LogEntry> {
        self.inner.log.lock().unwrap().iter().cloned().collect()
    }

    /// Accepts one envelope from session `id`. Requests are ordered and
    /// queued; the outcome arrives on the session's receiver.
    pub fn handle_envelope(&self, id: &str, env: Envelope) {
        let mut s = self.inner.sessions.lock().unwrap();
        let s = &mut *s;
        let Some(session) = s.map.get_mut(id) else { return };
        let rid = env.rid;
        let name = env.service.clone().unwrap_or_default();
        let immediate = |session: &Session, result| {
            let _ = session.sink.send(Envelope::reply(id, rid, result));
        };
        if env.kind != Kind::Request && env.kind != Kind::Register {
            let msg = format!("unexpected {:?} envelope", env.kind);
            return immediate(session, Err(ServiceError::bad_args(msg)));
        }
        if rid <= session.last_rid {
            let msg = format!("request id {rid} not above {}", session.last_rid);
            return immediate(session, Err(ServiceError::new(ErrorCode::BadRid, msg)));
        }
        session.last_rid = rid;

        let work = if env.kind == Kind::Register {
            let text = |i: usize| env.args.get(i).and_then(Value::as_str).unwrap_or_default().to_string();
            let ltid = env.args.get(1).and_then(Value::as_u64).and_then(|t| Tid::try_from(t).ok());
            match (name.as_str(), ltid) {
                ("register", Some(ltid)) => Work::Register { node: text(0), ltid, program: text(2) },
                _ => return immediate(session, Err(ServiceError::bad_args("expected register [node, tid, program]"))),
            }
        } else {
            match Service::parse(&name, &env.args) {
                Ok(Service::FetchPending { max }) => {
                    let result = if session.mode == DeliveryMode::EventSync {
                        let n = max.min(session.pending.len());
                        let items: Vec<Value> = session
                            .pending
                            .drain(..n)
                            .map(|(rid, rec)| json!({ "rid": rid, "seq": rec.seq, "event": rec.event, "body": rec.body }))
                            .collect();
                        Ok(Value::Array(items))
                    } else {
                        Err(ServiceError::new(ErrorCode::WrongMode, format!("session {id} is {}", session.mode)))
                    };
                    return immediate(session, result);
                }
                Ok(service) => Work::Service(service),
                Err(e) => return immediate(session, Err(e)),
            }
        };

        s.last_order += 1;
        let entry = LogEntry { order: s.last_order, client: id.to_string(), rid, service: name, args: env.args };
        {
            let mut log = self.inner.log.lock().unwrap();
            if log.len() == LOG_CAPACITY {
                log.pop_front();
            }
            log.push_back(entry);
        }
        let _ = s.jobs.send(Job { client: id.to_string(), rid, work });
    }
}

fn executor(hub: std::sync::Weak<HubInner>, queue: Receiver<Job>) {
    for job in queue {
        let Some(inner) = hub.upgrade() else { return };
        match job.work {
            Work::Service(service @ Service::WaitStop { .. }) => {
                thread::spawn(move || {
                    let result = inner.l1.execute(&service);
                    complete(&inner, &job.client, job.rid, Some(service), result);
                });
            }
            Work::Service(service) => {
                let result = inner.l1.execute(&service);
                complete(&inner, &job.client, job.rid, Some(service), result);
            }
            Work::Register { node, ltid, program } => {
                let node_id = if node.is_empty() { Some(0) } else { inner.l1.node_by_endpoint(&node) };
                let result = match node_id {
                    Some(n) if n < inner.l1.endpoints().len() => Ok(json!({ "tid": inner.l1.adopt(n, ltid, &program) })),
                    _ => Err(ServiceError::new(ErrorCode::NodeUnreachable, format!("unknown node `{node}`"))),
                };
                complete(&inner, &job.client, job.rid, None, result);
            }
        }
    }
}

fn complete(inner: &HubInner, client: &str, rid: u64, service: Option<Service>, mut result: Result<Value, ServiceError>) {
    let mut s = inner.sessions.lock().unwrap();
    let Some(session) = s.map.get_mut(client) else { return };
    if let (Some(svc), Ok(payload)) = (&service, &mut result) {
        session.ordinals.stamp(svc, payload);
    }
    match (&service, session.mode) {
        (None, _) | (_, DeliveryMode::Blocking) => {
            let _ = session.sink.send(Envelope::reply(client, rid, result));
        }
        _ => {
            let body = reply_body(rid, &result);
            let seq = s.next_seq();
            let session = s.map.get_mut(client).unwrap();
            session.deliver(client, rid, EventRecord { seq, event: EventKind::Reply, body });
        }
    }
    if let Some(svc) = service {
        let body = json!({ "client": client, "service": svc.name(), "tid": svc.tid(), "args": svc.args() });
        s.fan_out(EventKind::PeerRequest, body, Some(client));
    }
}
