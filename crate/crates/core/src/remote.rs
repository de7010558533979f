//! Remote access to local engines: a node daemon serving one engine over
//! the envelope protocol, and [`L1Session`], which routes services by
//! global tid to the node owning the process.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::client::Client;
use crate::engine::Engine;
use crate::minipvm::Tid;
use crate::net::{self, ServerHandle};
use crate::service::{Endpoint, ErrorCode, Ordinals, Service, ServiceError};
use crate::wire::{self, DeliveryMode, Envelope, EventKind, EventRecord, FrameError, Kind, Role};

type Writer = Arc<Mutex<BufWriter<TcpStream>>>;

fn send(writer: &Writer, env: &Envelope) -> bool {
    wire::write_envelope(&mut *writer.lock().unwrap(), env).is_ok()
}

/// Reads the opening hello. On anything else the peer gets a frame error.
pub(crate) fn read_hello(reader: &mut impl std::io::BufRead, writer: &mut impl Write) -> Option<(Role, DeliveryMode)> {
    let refuse = |writer: &mut dyn Write, msg: &str| {
        let _ = wire::write_envelope(writer, &Envelope::frame_error(msg));
    };
    let env = match wire::read_envelope(reader) {
        Ok(Some(env)) => env,
        Ok(None) => return None,
        Err(e) => {
            refuse(writer, &e.to_string());
            return None;
        }
    };
    let text = |i: usize| env.args.get(i).and_then(Value::as_str).unwrap_or_default().to_string();
    let parsed = (env.kind == Kind::Hello).then(|| (text(0).parse::<Role>(), text(1).parse::<DeliveryMode>()));
    match parsed {
        Some((Ok(role), Ok(mode))) => Some((role, mode)),
        Some((Err(e), _)) | Some((_, Err(e))) => {
            refuse(writer, &e);
            None
        }
        None => {
            refuse(writer, "expected hello");
            None
        }
    }
}

/// Serves `engine` on `addr` until shut down.
pub fn serve_node(engine: Engine, addr: impl ToSocketAddrs) -> std::io::Result<ServerHandle> {
    let conn_ids = AtomicU64::new(0);
    net::serve(addr, "node", move |stream| {
        let n = conn_ids.fetch_add(1, Ordering::SeqCst) + 1;
        if let Err(e) = node_connection(engine.clone(), stream, format!("n{n}")) {
            log::debug!("node connection n{n} ended: {e}");
        }
    })
}

fn node_connection(engine: Engine, stream: TcpStream, client_id: String) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let writer: Writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let Some((_role, mode)) = read_hello(&mut reader, &mut *writer.lock().unwrap()) else {
        return Ok(());
    };
    send(&writer, &Envelope::welcome(&client_id));

    let closed = Arc::new(AtomicBool::new(false));
    if mode != DeliveryMode::Blocking {
        let events = engine.subscribe();
        let (writer, closed, client_id) = (writer.clone(), closed.clone(), client_id.clone());
        thread::spawn(move || {
            let mut seq = 0;
            while !closed.load(Ordering::SeqCst) {
                match events.recv_timeout(Duration::from_millis(100)) {
                    Ok(ev) => {
                        seq += 1;
                        let rec = EventRecord { seq, event: ev.kind, body: ev.body };
                        if !send(&writer, &Envelope::event(&client_id, 0, &rec)) {
                            break;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
        });
    }

    let ordinals = Arc::new(Mutex::new(Ordinals::default()));
    loop {
        let env = match wire::read_envelope(&mut reader) {
            Ok(Some(env)) => env,
            Ok(None) | Err(FrameError::Io(_)) => break,
            Err(FrameError::Malformed(msg)) => {
                send(&writer, &Envelope::frame_error(&msg));
                break;
            }
        };
        let rid = env.rid;
        let service_name = env.service.clone().unwrap_or_default();
        match env.kind {
            Kind::Request => {
                let service = match Service::parse(&service_name, &env.args) {
                    Ok(s) => s,
                    Err(e) => {
                        send(&writer, &Envelope::reply(&client_id, rid, Err(e)));
                        continue;
                    }
                };
                let blocks = matches!(service, Service::WaitStop { .. });
                let (engine, writer, ordinals, client_id) =
                    (engine.clone(), writer.clone(), ordinals.clone(), client_id.clone());
                let run = move || {
                    let result = engine.handle(&service).map(|mut payload| {
                        ordinals.lock().unwrap().stamp(&service, &mut payload);
                        payload
                    });
                    send(&writer, &Envelope::reply(&client_id, rid, result));
                };
                if blocks {
                    thread::spawn(run);
                } else {
                    run();
                }
            }
            Kind::Register => {
                let tid = env.args.first().and_then(Value::as_u64).and_then(|t| Tid::try_from(t).ok());
                let result = match (service_name.as_str(), tid) {
                    ("register_process", Some(tid)) => engine.register_process(tid).map(|t| json!({ "tid": t })),
                    ("bind_output", Some(tid)) => engine.bind_output(tid).map(|_| json!({ "tid": tid })),
                    (_, None) => Err(ServiceError::bad_args("registration needs a tid")),
                    (other, _) => {
                        Err(ServiceError::new(ErrorCode::UnknownService, format!("unknown registration `{other}`")))
                    }
                };
                send(&writer, &Envelope::reply(&client_id, rid, result));
            }
            other => {
                send(&writer, &Envelope::frame_error(&format!("unexpected {other:?} envelope")));
                break;
            }
        }
    }
    closed.store(true, Ordering::SeqCst);
    let _ = stream.shutdown(std::net::Shutdown::Both);
    Ok(())
}

/// Notification from some node, with tids already translated to global.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Event {
    pub kind: EventKind,
    pub tid: Tid,
    pub body: Value,
}

type Listener = Arc<dyn Fn(L1Event) + Send + Sync>;

struct NodeLink {
    endpoint: String,
    client: Client,
}

#[derive(Default)]
struct TidMap {
    last: Tid,
    global: BTreeMap<Tid, (usize, Tid)>,
    local: HashMap<(usize, Tid), Tid>,
}

#[derive(Default)]
struct L1Inner {
    nodes: Mutex<Vec<Arc<NodeLink>>>,
    map: Mutex<TidMap>,
    listener: Mutex<Option<Listener>>,
    ordinals: Mutex<Ordinals>,
}

/// Routing client over any number of node daemons.
#[derive(Clone, Default)]
pub struct L1Session {
    inner: Arc<L1Inner>,
}

fn unreachable(endpoint: &str, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::new(ErrorCode::NodeUnreachable, format!("{endpoint}: {e}"))
}

impl L1Session {
    pub fn new() -> L1Session {
        L1Session::default()
    }

    /// Receives Spawned events for newly adopted processes and every node
    /// notification, translated to global tids.
    pub fn set_listener(&self, listener: impl Fn(L1Event) + Send + Sync + 'static) {
        *self.inner.listener.lock().unwrap() = Some(Arc::new(listener));
    }

    pub fn endpoints(&self) -> Vec<String> {
        self.inner.nodes.lock().unwrap().iter().map(|n| n.endpoint.clone()).collect()
    }

    /// Connects to a node daemon and adopts its processes. Returns the node
    /// id (0-based, in registration order).
    pub fn register_node(&self, endpoint: &str) -> Result<usize, ServiceError> {
        if self.endpoints().iter().any(|e| e == endpoint) {
            return Err(ServiceError::new(ErrorCode::DuplicateEndpoint, format!("{endpoint} already registered")));
        }
        let client =
            Client::connect(endpoint, Role::Tool, DeliveryMode::EventAsync).map_err(|e| unreachable(endpoint, e))?;
        let link = Arc::new(NodeLink { endpoint: endpoint.to_string(), client: client.clone() });
        let node = {
            let mut nodes = self.inner.nodes.lock().unwrap();
            nodes.push(link);
            nodes.len() - 1
        };
        let weak = Arc::downgrade(&self.inner);
        thread::spawn(move || pump_events(weak, node, client));
        let list = self.call_node(node, &Service::ListTids)?;
        for rec in list.as_array().into_iter().flatten() {
            if let Some(ltid) = rec.get("tid").and_then(Value::as_u64) {
                let program = rec.get("program").and_then(Value::as_str).unwrap_or_default();
                self.adopt(node, ltid as Tid, program);
            }
        }
        Ok(node)
    }

    pub fn node_by_endpoint(&self, endpoint: &str) -> Option<usize> {
        self.endpoints().iter().position(|e| e == endpoint)
    }

    /// Global tid for a node-local process, assigning the next one on first
    /// sight.
    pub fn adopt(&self, node: usize, ltid: Tid, program: &str) -> Tid {
        let (gtid, fresh) = {
            let mut map = self.inner.map.lock().unwrap();
            match map.local.get(&(node, ltid)) {
                Some(g) => (*g, false),
                None => {
                    map.last += 1;
                    let g = map.last;
                    map.local.insert((node, ltid), g);
                    map.global.insert(g, (node, ltid));
                    (g, true)
                }
            }
        };
        if fresh {
            let body = json!({ "tid": gtid, "program": program, "l_tid": ltid, "node": node });
            self.inner.emit(L1Event { kind: EventKind::Spawned, tid: gtid, body });
        }
        gtid
    }

    pub fn resolve(&self, gtid: Tid) -> Result<(usize, Tid), ServiceError> {
        self.inner.map.lock().unwrap().global.get(&gtid).copied().ok_or_else(|| {
            ServiceError::new(ErrorCode::UnknownGlobalTid, format!("unknown global tid {gtid}"))
        })
    }

    fn call_node(&self, node: usize, service: &Service) -> Result<Value, ServiceError> {
        let link = self.inner.nodes.lock().unwrap().get(node).cloned().ok_or_else(|| {
            ServiceError::new(ErrorCode::NodeUnreachable, format!("no node {node}"))
        })?;
        link.client.call_service(service).map_err(|e| match e.code {
            ErrorCode::Disconnected => unreachable(&link.endpoint, e.message),
            _ => e,
        })
    }

    /// Forwards a per-process service to the node owning `gtid`.
    pub fn route(&self, gtid: Tid, service: &Service) -> Result<Value, ServiceError> {
        let (node, ltid) = self.resolve(gtid)?;
        self.call_node(node, &service.with_tid(ltid))
    }

    /// Executes a service without stamping this session's ordinals.
    pub fn execute(&self, service: &Service) -> Result<Value, ServiceError> {
        match service {
            Service::ListTids => {
                let count = self.inner.nodes.lock().unwrap().len();
                let mut rows = Vec::new();
                for node in 0..count {
                    let list = self.call_node(node, &Service::ListTids)?;
                    for mut rec in list.as_array().cloned().unwrap_or_default() {
                        let ltid = rec.get("tid").and_then(Value::as_u64).unwrap_or(0) as Tid;
                        let program = rec.get("program").and_then(Value::as_str).unwrap_or_default().to_string();
                        let gtid = self.adopt(node, ltid, &program);
                        rec["tid"] = json!(gtid);
                        rec["l_tid"] = json!(ltid);
                        rows.push((gtid, rec));
                    }
                }
                rows.sort_by_key(|(g, _)| *g);
                Ok(Value::Array(rows.into_iter().map(|(_, r)| r).collect()))
            }
            Service::Start { program } => {
                if self.inner.nodes.lock().unwrap().is_empty() {
                    return Err(ServiceError::new(ErrorCode::NodeUnreachable, "no node registered"));
                }
                let reply = self.call_node(0, service)?;
                let ltid = reply.get("tid").and_then(Value::as_u64).unwrap_or(0) as Tid;
                Ok(json!({ "tid": self.adopt(0, ltid, program) }))
            }
            Service::FetchPending { .. } => {
                Err(ServiceError::new(ErrorCode::WrongMode, "no event queue at this layer"))
            }
            other => {
                let gtid = other.tid().expect("per-process service");
                self.route(gtid, other)
            }
        }
    }

    /// Closes every node connection.
    pub fn close(&self) {
        for link in self.inner.nodes.lock().unwrap().iter() {
            link.client.close();
        }
    }
}

impl Endpoint for L1Session {
    fn call(&self, service: &Service) -> Result<Value, ServiceError> {
        let mut payload = self.execute(service)?;
        self.inner.ordinals.lock().unwrap().stamp(service, &mut payload);
        Ok(payload)
    }
}

impl L1Inner {
    fn emit(&self, event: L1Event) {
        let listener = self.listener.lock().unwrap().clone();
        if let Some(l) = listener {
            l(event);
        }
    }
}

/// Forwards one node's notifications in arrival order.
fn pump_events(inner: Weak<L1Inner>, node: usize, client: Client) {
    while !client.is_closed() {
        let Some((_, rec)) = client.next_event(Duration::from_millis(100)) else { continue };
        let Some(inner) = inner.upgrade() else { return };
        let session = L1Session { inner };
        let ltid = rec.body.get("tid").and_then(Value::as_u64).unwrap_or(0) as Tid;
        if rec.event == EventKind::Spawned {
            let program = rec.body.get("program").and_then(Value::as_str).unwrap_or_default().to_string();
            session.adopt(node, ltid, &program);
            continue;
        }
        let gtid = session.inner.map.lock().unwrap().local.get(&(node, ltid)).copied();
        let Some(gtid) = gtid else {
            log::debug!("dropping {:?} for unadopted tid {ltid} on node {node}", rec.event);
            continue;
        };
        let mut body = rec.body;
        body["tid"] = json!(gtid);
        session.inner.emit(L1Event { kind: rec.event, tid: gtid, body });
    }
}
