//! Client side of the envelope protocol, shared by consoles, Deipa, the
//! launcher and the routing library.
//!
//! One reader thread per connection matches replies to waiting callers by
//! request id. Events that nobody waits for go to the registered handler
//! (each invocation on a fresh thread) or, without a handler, to a queue
//! drained with [`Client::next_event`].

use std::collections::{HashMap, VecDeque};
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::service::{Endpoint, ErrorCode, Service, ServiceError};
use crate::wire::{self, DeliveryMode, Envelope, EventKind, EventRecord, Kind, RequestIds, Role};

type Handler = Arc<dyn Fn(u64, EventRecord) + Send + Sync>;
type Reply = Result<Value, ServiceError>;

struct Shared {
    writer: Mutex<BufWriter<TcpStream>>,
    client_id: String,
    mode: DeliveryMode,
    ids: Mutex<RequestIds>,
    waiters: Mutex<HashMap<u64, Sender<Reply>>>,
    handler: Mutex<Option<Handler>>,
    queue: Mutex<VecDeque<(u64, EventRecord)>>,
    queued: Condvar,
    stray: AtomicU64,
    closed: AtomicBool,
}

#[derive(Clone)]
pub struct Client {
    shared: Arc<Shared>,
}

/// How long a sync-mode call sleeps between empty `fetch_pending` polls.
const SYNC_POLL: Duration = Duration::from_millis(2);

fn disconnected() -> ServiceError {
    ServiceError::new(ErrorCode::Disconnected, "connection closed")
}

/// Result carried by a `Reply` event body.
pub fn reply_body_result(body: &Value) -> Reply {
    let env = Envelope {
        kind: Kind::Reply,
        client: String::new(),
        rid: 0,
        service: None,
        args: Vec::new(),
        status: body.get("status").and_then(Value::as_str).map(str::to_string),
        payload: body.get("payload").cloned().unwrap_or(Value::Null),
    };
    env.into_result()
}

impl Client {
    /// Connects and performs the hello handshake.
    pub fn connect(addr: impl ToSocketAddrs, role: Role, mode: DeliveryMode) -> std::io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        wire::write_envelope(&mut writer, &Envelope::hello(role, mode))?;
        let hello = wire::read_envelope(&mut reader)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "no hello reply"))?;
        if hello.kind != Kind::Hello {
            let msg = hello.payload.get("message").and_then(Value::as_str).unwrap_or("handshake refused");
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()));
        }
        let shared = Arc::new(Shared {
            writer: Mutex::new(writer),
            client_id: hello.client,
            mode,
            ids: Mutex::new(RequestIds::new()),
            waiters: Mutex::new(HashMap::new()),
            handler: Mutex::new(None),
            queue: Mutex::new(VecDeque::new()),
            queued: Condvar::new(),
            stray: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        let reader_shared = shared.clone();
        thread::Builder::new()
            .name(format!("client-{}", shared.client_id))
            .spawn(move || read_loop(reader_shared, reader))?;
        Ok(Client { shared })
    }

    pub fn client_id(&self) -> &str {
        &self.shared.client_id
    }

    pub fn mode(&self) -> DeliveryMode {
        self.shared.mode
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }

    /// Installs the handler for events nobody is waiting on. Each event is
    /// handled on its own thread with the envelope's request id.
    pub fn set_handler(&self, handler: impl Fn(u64, EventRecord) + Send + Sync + 'static) {
        *self.shared.handler.lock().unwrap() = Some(Arc::new(handler));
    }

    /// Replies and reply events that matched no outstanding request.
    pub fn stray_replies(&self) -> u64 {
        self.shared.stray.load(Ordering::SeqCst)
    }

    fn send(&self, env: &Envelope) -> Result<(), ServiceError> {
        if self.is_closed() {
            return Err(disconnected());
        }
        let mut w = self.shared.writer.lock().unwrap();
        wire::write_envelope(&mut *w, env).map_err(|_| disconnected())
    }

    fn issue(&self, kind: Kind, service: &str, args: Vec<Value>, wait: bool) -> Result<(u64, Option<mpsc::Receiver<Reply>>), ServiceError> {
        // rid allocation and the write happen under one lock so rids reach
        // the server in increasing order
        let mut ids = self.shared.ids.lock().unwrap();
        let rid = ids.next_request_id();
        let rx = wait.then(|| {
            let (tx, rx) = mpsc::channel();
            self.shared.waiters.lock().unwrap().insert(rid, tx);
            rx
        });
        let env = match kind {
            Kind::Register => Envelope::register(&self.shared.client_id, rid, service, args),
            _ => Envelope::request(&self.shared.client_id, rid, service, args),
        };
        if let Err(e) = self.send(&env) {
            self.shared.waiters.lock().unwrap().remove(&rid);
            return Err(e);
        }
        Ok((rid, rx))
    }

    fn await_reply(&self, rid: u64, rx: mpsc::Receiver<Reply>) -> Reply {
        if self.shared.mode != DeliveryMode::EventSync {
            return rx.recv().unwrap_or_else(|_| Err(disconnected()));
        }
        loop {
            if let Ok(reply) = rx.try_recv() {
                return reply;
            }
            let fetched = self.fetch_pending(usize::MAX)?;
            let mut mine = None;
            for (erid, rec) in fetched {
                if rec.event == EventKind::Reply && erid == rid && mine.is_none() {
                    mine = Some(reply_body_result(&rec.body));
                } else {
                    self.dispatch_event(erid, rec);
                }
            }
            if let Some(reply) = mine {
                self.shared.waiters.lock().unwrap().remove(&rid);
                return reply;
            }
            if self.is_closed() {
                return Err(disconnected());
            }
            thread::sleep(SYNC_POLL);
        }
    }

    /// Issues a request and blocks until its reply arrives, whatever the
    /// delivery mode.
    pub fn call(&self, service: &str, args: Vec<Value>) -> Reply {
        let (rid, rx) = self.issue(Kind::Request, service, args, true)?;
        self.await_reply(rid, rx.unwrap())
    }

    pub fn call_service(&self, service: &Service) -> Reply {
        self.call(service.name(), service.args())
    }

    /// Issues a launcher registration and waits for its reply.
    pub fn register(&self, service: &str, args: Vec<Value>) -> Reply {
        let (rid, rx) = self.issue(Kind::Register, service, args, true)?;
        self.await_reply(rid, rx.unwrap())
    }

    /// Issues a request without waiting. Its `Reply` event goes to the
    /// handler or the event queue like any other event.
    pub fn submit(&self, service: &str, args: Vec<Value>) -> Result<u64, ServiceError> {
        self.issue(Kind::Request, service, args, false).map(|(rid, _)| rid)
    }

    /// Drains up to `max` pending events (event_sync sessions only).
    pub fn fetch_pending(&self, max: usize) -> Result<Vec<(u64, EventRecord)>, ServiceError> {
        let max = if max == usize::MAX { json!(u64::MAX) } else { json!(max) };
        let (_, rx) = self.issue(Kind::Request, "fetch_pending", vec![max], true)?;
        let payload = rx.unwrap().recv().unwrap_or_else(|_| Err(disconnected()))?;
        let items: Vec<Value> = serde_json::from_value(payload)
            .map_err(|e| ServiceError::new(ErrorCode::Internal, e.to_string()))?;
        items
            .into_iter()
            .map(|item| {
                let rid = item.get("rid").and_then(Value::as_u64).unwrap_or(0);
                serde_json::from_value(item)
                    .map(|rec| (rid, rec))
                    .map_err(|e| ServiceError::new(ErrorCode::Internal, e.to_string()))
            })
            .collect()
    }

    /// Next queued event, waiting up to `timeout`.
    pub fn next_event(&self, timeout: Duration) -> Option<(u64, EventRecord)> {
        let deadline = Instant::now() + timeout;
        let mut q = self.shared.queue.lock().unwrap();
        loop {
            if let Some(ev) = q.pop_front() {
                return Some(ev);
            }
            let now = Instant::now();
            if now >= deadline || self.is_closed() {
                return None;
            }
            q = self.shared.queued.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    fn dispatch_event(&self, rid: u64, rec: EventRecord) {
        dispatch_event(&self.shared, rid, rec)
    }

    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Ok(w) = self.shared.writer.lock() {
            let _ = w.get_ref().shutdown(Shutdown::Both);
        }
    }
}

impl Endpoint for Client {
    fn call(&self, service: &Service) -> Reply {
        self.call_service(service)
    }
}

fn dispatch_event(shared: &Arc<Shared>, rid: u64, rec: EventRecord) {
    let handler = shared.handler.lock().unwrap().clone();
    match handler {
        Some(h) => {
            thread::spawn(move || h(rid, rec));
        }
        None => {
            shared.queue.lock().unwrap().push_back((rid, rec));
            shared.queued.notify_all();
        }
    }
}

fn read_loop(shared: Arc<Shared>, mut reader: BufReader<TcpStream>) {
    loop {
        let env = match wire::read_envelope(&mut reader) {
            Ok(Some(env)) => env,
            Ok(None) | Err(_) => break,
        };
        match env.kind {
            Kind::Reply => {
                let waiter = shared.waiters.lock().unwrap().remove(&env.rid);
                match waiter {
                    Some(tx) => {
                        let _ = tx.send(env.into_result());
                    }
                    None => {
                        shared.stray.fetch_add(1, Ordering::SeqCst);
                    }
                }
            }
            Kind::Event => {
                if env.status.as_deref() == Some("frame_error") {
                    log::warn!("server reported a frame error: {}", env.payload);
                    break;
                }
                let Some(rec) = env.event_record() else { continue };
                if rec.event == EventKind::Reply {
                    let waiter = shared.waiters.lock().unwrap().remove(&env.rid);
                    if let Some(tx) = waiter {
                        let _ = tx.send(reply_body_result(&rec.body));
                        continue;
                    }
                }
                dispatch_event(&shared, env.rid, rec);
            }
            _ => log::debug!("ignoring {:?} envelope", env.kind),
        }
    }
    shared.closed.store(true, Ordering::SeqCst);
    // dropping the senders wakes every blocked caller with a disconnect
    shared.waiters.lock().unwrap().clear();
    shared.queued.notify_all();
}
