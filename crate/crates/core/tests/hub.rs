mod common;

use std::io::BufReader;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use fiddle::client::{reply_body_result, Client};
use fiddle::service::ErrorCode;
use fiddle::wire::{self, DeliveryMode, Envelope, EventKind, EventRecord, Kind, Role};
use serde_json::json;

use common::{Stack, WAIT};

fn events_until(client: &Client, want: impl Fn(&EventRecord) -> bool) -> Vec<(u64, EventRecord)> {
    let deadline = Instant::now() + WAIT;
    let mut seen = Vec::new();
    while Instant::now() < deadline {
        if let Some((rid, rec)) = client.next_event(Duration::from_millis(50)) {
            let done = want(&rec);
            seen.push((rid, rec));
            if done {
                return seen;
            }
        }
    }
    panic!("wanted event never arrived; saw {seen:?}");
}

#[test]
fn blocking_calls_return_replies_inline() {
    let stack = Stack::new();
    let client = stack.client(DeliveryMode::Blocking);
    assert_eq!(client.call("start", vec![json!("echo_client")]).unwrap(), json!({ "tid": 1 }));
    let status = client.call("status", vec![json!(1)]).unwrap();
    assert_eq!(status, json!({ "status": { "state": "created" }, "pc": 11 }));
    let err = client.call("evaluate", vec![json!(5), json!("x")]).unwrap_err();
    assert_eq!(err.code, ErrorCode::UnknownGlobalTid);
    // blocking sessions get no notifications
    assert!(client.next_event(Duration::from_millis(100)).is_none());
    stack.shutdown();
}

#[test]
fn async_sessions_see_notifications_and_peer_requests() {
    let stack = Stack::new();
    let watcher = stack.client(DeliveryMode::EventAsync);
    let actor = stack.client(DeliveryMode::Blocking);
    actor.call("start", vec![json!("echo_client")]).unwrap();
    actor.call("set_breakpoint", vec![json!(1), json!(24), json!(1)]).unwrap();
    actor.call("resume", vec![json!(1)]).unwrap();

    let seen = events_until(&watcher, |r| r.event == EventKind::Stopped);
    let kinds: Vec<EventKind> = seen.iter().map(|(_, r)| r.event).collect();
    assert!(kinds.contains(&EventKind::Spawned), "{kinds:?}");
    let peer = seen.iter().find(|(_, r)| r.event == EventKind::PeerRequest).unwrap();
    assert_eq!(peer.1.body["client"], json!(actor.client_id()));
    assert_eq!(peer.1.body["service"], json!("start"));
    let seqs: Vec<u64> = seen.iter().map(|(_, r)| r.seq).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
    let stopped = &seen.last().unwrap().1;
    assert_eq!(stopped.body["tid"], json!(1));
    stack.shutdown();
}

#[test]
fn fetch_pending_only_in_sync_mode() {
    let stack = Stack::new();
    let client = stack.client(DeliveryMode::EventAsync);
    assert_eq!(client.fetch_pending(10).unwrap_err().code, ErrorCode::WrongMode);

    let sync = stack.client(DeliveryMode::EventSync);
    let rid = sync.submit("list_tids", vec![]).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let first = sync.fetch_pending(1).unwrap();
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].0, rid);
    assert_eq!(reply_body_result(&first[0].1.body).unwrap(), json!([]));
    assert!(sync.fetch_pending(10).unwrap().is_empty());
    stack.shutdown();
}

#[test]
fn request_ids_must_increase() {
    let stack = Stack::new();
    let s = TcpStream::connect(&stack.hub_addr).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let mut w = s;
    wire::write_envelope(&mut w, &Envelope::hello(Role::Tool, DeliveryMode::Blocking)).unwrap();
    let id = wire::read_envelope(&mut r).unwrap().unwrap().client;
    for (rid, want) in [(5, "ok"), (5, "bad_rid"), (3, "bad_rid"), (6, "ok")] {
        wire::write_envelope(&mut w, &Envelope::request(&id, rid, "list_tids", vec![])).unwrap();
        let reply = wire::read_envelope(&mut r).unwrap().unwrap();
        assert_eq!((reply.kind, reply.rid, reply.status.as_deref()), (Kind::Reply, rid, Some(want)));
    }
    stack.shutdown();
}

#[test]
fn register_adopts_a_node_process() {
    let stack = Stack::new();
    let ltid = stack.engine.start("echo_server").unwrap();
    let launcher = Client::connect(stack.hub_addr.as_str(), Role::Launcher, DeliveryMode::Blocking).unwrap();
    let reply = launcher.register("register", vec![json!(stack.node_addr), json!(ltid), json!("echo_server")]).unwrap();
    let gtid = reply["tid"].as_u64().unwrap() as u32;
    assert_eq!(stack.l1.resolve(gtid).unwrap(), (0, ltid));
    // registering again returns the same global tid
    let again = launcher.register("register", vec![json!(stack.node_addr), json!(ltid), json!("echo_server")]).unwrap();
    assert_eq!(again["tid"], json!(gtid));
    let err = launcher.register("register", vec![json!("10.0.0.1:1"), json!(ltid), json!("x")]).unwrap_err();
    assert_eq!(err.code, ErrorCode::NodeUnreachable);
    stack.shutdown();
}

#[test]
fn request_log_is_the_execution_order() {
    let stack = Stack::new();
    let a = stack.client(DeliveryMode::Blocking);
    let b = stack.client(DeliveryMode::Blocking);
    a.call("start", vec![json!("echo_client")]).unwrap();
    b.call("set_variable", vec![json!(1), json!("value"), json!(9)]).unwrap();
    a.call("evaluate", vec![json!(1), json!("value")]).unwrap();
    let log = stack.hub.request_log();
    let rows: Vec<(u64, &str, &str)> = log.iter().map(|e| (e.order, e.client.as_str(), e.service.as_str())).collect();
    assert_eq!(
        rows,
        vec![(1, a.client_id(), "start"), (2, b.client_id(), "set_variable"), (3, a.client_id(), "evaluate")]
    );
    assert_eq!(log[1].args, vec![json!(1), json!("value"), json!(9)]);
    stack.shutdown();
}

#[test]
fn closing_a_session_drops_it() {
    let stack = Stack::new();
    let client = stack.client(DeliveryMode::EventAsync);
    let id = client.client_id().to_string();
    assert!(stack.hub.sessions().contains(&id));
    client.close();
    let deadline = Instant::now() + WAIT;
    while stack.hub.sessions().contains(&id) && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert!(!stack.hub.sessions().contains(&id));
    assert_eq!(client.call("list_tids", vec![]).unwrap_err().code, ErrorCode::Disconnected);
    stack.shutdown();
}
