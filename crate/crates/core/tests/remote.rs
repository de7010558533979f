mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use fiddle::remote::{serve_node, L1Event, L1Session};
use fiddle::service::{Endpoint, ErrorCode, Service, When};
use fiddle::wire::{self, DeliveryMode, Envelope, EventKind, Kind, Role};
use serde_json::{json, Value};

use common::{corpus_engine, WAIT};

#[test]
fn global_tids_follow_registration_order() {
    let (a, b) = (corpus_engine(), corpus_engine());
    a.start("echo_client").unwrap();
    b.start("echo_server").unwrap();
    b.start("echo_client").unwrap();
    let na = serve_node(a.clone(), "127.0.0.1:0").unwrap();
    let nb = serve_node(b.clone(), "127.0.0.1:0").unwrap();

    let l1 = L1Session::new();
    assert_eq!(l1.register_node(&nb.local_addr().to_string()).unwrap(), 0);
    assert_eq!(l1.register_node(&na.local_addr().to_string()).unwrap(), 1);
    assert_eq!(l1.resolve(1).unwrap(), (0, 1));
    assert_eq!(l1.resolve(2).unwrap(), (0, 2));
    assert_eq!(l1.resolve(3).unwrap(), (1, 1));
    assert_eq!(l1.resolve(4).unwrap_err().code, ErrorCode::UnknownGlobalTid);

    let rows = l1.call(&Service::ListTids).unwrap();
    let cols: Vec<(u64, u64, &str)> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["tid"].as_u64().unwrap(), r["l_tid"].as_u64().unwrap(), r["program"].as_str().unwrap()))
        .collect();
    assert_eq!(cols, vec![(1, 1, "echo_server"), (2, 2, "echo_client"), (3, 1, "echo_client")]);

    // a breakpoint set through the router lands on the owning engine
    l1.call(&Service::SetBreakpoint { tid: 3, line: 24, when: When::Before, one_shot: true }).unwrap();
    assert_eq!(a.breakpoints(1).unwrap().len(), 1);
    assert!(b.breakpoints(1).unwrap().is_empty());
    l1.close();
    na.shutdown();
    nb.shutdown();
}

#[test]
fn start_goes_to_the_first_node_and_is_adopted() {
    let engine = corpus_engine();
    let node = serve_node(engine.clone(), "127.0.0.1:0").unwrap();
    let l1 = L1Session::new();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = seen.clone();
    l1.set_listener(move |e: L1Event| sink.lock().unwrap().push((e.kind, e.tid)));
    l1.register_node(&node.local_addr().to_string()).unwrap();
    assert_eq!(l1.call(&Service::Start { program: "echo_client".into() }).unwrap(), json!({ "tid": 1 }));
    l1.call(&Service::Resume { tid: 1 }).unwrap();

    // the child is adopted from the node's spawn notification
    let deadline = std::time::Instant::now() + WAIT;
    while l1.resolve(2).is_err() && std::time::Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert_eq!(l1.resolve(2).unwrap(), (0, 2));
    assert!(seen.lock().unwrap().contains(&(EventKind::Spawned, 2)));
    l1.close();
    node.shutdown();
}

#[test]
fn ordinals_are_per_session() {
    let engine = corpus_engine();
    engine.start("echo_client").unwrap();
    let node = serve_node(engine, "127.0.0.1:0").unwrap();
    let addr = node.local_addr().to_string();
    let (x, y) = (L1Session::new(), L1Session::new());
    x.register_node(&addr).unwrap();
    y.register_node(&addr).unwrap();
    let eval = Service::Evaluate { tid: 1, expr: "1 + 1".into() };
    assert_eq!(x.call(&eval).unwrap()["ordinal"], 1);
    assert_eq!(x.call(&eval).unwrap()["ordinal"], 2);
    assert_eq!(y.call(&eval).unwrap()["ordinal"], 1);
    x.close();
    y.close();
    node.shutdown();
}

#[test]
fn duplicate_and_dead_endpoints() {
    let node = serve_node(corpus_engine(), "127.0.0.1:0").unwrap();
    let addr = node.local_addr().to_string();
    let l1 = L1Session::new();
    l1.register_node(&addr).unwrap();
    assert_eq!(l1.register_node(&addr).unwrap_err().code, ErrorCode::DuplicateEndpoint);

    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    assert_eq!(l1.register_node(&dead).unwrap_err().code, ErrorCode::NodeUnreachable);
    assert_eq!(L1Session::new().call(&Service::Start { program: "echo_client".into() }).unwrap_err().code, ErrorCode::NodeUnreachable);
    l1.close();
    node.shutdown();
}

#[test]
fn node_shutdown_makes_routes_unreachable() {
    let engine = corpus_engine();
    engine.start("echo_client").unwrap();
    let node = serve_node(engine, "127.0.0.1:0").unwrap();
    let l1 = L1Session::new();
    l1.register_node(&node.local_addr().to_string()).unwrap();
    assert!(l1.call(&Service::Status { tid: 1 }).is_ok());
    node.shutdown();
    let err = l1.call(&Service::Status { tid: 1 }).unwrap_err();
    assert_eq!(err.code, ErrorCode::NodeUnreachable, "{err:?}");
}

fn raw(addr: &str) -> (BufReader<TcpStream>, TcpStream) {
    let s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(WAIT)).unwrap();
    (BufReader::new(s.try_clone().unwrap()), s)
}

#[test]
fn malformed_frames_get_a_frame_error() {
    let node = serve_node(corpus_engine(), "127.0.0.1:0").unwrap();
    let addr = node.local_addr().to_string();

    let (mut r, mut w) = raw(&addr);
    w.write_all(b"this is not json\n").unwrap();
    let env = wire::read_envelope(&mut r).unwrap().unwrap();
    assert_eq!((env.kind, env.status.as_deref()), (Kind::Event, Some("frame_error")));

    // after a good hello, a bad frame ends the connection with a notice
    let (mut r, mut w) = raw(&addr);
    wire::write_envelope(&mut w, &Envelope::hello(Role::Tool, DeliveryMode::Blocking)).unwrap();
    let welcome = wire::read_envelope(&mut r).unwrap().unwrap();
    assert_eq!(welcome.kind, Kind::Hello);
    assert!(!welcome.client.is_empty());
    w.write_all(b"{\"kind\":\"request\"\n").unwrap();
    let env = wire::read_envelope(&mut r).unwrap().unwrap();
    assert_eq!(env.status.as_deref(), Some("frame_error"));
    let mut rest = String::new();
    assert_eq!(r.read_line(&mut rest).unwrap_or(0), 0);
    node.shutdown();
}

#[test]
fn node_replies_carry_error_codes() {
    let node = serve_node(corpus_engine(), "127.0.0.1:0").unwrap();
    let (mut r, mut w) = raw(&node.local_addr().to_string());
    wire::write_envelope(&mut w, &Envelope::hello(Role::Tool, DeliveryMode::Blocking)).unwrap();
    let id = wire::read_envelope(&mut r).unwrap().unwrap().client;
    let cases: [(&str, Vec<Value>, &str); 3] = [
        ("evaluate", vec![json!(7), json!("x")], "unknown_tid"),
        ("no_such_service", vec![], "unknown_service"),
        ("set_breakpoint", vec![json!(1)], "bad_args"),
    ];
    for (rid, (service, args, code)) in cases.into_iter().enumerate() {
        wire::write_envelope(&mut w, &Envelope::request(&id, rid as u64 + 1, service, args)).unwrap();
        let reply = wire::read_envelope(&mut r).unwrap().unwrap();
        assert_eq!((reply.kind, reply.rid, reply.status.as_deref()), (Kind::Reply, rid as u64 + 1, Some(code)));
    }
    node.shutdown();
}
