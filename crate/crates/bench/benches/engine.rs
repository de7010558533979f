use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use fiddle::client::Client;
use fiddle::corpus;
use fiddle::engine::{Engine, LocalSession};
use fiddle::hub::{serve_hub, Hub};
use fiddle::remote::{serve_node, L1Session};
use fiddle::service::{Endpoint, Service, When};
use fiddle::tess;
use fiddle::wire::{DeliveryMode, Role};

fn corpus_engine() -> Engine {
    let engine = Engine::new(None);
    for p in corpus::programs() {
        engine.add_program(p);
    }
    engine
}

fn tess_round_trip(c: &mut Criterion) {
    c.bench_function("tess/parse", |b| b.iter(|| tess::parse_tess(black_box(corpus::ECHO_EXAMPLE_TES)).unwrap()));
    let spec = tess::parse_tess(corpus::ECHO_EXAMPLE_TES).unwrap();
    c.bench_function("tess/serialize", |b| b.iter(|| tess::serialize_tess(black_box(&spec))));
}

/// Runs the echo pair to completion with the server patched to reply.
fn echo_run(c: &mut Criterion) {
    c.bench_function("engine/echo_to_exit", |b| {
        b.iter(|| {
            let engine = corpus_engine();
            let client = engine.start("echo_client").unwrap();
            engine.resume(client).unwrap();
            while engine.list_tids().len() < 2 {
                std::thread::yield_now();
            }
            engine.set_breakpoint(2, 17, When::Before, true).unwrap();
            engine.resume(2).unwrap();
            engine.wait_stop(2, Duration::from_secs(5)).unwrap();
            engine.set_variable(2, "value", 1).unwrap();
            engine.resume(2).unwrap();
            let st = engine.wait_stop(client, Duration::from_secs(5)).unwrap();
            assert!(st.status.is_terminal());
        })
    });
}

/// The same evaluate at each layer.
fn evaluate_by_layer(c: &mut Criterion) {
    let engine = corpus_engine();
    let tid = engine.start("echo_client").unwrap();
    engine.set_variable(tid, "totid", 4).unwrap();
    let node = serve_node(engine.clone(), "127.0.0.1:0").unwrap();
    let l1 = L1Session::new();
    l1.register_node(&node.local_addr().to_string()).unwrap();
    let hub_server = serve_hub(Hub::new(l1.clone()), "127.0.0.1:0").unwrap();
    let hub_client = Client::connect(hub_server.local_addr(), Role::Tool, DeliveryMode::Blocking).unwrap();
    let local = LocalSession::new(engine);

    let eval = Service::Evaluate { tid, expr: "totid * 3 + 1".into() };
    let mut group = c.benchmark_group("evaluate");
    group.bench_function("layer0", |b| b.iter(|| local.call(black_box(&eval)).unwrap()));
    group.bench_function("layer1", |b| b.iter(|| l1.call(black_box(&eval)).unwrap()));
    group.bench_function("layer2", |b| b.iter(|| hub_client.call_service(black_box(&eval)).unwrap()));
    group.finish();

    hub_client.close();
    hub_server.shutdown();
    l1.close();
    node.shutdown();
}

criterion_group!(benches, tess_round_trip, echo_run, evaluate_by_layer);
criterion_main!(benches);
