//! The same console session driven at each layer gives the same transcript.

mod common;

use std::sync::Arc;

use fiddle::console::{Console, Outcome};
use fiddle::engine::LocalSession;
use fiddle::service::Endpoint;
use fiddle::wire::DeliveryMode;

use common::{Stack, WAIT};

const SCRIPT: &[&str] = &[
    "tids",
    "1 status",
    "1 break 24",
    "1 break 28 after",
    "1 breakpoints",
    "1 continue",
    "-wait 1",
    "tids",
    "1 info-line",
    "1 evaluate value",
    "1 set value 7",
    "1 eval value * 2",
    "1 delete 1",
    "1 delete 1",
    "1 cont",
    "-wait 1",
    "1 status",
    "2 status",
    "2 step",
    "-wait 2",
    "2 status",
    "frobnicate",
    "1 s",
];

fn transcript(layer: u8) -> Vec<String> {
    let stack = Stack::new();
    stack.engine.start("echo_client").unwrap();
    let endpoint: Arc<dyn Endpoint> = match layer {
        0 => Arc::new(LocalSession::new(stack.engine.clone())),
        1 => Arc::new(stack.l1.clone()),
        _ => Arc::new(stack.client(DeliveryMode::Blocking)),
    };
    let console = Console::new(endpoint, layer);
    let mut out = Vec::new();
    for line in SCRIPT {
        if let Some(tid) = line.strip_prefix("-wait ") {
            stack.engine.wait_stop(tid.parse().unwrap(), WAIT).unwrap();
            continue;
        }
        match console.handle_line(line) {
            Some(Outcome::Text(t)) => out.push(format!("> {line}\n{t}")),
            other => panic!("{line}: {other:?}"),
        }
    }
    assert_eq!(console.handle_line("quit"), Some(Outcome::Quit));
    stack.shutdown();
    out
}

#[test]
fn console_transcript_is_layer_independent() {
    let base = transcript(0);
    let text = base.join("\n");
    assert!(text.contains("> 1 evaluate value\n=> $1 = 0 (uninitialized)"), "{text}");
    assert!(text.contains("> 1 eval value * 2\n=> $2 = 14"), "{text}");
    assert!(text.contains("> 1 delete 1\n! unknown_breakpoint"), "{text}");
    assert!(text.contains("> 1 s\n! "), "ambiguous prefix: {text}");
    assert_eq!(transcript(1), base, "layer 1");
    assert_eq!(transcript(2), base, "layer 2");
}

#[test]
fn unknown_tids_differ_by_layer_only_in_code() {
    let stack = Stack::new();
    let c0 = Console::new(Arc::new(LocalSession::new(stack.engine.clone())), 0);
    let c1 = Console::new(Arc::new(stack.l1.clone()), 1);
    assert_eq!(c0.handle_line("4 status"), Some(Outcome::Text("! unknown_tid".into())));
    assert_eq!(c1.handle_line("4 status"), Some(Outcome::Text("! unknown_global_tid".into())));
    assert_eq!(c1.prompt(), "f1m []> ");
    stack.shutdown();
}
