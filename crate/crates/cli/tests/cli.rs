//! Runs the real binaries: node, hub and Deipa driving the echo example,
//! plus a layer-2 console session.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::{Duration, Instant};

struct Proc {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    seen: Vec<String>,
}

impl Proc {
    fn spawn(bin: &str, args: &[&str]) -> Proc {
        let mut child = Command::new(bin)
            .args(args)
            .env_remove("FIDDLE_ENDPOINT")
            .env_remove("DEIPA_ENDPOINT")
            .env_remove("FIDDLE_NODE_ENDPOINT")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let out = child.stdout.take().unwrap();
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(out).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stdin = child.stdin.take();
        Proc { child, stdin, lines, seen: Vec::new() }
    }

    /// Waits for a line containing `needle` and returns it.
    fn expect(&mut self, needle: &str) -> String {
        if let Some(l) = self.seen.iter().find(|l| l.contains(needle)) {
            return l.clone();
        }
        let deadline = Instant::now() + Duration::from_secs(10);
        while let Ok(line) = self.lines.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
            self.seen.push(line.clone());
            if line.contains(needle) {
                return line;
            }
        }
        panic!("no line containing `{needle}`; got {:#?}", self.seen);
    }

    fn send(&mut self, line: &str) {
        writeln!(self.stdin.as_mut().unwrap(), "{line}").unwrap();
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> String {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string()
}

fn after<'a>(line: &'a str, prefix: &str) -> &'a str {
    line.split(prefix).nth(1).unwrap().trim()
}

#[test]
fn deipa_drives_the_echo_example_across_processes() {
    let dir = std::env::temp_dir().join(format!("fiddle-cli-{}", std::process::id()));
    fiddle::corpus::install(&dir).unwrap();
    let (hub_addr, deipa_addr) = (free_port(), free_port());

    let mut node = Proc::spawn(
        env!("CARGO_BIN_EXE_fiddle-node"),
        &["--programs", dir.to_str().unwrap(), "--listen", "127.0.0.1:0", "--hub", &hub_addr, "--deipa", &deipa_addr],
    );
    let node_addr = after(&node.expect("node listening on"), "node listening on").to_string();
    let mut hub = Proc::spawn(env!("CARGO_BIN_EXE_fiddle-hub"), &["--listen", &hub_addr, "--node", &node_addr]);
    hub.expect("hub listening on");

    let tes = dir.join("echo_example.tes");
    let mut deipa = Proc::spawn(
        env!("CARGO_BIN_EXE_console-deipa"),
        &[tes.to_str().unwrap(), "--hub", &hub_addr, "--announce", &deipa_addr, "--timeout", "5"],
    );
    deipa.expect("11 global breakpoints");
    deipa.send("run");
    for _ in 0..10 {
        deipa.send("step");
    }
    deipa.send("state");
    deipa.send("quit");
    deipa.expect("pth_launcher: [tid=2, vid=2]");
    deipa.expect("set_all_vars_func: setvar value=1");
    node.expect("[tid 1] Received value -1");
    let status = deipa.child.wait().unwrap();
    assert!(status.success());
    assert!(!deipa.seen.iter().any(|l| l.starts_with("! ")), "{:#?}", deipa.seen);

    let mut console = Proc::spawn(env!("CARGO_BIN_EXE_fiddle-console"), &["--layer", "2", "--hub", &hub_addr]);
    console.send("tids");
    console.send("1 info-line");
    console.send("quit");
    console.expect("f2m []>");
    console.expect("TID  ATT  TP_PID");
    console.expect("Line 35 of \"echo_client.mpl\"");
    assert!(console.child.wait().unwrap().success());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn console_without_a_hub_fails() {
    let mut console = Proc::spawn(env!("CARGO_BIN_EXE_fiddle-console"), &["--layer", "2", "--hub", &free_port()]);
    let status = console.child.wait().unwrap();
    assert!(!status.success());
}

#[test]
fn layer_zero_console_runs_standalone() {
    let mut console = Proc::spawn(env!("CARGO_BIN_EXE_fiddle-console"), &["--layer", "0", "--start", "echo_client"]);
    console.send("1 status");
    console.send("1 ev totid");
    console.send("quit");
    console.expect("f0m []>");
    console.expect("created, line 11");
    console.expect("=> $1 = 0 (uninitialized)");
    assert!(console.child.wait().unwrap().success());
}
