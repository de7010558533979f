//! HTTP side door: serves a static page at `/` and bridges WebSocket
//! clients at `/ws` into ordinary hub sessions, one envelope per text frame.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::mpsc::TryRecvError;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::Hub;
use crate::net::{self, ServerHandle};
use crate::wire::{self, DeliveryMode, Envelope, Kind, Role};

/// Page served at `/` when no web UI directory is configured.
pub const INDEX_HTML: &str = r#"<!doctype html>
<html>
<head><meta charset="utf-8"><title>fiddle</title>
<style>body{font-family:monospace} td,th{padding:0 8px;text-align:left}</style>
</head>
<body>
<h3>fiddle hub</h3>
<table id="tids"><tr><th>TID</th><th>ATT</th><th>L_TID</th><th>PROGRAM</th><th>MACHINE</th></tr></table>
<pre id="log"></pre>
<script>
const ws = new WebSocket(`ws://${location.host}/ws`);
let rid = 0;
const send = (service, args) => ws.send(JSON.stringify({kind: "request", rid: ++rid, service, args}));
const log = (line) => { document.getElementById("log").textContent += line + "\n"; };
ws.onopen = () => ws.send(JSON.stringify({kind: "hello", args: ["tool", "event_async"]}));
ws.onmessage = (m) => {
  const env = JSON.parse(m.data);
  if (env.kind === "hello") { log(`session ${env.client}`); send("list_tids", []); return; }
  const rec = env.payload || {};
  if (rec.event === "reply" && Array.isArray(rec.body.payload)) {
    const t = document.getElementById("tids");
    t.querySelectorAll("tr.row").forEach((r) => r.remove());
    for (const p of rec.body.payload) {
      const r = t.insertRow(); r.className = "row";
      [p.tid, p.att ? "y" : "n", p.l_tid, p.program, p.machine].forEach((v) => r.insertCell().textContent = v);
    }
    return;
  }
  log(`#${rec.seq} ${rec.event} ${JSON.stringify(rec.body)}`);
  if (rec.event === "spawned") send("list_tids", []);
};
</script>
</body>
</html>
"#;

const POLL: Duration = Duration::from_millis(20);

/// Serves the gateway on `addr`. Files under `webui` (when given) are
/// served as-is, with `index.html` at `/`.
pub fn serve_gateway(hub: Hub, addr: impl ToSocketAddrs, webui: Option<PathBuf>) -> io::Result<ServerHandle> {
    net::serve(addr, "gateway", move |stream| {
        if let Err(e) = connection(&hub, stream, webui.as_deref()) {
            log::debug!("gateway connection ended: {e}");
        }
    })
}

fn is_upgrade(stream: &TcpStream) -> io::Result<bool> {
    let mut buf = [0u8; 8];
    let mut tries = 0;
    loop {
        let n = stream.peek(&mut buf)?;
        if n == buf.len() || n == 0 || tries > 50 {
            return Ok(buf[..n.min(7)] == b"GET /ws"[..] && matches!(buf[7], b' ' | b'?' | b'/'));
        }
        tries += 1;
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn connection(hub: &Hub, stream: TcpStream, webui: Option<&Path>) -> io::Result<()> {
    if is_upgrade(&stream)? {
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        return websocket(hub, ws);
    }
    serve_http(stream, webui)
}

fn serve_http(mut stream: TcpStream, webui: Option<&Path>) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header.trim().is_empty() {
            break;
        }
    }
    let mut parts = request_line.split_whitespace();
    let (method, target) = (parts.next().unwrap_or_default(), parts.next().unwrap_or("/"));
    let path = target.split('?').next().unwrap_or("/");
    let body = if method != "GET" {
        None
    } else {
        match (path, webui) {
            ("/" | "/index.html", None) => Some((INDEX_HTML.as_bytes().to_vec(), "text/html; charset=utf-8")),
            (p, Some(dir)) => static_file(dir, p),
            _ => None,
        }
    };
    match body {
        Some((bytes, mime)) => {
            write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: {mime}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", bytes.len())?;
            stream.write_all(&bytes)?;
        }
        None => {
            let msg = b"not found\n";
            write!(stream, "HTTP/1.1 404 Not Found\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", msg.len())?;
            stream.write_all(msg)?;
        }
    }
    stream.flush()
}

fn static_file(dir: &Path, path: &str) -> Option<(Vec<u8>, &'static str)> {
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let file = if rel.as_os_str().is_empty() { dir.join("index.html") } else { dir.join(rel) };
    let mime = match file.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    std::fs::read(file).ok().map(|b| (b, mime))
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn send_env(ws: &mut WebSocket<TcpStream>, env: &Envelope) -> Result<(), tungstenite::Error> {
    let line = String::from_utf8(wire::encode(env)).expect("envelopes are UTF-8");
    ws.send(Message::text(line.trim_end()))
}

fn read_text(ws: &mut WebSocket<TcpStream>) -> Result<Option<String>, tungstenite::Error> {
    match ws.read() {
        Ok(Message::Text(t)) => Ok(Some(t.as_str().to_string())),
        Ok(Message::Close(_)) => Err(tungstenite::Error::ConnectionClosed),
        Ok(_) => Ok(None),
        Err(e) if is_timeout(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn websocket(hub: &Hub, mut ws: WebSocket<TcpStream>) -> io::Result<()> {
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let closed = |e: tungstenite::Error| io::Error::other(e.to_string());

    let hello = loop {
        if let Some(text) = read_text(&mut ws).map_err(closed)? {
            break wire::decode(text.as_bytes());
        }
    };
    let (role, mode) = match hello {
        Ok(env) if env.kind == Kind::Hello => {
            let arg = |i: usize| env.args.get(i).and_then(|v| v.as_str()).unwrap_or_default().to_string();
            (arg(0).parse().unwrap_or(Role::Tool), arg(1).parse().unwrap_or(DeliveryMode::EventAsync))
        }
        _ => {
            let _ = send_env(&mut ws, &Envelope::frame_error("expected hello"));
            return Ok(());
        }
    };
    let (id, outbox) = hub.open_session(role, mode);
    let result = (|| -> Result<(), tungstenite::Error> {
        send_env(&mut ws, &Envelope::welcome(&id))?;
        loop {
            if let Some(text) = read_text(&mut ws)? {
                match wire::decode(text.as_bytes()) {
                    Ok(env) => hub.handle_envelope(&id, env),
                    Err(e) => {
                        send_env(&mut ws, &Envelope::frame_error(&e.to_string()))?;
                        return Ok(());
                    }
                }
            }
            loop {
                match outbox.try_recv() {
                    Ok(env) => send_env(&mut ws, &env)?,
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return Ok(()),
                }
            }
        }
    })();
    hub.close_session(&id);
    let _ = ws.close(None);
    result.map_err(closed)
}
