//! Listener for launcher announcements.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::VidMap;
use crate::minipvm::Tid;
use crate::net::{self, ServerHandle};
use crate::remote::read_hello;
use crate::service::{ErrorCode, ServiceError};
use crate::wire::{self, Envelope, Kind};

/// Lines produced by announcements, waiting to be printed.
pub type Pending = Arc<Mutex<Vec<String>>>;

pub fn serve_announce(addr: impl ToSocketAddrs, vids: VidMap, pending: Pending) -> std::io::Result<ServerHandle> {
    net::serve(addr, "deipa-announce", move |stream| {
        if let Err(e) = connection(stream, &vids, &pending) {
            log::debug!("announce connection ended: {e}");
        }
    })
}

/// Handles one announcement: maps the process and records the log lines.
pub fn announce(vids: &VidMap, pending: &Pending, program: &str, tid: Tid) -> Result<u32, ServiceError> {
    let mut lines = pending.lock().unwrap();
    lines.push(format!("pth_launcher: {program}"));
    match vids.map_announce(program, tid) {
        Some(vid) => {
            lines.push(format!("pth_launcher: [tid={tid}, vid={vid}]"));
            Ok(vid)
        }
        None => {
            lines.push(format!("pth_launcher: [tid={tid}, vid=NULL] no spawn row for {program}"));
            log::warn!("tid {tid} ({program}) matches no spawn row");
            Err(ServiceError::new(ErrorCode::Other("no_matching_row".into()), format!("no free spawn row for {program}")))
        }
    }
}

fn connection(stream: TcpStream, vids: &VidMap, pending: &Pending) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    if read_hello(&mut reader, &mut writer).is_none() {
        return Ok(());
    }
    wire::write_envelope(&mut writer, &Envelope::welcome("deipa"))?;
    while let Ok(Some(env)) = wire::read_envelope(&mut reader) {
        let program = env.args.first().and_then(Value::as_str);
        let tid = env.args.get(1).and_then(Value::as_u64).and_then(|t| Tid::try_from(t).ok());
        let result = match (env.kind, env.service.as_deref(), program, tid) {
            (Kind::Register, Some("announce"), Some(program), Some(tid)) => {
                announce(vids, pending, program, tid).map(|vid| json!({ "vid": vid }))
            }
            _ => Err(ServiceError::bad_args("expected announce [program, tid]")),
        };
        wire::write_envelope(&mut writer, &Envelope::reply("deipa", env.rid, result))?;
    }
    Ok(())
}
