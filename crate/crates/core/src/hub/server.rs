use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;

use super::Hub;
use crate::net::{self, ServerHandle};
use crate::remote::read_hello;
use crate::wire::{self, Envelope, FrameError};

/// Serves the hub's socket protocol on `addr`.
pub fn serve_hub(hub: Hub, addr: impl ToSocketAddrs) -> std::io::Result<ServerHandle> {
    net::serve(addr, "hub", move |stream| {
        if let Err(e) = connection(&hub, stream) {
            log::debug!("hub connection ended: {e}");
        }
    })
}

fn connection(hub: &Hub, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    let Some((role, mode)) = read_hello(&mut reader, &mut writer) else {
        return Ok(());
    };
    let (id, outbox) = hub.open_session(role, mode);
    wire::write_envelope(&mut writer, &Envelope::welcome(&id))?;
    let pump = thread::spawn(move || {
        for env in outbox {
            if wire::write_envelope(&mut writer, &env).is_err() {
                break;
            }
        }
    });
    let mut frame_error = None;
    loop {
        match wire::read_envelope(&mut reader) {
            Ok(Some(env)) => hub.handle_envelope(&id, env),
            Ok(None) | Err(FrameError::Io(_)) => break,
            Err(FrameError::Malformed(msg)) => {
                frame_error = Some(msg);
                break;
            }
        }
    }
    hub.close_session(&id);
    let _ = pump.join();
    if let Some(msg) = frame_error {
        let _ = wire::write_envelope(&mut BufWriter::new(stream.try_clone()?), &Envelope::frame_error(&msg));
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}
