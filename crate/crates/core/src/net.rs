//! Thread-per-connection TCP listener shared by the daemons.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

/// A running listener. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and drops every open connection.
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        for (_, c) in self.conns.lock().unwrap().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

pub fn serve<F>(addr: impl ToSocketAddrs, name: &str, handler: F) -> io::Result<ServerHandle>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
    let handler = Arc::new(handler);
    let (stop2, conns2) = (stop.clone(), conns.clone());
    let name = name.to_string();
    thread::Builder::new().name(format!("{name}-accept")).spawn(move || {
        for (id, stream) in (0u64..).zip(listener.incoming()) {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            let Ok(copy) = stream.try_clone() else { continue };
            conns2.lock().unwrap().insert(id, copy);
            let (handler, conns) = (handler.clone(), conns2.clone());
            let _ = thread::Builder::new().name(format!("{name}-conn")).spawn(move || {
                handler(stream);
                // the registry's clone would otherwise keep the socket open
                if let Some(c) = conns.lock().unwrap().remove(&id) {
                    let _ = c.shutdown(Shutdown::Both);
                }
            });
        }
    })?;
    Ok(ServerHandle { addr, stop, conns })
}
