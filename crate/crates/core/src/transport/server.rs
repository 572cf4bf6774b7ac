use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::error::{Error, Result};
use crate::transport::frame::{read_frame, Frame, Opcode};
use crate::transport::protocol::*;
use crate::transport::store::ModelStore;

/// Byte and frame counters of one connection. Counts are wire bytes,
/// length prefixes included.
#[derive(Debug, Default)]
pub struct ConnectionStats {
    pub bytes_sent: AtomicU64,
    pub bytes_received: AtomicU64,
    pub frames_sent: AtomicU64,
    pub frames_received: AtomicU64,
    /// Wire bytes of MODEL frames only.
    pub model_bytes_sent: AtomicU64,
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: Mutex<Vec<(SocketAddr, Arc<ConnectionStats>)>>,
    pub bytes_sent: AtomicU64,
    pub bytes_received: AtomicU64,
    pub model_bytes_sent: AtomicU64,
    pub models_sent: AtomicU64,
}

impl ServerStats {
    pub fn connection_count(&self) -> usize {
        self.connections.lock().unwrap().len()
    }
}

pub struct Server {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

/// Bind and start answering requests on a background acceptor thread,
/// one handler thread per connection.
pub fn serve(bind: impl ToSocketAddrs, store: ModelStore) -> Result<Server> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let store = Arc::new(store);
    let stats = Arc::new(ServerStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let (stats, stop) = (stats.clone(), stop.clone());
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let peer = stream.peer_addr().unwrap_or(addr);
                let conn_stats = Arc::new(ConnectionStats::default());
                stats.connections.lock().unwrap().push((peer, conn_stats.clone()));
                let (store, stats) = (store.clone(), stats.clone());
                thread::spawn(move || {
                    let _ = handle(stream, &store, &stats, &conn_stats);
                });
            }
        })
    };
    Ok(Server {
        addr,
        stats,
        stop,
        acceptor: Some(acceptor),
    })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// Block until the acceptor exits.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    /// Stop accepting connections. Open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_acceptor();
    }

    fn stop_acceptor(&mut self) {
        if let Some(h) = self.acceptor.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_acceptor();
    }
}

fn handle(stream: TcpStream, store: &ModelStore, stats: &ServerStats, conn: &ConnectionStats) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            // The stream cannot be resynchronized after a bad length or opcode.
            Err(e @ (Error::FrameTooLarge(_) | Error::UnknownOpcode(_) | Error::Malformed(_))) => {
                let _ = send(&mut writer, &error_frame(ERR_BAD_REQUEST, &e.to_string()), stats, conn);
                break;
            }
            Err(_) => break,
        };
        let n = frame.wire_len() as u64;
        conn.bytes_received.fetch_add(n, Ordering::Relaxed);
        conn.frames_received.fetch_add(1, Ordering::Relaxed);
        stats.bytes_received.fetch_add(n, Ordering::Relaxed);

        let reply = respond(&frame, store);
        send(&mut writer, &reply, stats, conn)?;
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

/// Meters a reply and writes it. Counters move before the bytes reach the
/// socket, so a client that has read a reply always sees it counted.
fn send(w: &mut impl Write, frame: &Frame, stats: &ServerStats, conn: &ConnectionStats) -> Result<()> {
    let bytes = frame.to_bytes()?;
    let n = bytes.len() as u64;
    conn.bytes_sent.fetch_add(n, Ordering::SeqCst);
    conn.frames_sent.fetch_add(1, Ordering::SeqCst);
    stats.bytes_sent.fetch_add(n, Ordering::SeqCst);
    if frame.opcode == Opcode::Model {
        conn.model_bytes_sent.fetch_add(n, Ordering::SeqCst);
        stats.model_bytes_sent.fetch_add(n, Ordering::SeqCst);
        stats.models_sent.fetch_add(1, Ordering::SeqCst);
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

fn respond(frame: &Frame, store: &ModelStore) -> Frame {
    match frame.opcode {
        Opcode::Hello => match frame.payload.as_slice() {
            [PROTOCOL_VERSION] => Frame::new(Opcode::Hello, vec![PROTOCOL_VERSION]),
            _ => error_frame(ERR_UNSUPPORTED_PROTOCOL, "unsupported protocol version"),
        },
        Opcode::GetManifest | Opcode::GetModel => {
            let req = match ModelRequest::decode(&frame.payload) {
                Ok(r) => r,
                Err(e) => return error_frame(ERR_BAD_REQUEST, &e.to_string()),
            };
            let Some(model) = store.get(&req.name, req.version) else {
                return if store.has_name(&req.name) {
                    error_frame(ERR_UNKNOWN_VERSION, &format!("model {} has no version {}", req.name, req.version))
                } else {
                    error_frame(ERR_UNKNOWN_MODEL, &format!("unknown model {}", req.name))
                };
            };
            if frame.opcode == Opcode::GetModel {
                return Frame::new(Opcode::Model, model.packet.clone());
            }
            let manifest = Manifest {
                name: model.name.clone(),
                version: model.version,
                packet_bytes: model.packet.len() as u64,
                sha256: model.sha256,
            };
            match manifest.encode() {
                Ok(p) => Frame::new(Opcode::Manifest, p),
                Err(e) => error_frame(ERR_BAD_REQUEST, &e.to_string()),
            }
        }
        other => error_frame(ERR_UNEXPECTED_OPCODE, &format!("unexpected opcode {:#04x}", other as u8)),
    }
}
