//! Thread-per-connection TCP front end over [`Storage`].

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;
use std::thread;

use sdai_core::EpisodeId;

use crate::protocol::{self, error_status, read_frame, write_frame, Cursor, Encode};
use crate::storage::Storage;
use crate::{PlatformError, Result};

pub struct Server {
    listener: TcpListener,
    storage: Arc<Storage>,
}

impl Server {
    pub fn bind(storage_dir: impl AsRef<Path>, addr: impl ToSocketAddrs) -> Result<Self> {
        let storage = Arc::new(Storage::open(storage_dir)?);
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, storage })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn storage(&self) -> &Arc<Storage> {
        &self.storage
    }

    /// Accepts connections forever.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let storage = self.storage.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(&storage, stream) {
                    log::info!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<(SocketAddr, thread::JoinHandle<Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, thread::spawn(move || self.run())))
    }
}

fn handle_connection(storage: &Storage, stream: TcpStream) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let (op, payload) = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e @ PlatformError::Protocol(_)) => {
                let _ = write_frame(&mut writer, protocol::PROTOCOL_ERROR, e.to_string().as_bytes());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        match dispatch(storage, op, &payload) {
            Ok(body) => write_frame(&mut writer, protocol::OK, &body)?,
            Err(e) => {
                let status = error_status(&e);
                write_frame(&mut writer, status, e.to_string().as_bytes())?;
                if status == protocol::PROTOCOL_ERROR {
                    return Err(e);
                }
            }
        }
    }
}

fn dispatch(storage: &Storage, op: u8, payload: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor::new(payload);
    let mut out = Vec::new();
    match op {
        protocol::UPLOAD_RUN => {
            let digest: [u8; 32] = c.array()?;
            let outcome = storage.upload_run(c.rest(), Some(&digest))?;
            out.push(outcome.duplicate as u8);
            outcome.manifest.encode(&mut out);
        }
        protocol::LIST_RUNS => {
            let filter = match c.u8()? {
                0 => None,
                1 => Some(String::decode(&mut c)?),
                f => return Err(PlatformError::Protocol(format!("bad filter flag {f}"))),
            };
            c.finish()?;
            let runs = storage.list_runs(filter.as_deref());
            out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
            for m in &runs {
                m.encode(&mut out);
            }
        }
        protocol::GET_RUN => {
            let id = EpisodeId(c.array()?);
            c.finish()?;
            out = storage.get_run(&id)?;
        }
        protocol::PUT_MODEL => {
            let tag = String::decode(&mut c)?;
            let digest: [u8; 32] = c.array()?;
            let bytes = c.rest();
            if sdai_core::episode::sha256(bytes) != digest {
                return Err(PlatformError::DigestMismatch);
            }
            storage.put_model(&tag, bytes)?.encode(&mut out);
        }
        protocol::GET_MODEL => {
            let tag = String::decode(&mut c)?;
            c.finish()?;
            let (m, bytes) = storage.get_model(&tag)?;
            m.encode(&mut out);
            out.extend_from_slice(&bytes);
        }
        other => return Err(PlatformError::Protocol(format!("unknown opcode {other}"))),
    }
    Ok(out)
}
