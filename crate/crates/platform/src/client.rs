//! Blocking client for the ingest service.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};

use sdai_core::episode::sha256;
use sdai_core::EpisodeId;

use crate::protocol::{self, read_frame, write_frame, Cursor, Encode};
use crate::storage::{ModelManifest, RunManifest, UploadOutcome};
use crate::{PlatformError, Result};

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn call(&mut self, op: u8, payload: &[u8]) -> Result<Vec<u8>> {
        write_frame(&mut self.writer, op, payload)?;
        let (status, body) = read_frame(&mut self.reader)?
            .ok_or_else(|| PlatformError::Protocol("server closed the connection".into()))?;
        let message = || String::from_utf8_lossy(&body).into_owned();
        match status {
            protocol::OK => Ok(body),
            protocol::NOT_FOUND => Err(PlatformError::NotFound(message())),
            protocol::REJECTED if message().starts_with("digest mismatch") => Err(PlatformError::DigestMismatch),
            protocol::REJECTED => Err(PlatformError::Invalid(message())),
            protocol::PROTOCOL_ERROR => Err(PlatformError::Protocol(message())),
            _ => Err(PlatformError::Remote(message())),
        }
    }

    pub fn upload_run(&mut self, episode_bytes: &[u8]) -> Result<UploadOutcome> {
        let mut payload = Vec::with_capacity(32 + episode_bytes.len());
        payload.extend_from_slice(&sha256(episode_bytes));
        payload.extend_from_slice(episode_bytes);
        let body = self.call(protocol::UPLOAD_RUN, &payload)?;
        let mut c = Cursor::new(&body);
        let duplicate = c.u8()? != 0;
        let manifest = RunManifest::decode(&mut c)?;
        c.finish()?;
        Ok(UploadOutcome { manifest, duplicate })
    }

    pub fn list_runs(&mut self, scenario_tag: Option<&str>) -> Result<Vec<RunManifest>> {
        let mut payload = Vec::new();
        match scenario_tag {
            None => payload.push(0),
            Some(t) => {
                payload.push(1);
                t.to_string().encode(&mut payload);
            }
        }
        let body = self.call(protocol::LIST_RUNS, &payload)?;
        let mut c = Cursor::new(&body);
        let n = c.u32()?;
        let runs = (0..n).map(|_| RunManifest::decode(&mut c)).collect::<Result<Vec<_>>>()?;
        c.finish()?;
        Ok(runs)
    }

    pub fn get_run(&mut self, id: &EpisodeId) -> Result<Vec<u8>> {
        self.call(protocol::GET_RUN, &id.0)
    }

    pub fn put_model(&mut self, tag: &str, model_bytes: &[u8]) -> Result<ModelManifest> {
        let mut payload = tag.to_string().to_bytes();
        payload.extend_from_slice(&sha256(model_bytes));
        payload.extend_from_slice(model_bytes);
        ModelManifest::from_bytes(&self.call(protocol::PUT_MODEL, &payload)?)
    }

    pub fn get_model(&mut self, tag: &str) -> Result<(ModelManifest, Vec<u8>)> {
        let body = self.call(protocol::GET_MODEL, &tag.to_string().to_bytes())?;
        let mut c = Cursor::new(&body);
        let m = ModelManifest::decode(&mut c)?;
        Ok((m, c.rest().to_vec()))
    }
}
