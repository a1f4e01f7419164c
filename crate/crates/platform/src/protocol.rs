//! Wire format of the ingest service.
//!
//! Every message is a frame `u32 length | u8 code | payload`, where
//! `length` counts the code byte and the payload. Requests carry an opcode,
//! responses a status. All integers are little-endian; strings are
//! `u8 length | utf-8`.
//!
//! | opcode | request payload | OK response payload |
//! |---|---|---|
//! | 1 `UPLOAD_RUN` | digest[32], episode bytes | u8 duplicate, run manifest |
//! | 2 `LIST_RUNS` | u8 has_filter, [tag] | u32 count, run manifests |
//! | 3 `GET_RUN` | episode id[16] | episode bytes |
//! | 4 `PUT_MODEL` | tag, digest[32], model bytes | model manifest |
//! | 5 `GET_MODEL` | tag | model manifest, model bytes |
//!
//! A non-OK response carries a UTF-8 message. After `PROTOCOL_ERROR` the
//! server closes the connection.

use std::io::{self, Read, Write};

use crate::{PlatformError, Result};

pub const UPLOAD_RUN: u8 = 1;
pub const LIST_RUNS: u8 = 2;
pub const GET_RUN: u8 = 3;
pub const PUT_MODEL: u8 = 4;
pub const GET_MODEL: u8 = 5;

pub const OK: u8 = 0;
pub const NOT_FOUND: u8 = 1;
pub const REJECTED: u8 = 2;
pub const PROTOCOL_ERROR: u8 = 3;
pub const INTERNAL: u8 = 4;

/// Largest accepted frame, code byte included.
pub const MAX_FRAME: u32 = 256 << 20;

/// Reads one frame. `Ok(None)` on a clean end of stream before the first
/// length byte.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(u8, Vec<u8>)>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(PlatformError::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > MAX_FRAME {
        return Err(PlatformError::Protocol(format!("frame length {len} outside 1..={MAX_FRAME}")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => PlatformError::Protocol("stream ended inside a frame".into()),
        _ => e.into(),
    })?;
    let code = body[0];
    body.remove(0);
    Ok(Some((code, body)))
}

pub fn write_frame(w: &mut impl Write, code: u8, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len() + 1)
        .ok()
        .filter(|&l| l <= MAX_FRAME)
        .ok_or_else(|| PlatformError::Invalid(format!("payload of {} bytes exceeds the frame limit", payload.len())))?;
    let mut head = [0u8; 5];
    head[..4].copy_from_slice(&len.to_le_bytes());
    head[4] = code;
    w.write_all(&head)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Bounds-checked reader over a payload.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PlatformError::Protocol(format!("payload truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(PlatformError::Protocol(format!("{} trailing payload bytes", self.buf.len() - self.pos)))
        }
    }
}

pub trait Encode: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(c: &mut Cursor<'_>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.encode(&mut v);
        v
    }

    /// Decodes and requires the whole buffer to be consumed.
    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let v = Self::decode(&mut c)?;
        c.finish()?;
        Ok(v)
    }
}

impl Encode for String {
    fn encode(&self, out: &mut Vec<u8>) {
        let b = &self.as_bytes()[..self.len().min(255)];
        out.push(b.len() as u8);
        out.extend_from_slice(b);
    }

    fn decode(c: &mut Cursor<'_>) -> Result<Self> {
        let n = c.u8()? as usize;
        let b = c.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| PlatformError::Protocol("string is not UTF-8".into()))
    }
}

/// Status and message for a failed request.
pub fn error_status(e: &PlatformError) -> u8 {
    match e {
        PlatformError::NotFound(_) => NOT_FOUND,
        PlatformError::DigestMismatch | PlatformError::Episode(_) | PlatformError::Invalid(_) | PlatformError::Nn(_) => {
            REJECTED
        }
        PlatformError::Protocol(_) => PROTOCOL_ERROR,
        _ => INTERNAL,
    }
}
