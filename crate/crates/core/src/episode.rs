//! Recorded demonstrations and their canonical binary encoding.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "SDEP" | u32 version | id[16]
//! dt f64 | width u16 | height u16 | n_frames u8 | m_steps u8
//! tag_len u8 | tag utf-8 | source u8
//! focal f64 | mount_height f64 | pitch f64 | yaw_offset f64 | horizontal_shift f64
//! sample_count u32
//! per sample: timestamp f64 | x y heading speed steer (f64 each)
//!             m_steps × f64 steering labels | width·height u8 pixels
//!             depth_flag u8 | [width·height f32 depth]
//! sha256[32] over all preceding bytes
//! ```

use std::fmt;

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::sim::VehicleState;

pub const EPISODE_MAGIC: &[u8; 4] = b"SDEP";
pub const EPISODE_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload")]
    Truncated,
    #[error("digest mismatch")]
    DigestMismatch,
    #[error("malformed episode: {0}")]
    Malformed(String),
    #[error("invalid episode: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EpisodeId(pub [u8; 16]);

impl EpisodeId {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return None;
        }
        let mut b = [0u8; 16];
        for (i, out) in b.iter_mut().enumerate() {
            *out = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Self(b))
    }
}

impl fmt::Display for EpisodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for EpisodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EpisodeId({})", self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Source {
    Expert = 0,
    Teleop = 1,
    Augmented = 2,
}

impl Source {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Source::Expert),
            1 => Some(Source::Teleop),
            2 => Some(Source::Augmented),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: f64,
    pub state: VehicleState,
    /// full-width grayscale frame, row-major
    pub pixels: Vec<u8>,
    /// optical-axis depth, `f32::INFINITY` for sky
    pub depth: Option<Vec<f32>>,
    /// steering targets for the next `m_steps` ticks
    pub steer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: EpisodeId,
    pub scenario_tag: String,
    pub dt: f64,
    pub camera: CameraIntrinsics,
    /// frame-stack length the episode was recorded for
    pub n_frames: u8,
    pub m_steps: u8,
    pub source: Source,
    pub samples: Vec<Sample>,
}

impl Episode {
    pub fn width(&self) -> usize {
        self.camera.width_full
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        let bad = |m: String| Err(EpisodeError::Invalid(m));
        if self.scenario_tag.len() > u8::MAX as usize {
            return bad("scenario tag longer than 255 bytes".into());
        }
        if self.width() == 0 || self.height() == 0 || self.width() > 65535 || self.height() > 65535 {
            return bad("frame dimensions must fit in u16 and be non-zero".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.samples.len() > u32::MAX as usize {
            return bad("too many samples".into());
        }
        let npx = self.width() * self.height();
        for (i, s) in self.samples.iter().enumerate() {
            if s.pixels.len() != npx {
                return bad(format!("sample {i}: {} pixels, expected {npx}", s.pixels.len()));
            }
            if s.depth.as_ref().is_some_and(|d| d.len() != npx) {
                return bad(format!("sample {i}: depth size mismatch"));
            }
            if s.steer.len() != self.m_steps as usize {
                return bad(format!("sample {i}: {} labels, expected {}", s.steer.len(), self.m_steps));
            }
            if i > 0 {
                let gap = s.timestamp - self.samples[i - 1].timestamp;
                if !(gap > 0.0) || (gap - self.dt).abs() > 1e-9 {
                    return bad(format!("sample {i}: timestamp spacing {gap} != dt {}", self.dt));
                }
            }
        }
        Ok(())
    }

    /// Canonical encoding; identical episodes always produce identical bytes.
    pub fn encode(&self) -> Result<Vec<u8>, EpisodeError> {
        self.validate()?;
        let npx = self.width() * self.height();
        let mut w = Vec::with_capacity(128 + self.samples.len() * (npx + 64));
        w.extend_from_slice(EPISODE_MAGIC);
        w.extend_from_slice(&EPISODE_VERSION.to_le_bytes());
        w.extend_from_slice(&self.id.0);
        w.extend_from_slice(&self.dt.to_le_bytes());
        w.extend_from_slice(&(self.width() as u16).to_le_bytes());
        w.extend_from_slice(&(self.height() as u16).to_le_bytes());
        w.push(self.n_frames);
        w.push(self.m_steps);
        w.push(self.scenario_tag.len() as u8);
        w.extend_from_slice(self.scenario_tag.as_bytes());
        w.push(self.source as u8);
        for v in [
            self.camera.focal,
            self.camera.mount_height,
            self.camera.pitch,
            self.camera.yaw_offset,
            self.camera.horizontal_shift,
        ] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        w.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        for s in &self.samples {
            let st = &s.state;
            for v in [s.timestamp, st.x, st.y, st.heading, st.speed, st.steer] {
                w.extend_from_slice(&v.to_le_bytes());
            }
            for v in &s.steer {
                w.extend_from_slice(&v.to_le_bytes());
            }
            w.extend_from_slice(&s.pixels);
            match &s.depth {
                None => w.push(0),
                Some(d) => {
                    w.push(1);
                    for v in d {
                        w.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EpisodeError> {
        if bytes.len() < 4 {
            return Err(if EPISODE_MAGIC.starts_with(bytes) {
                EpisodeError::Truncated
            } else {
                EpisodeError::BadMagic
            });
        }
        if &bytes[..4] != EPISODE_MAGIC {
            return Err(EpisodeError::BadMagic);
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u32()?;
        if version != EPISODE_VERSION {
            return Err(EpisodeError::UnsupportedVersion(version));
        }
        let id = EpisodeId(r.take(16)?.try_into().unwrap());
        let dt = r.f64()?;
        let width = r.u16()? as usize;
        let height = r.u16()? as usize;
        let n_frames = r.u8()?;
        let m_steps = r.u8()?;
        let tag_len = r.u8()? as usize;
        let scenario_tag = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| EpisodeError::Malformed("scenario tag is not utf-8".into()))?;
        let source = Source::from_u8(r.u8()?)
            .ok_or_else(|| EpisodeError::Malformed("unknown source".into()))?;
        let camera = CameraIntrinsics {
            width_full: width,
            height,
            focal: r.f64()?,
            mount_height: r.f64()?,
            pitch: r.f64()?,
            yaw_offset: r.f64()?,
            horizontal_shift: r.f64()?,
        };
        let count = r.u32()? as usize;
        let npx = width * height;
        let mut samples = Vec::with_capacity(count.min(bytes.len() / npx.max(1)));
        for _ in 0..count {
            let timestamp = r.f64()?;
            let state = VehicleState {
                x: r.f64()?,
                y: r.f64()?,
                heading: r.f64()?,
                speed: r.f64()?,
                steer: r.f64()?,
            };
            let steer = (0..m_steps).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let pixels = r.take(npx)?.to_vec();
            let depth = match r.u8()? {
                0 => None,
                1 => Some(
                    r.take(npx * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                f => return Err(EpisodeError::Malformed(format!("depth flag {f}"))),
            };
            samples.push(Sample {
                timestamp,
                state,
                pixels,
                depth,
                steer,
            });
        }
        let body_end = r.pos;
        let rest = bytes.len() - body_end;
        if rest < DIGEST_LEN {
            return Err(EpisodeError::Truncated);
        }
        if rest > DIGEST_LEN {
            return Err(EpisodeError::Malformed(format!("{} trailing bytes", rest - DIGEST_LEN)));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            return Err(EpisodeError::DigestMismatch);
        }
        let ep = Episode {
            id,
            scenario_tag,
            dt,
            camera,
            n_frames,
            m_steps,
            source,
            samples,
        };
        ep.validate().map_err(|e| EpisodeError::Malformed(e.to_string()))?;
        Ok(ep)
    }
}

/// SHA-256 of a byte string.
pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EpisodeError> {
        let end = self.pos.checked_add(n).ok_or(EpisodeError::Truncated)?;
        if end > self.buf.len() {
            return Err(EpisodeError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EpisodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EpisodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EpisodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, EpisodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn synthetic(n: usize, seed: u64, with_depth: bool) -> Episode {
        let mut rng = seeded(seed);
        let camera = CameraIntrinsics { width_full: 16, height: 8, ..Default::default() };
        let samples = (0..n)
            .map(|i| Sample {
                timestamp: i as f64 * 0.1,
                state: VehicleState {
                    x: rng.random_range(-5.0..5.0),
                    y: rng.random(),
                    heading: rng.random_range(-3.0..3.0),
                    speed: 5.0,
                    steer: rng.random_range(-0.5..0.5),
                },
                pixels: (0..128).map(|_| rng.random()).collect(),
                depth: (with_depth && i % 3 == 0)
                    .then(|| (0..128).map(|k| if k < 40 { f32::INFINITY } else { rng.random() }).collect()),
                steer: (0..5).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
            .collect();
        Episode {
            id: EpisodeId::random(&mut rng),
            scenario_tag: "s_curve".into(),
            dt: 0.1,
            camera,
            n_frames: 6,
            m_steps: 5,
            source: Source::Expert,
            samples,
        }
    }

    #[test]
    fn round_trip_is_canonical() {
        let ep = synthetic(100, 3, true);
        let bytes = ep.encode().unwrap();
        let back = Episode::decode(&bytes).unwrap();
        assert_eq!(back, ep);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn header_constants() {
        let bytes = synthetic(2, 1, false).encode().unwrap();
        assert_eq!(&bytes[..4], b"SDEP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corruption_is_reported_distinctly() {
        let bytes = synthetic(10, 5, true).encode().unwrap();
        assert_eq!(Episode::decode(&bytes[..bytes.len() - 10]), Err(EpisodeError::Truncated));
        assert_eq!(Episode::decode(&bytes[..100]), Err(EpisodeError::Truncated));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Episode::decode(&bad), Err(EpisodeError::BadMagic));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(Episode::decode(&bad), Err(EpisodeError::UnsupportedVersion(2)));

        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 0x40;
        assert_eq!(Episode::decode(&bad), Err(EpisodeError::DigestMismatch));
    }

    #[test]
    fn rejects_irregular_timestamps() {
        let mut ep = synthetic(5, 9, false);
        ep.samples[3].timestamp += 0.01;
        assert!(matches!(ep.encode(), Err(EpisodeError::Invalid(_))));
    }

    #[test]
    fn id_hex_round_trip() {
        let id = EpisodeId([0xab; 16]);
        assert_eq!(EpisodeId::from_hex(&id.to_hex()), Some(id));
        assert_eq!(EpisodeId::from_hex("zz"), None);
    }

    proptest! {
        #[test]
        fn decode_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = Episode::decode(&bytes);
        }

        #[test]
        fn truncation_never_decodes(seed in 0u64..1000, cut in 1usize..64) {
            let bytes = synthetic(3, seed, seed % 2 == 0).encode().unwrap();
            prop_assert!(Episode::decode(&bytes[..bytes.len() - cut]).is_err());
        }
    }
}
