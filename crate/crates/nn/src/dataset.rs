//! Policy-ready training sets.
//!
//! Entries reference a shared pool of full-width u8 frames and carry the crop
//! window, so a sample's input stack is rebuilt on demand without storing
//! every cropped stack. File layout (little-endian):
//!
//! ```text
//! "SDDS" u32 version
//! u16 n_frames, height, full_width, crop_width, m_steps, grid_rows, grid_cols
//! u32 frame_count, frames (full_width·height bytes each)
//! u32 entry_count, entries:
//!     id[16] u32 sample_index u8 offset_index i32 offset u16 window_start
//!     u32 frame_ref × n_frames, f64 steer × m_steps,
//!     u8 has_depth [f32 × grid_rows·grid_cols]
//! sha256 of everything before it
//! ```

use sdai_core::episode::sha256;
use sdai_core::slit::AugmentedEpisode;

use crate::bytes::Reader;
use crate::{NnError, Result};

const MAGIC: &[u8; 4] = b"SDDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub episode_id: [u8; 16],
    pub sample_index: u32,
    pub offset_index: u8,
    pub offset: i32,
    pub window_start: u16,
    pub frame_refs: Vec<u32>,
    pub steer: Vec<f64>,
    pub depth: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_frames: usize,
    pub height: usize,
    pub full_width: usize,
    pub crop_width: usize,
    pub m_steps: usize,
    pub depth_grid: (usize, usize),
    pub frames: Vec<Vec<u8>>,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn new(n_frames: usize, height: usize, full_width: usize, crop_width: usize, m_steps: usize, depth_grid: (usize, usize)) -> Self {
        Self {
            n_frames,
            height,
            full_width,
            crop_width,
            m_steps,
            depth_grid,
            frames: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn shape_error(&self, what: String) -> NnError {
        NnError::Shape(format!("dataset: {what}"))
    }

    /// Appends all slit samples of an augmented episode.
    pub fn push_augmented(&mut self, aug: &AugmentedEpisode) -> Result<()> {
        if aug.full_width != self.full_width || aug.crop_width != self.crop_width || aug.height != self.height {
            return Err(self.shape_error(format!(
                "episode frames {}×{} cropped to {} do not match {}×{} cropped to {}",
                aug.full_width, aug.height, aug.crop_width, self.full_width, self.height, self.crop_width
            )));
        }
        let base = self.frames.len() as u32;
        for s in &aug.samples {
            self.check_entry(s.frame_refs.len(), s.steer.len(), s.depth.as_ref().map(Vec::len))?;
        }
        self.frames.extend(aug.frames.iter().cloned());
        for s in &aug.samples {
            self.entries.push(DatasetEntry {
                episode_id: aug.source_id.0,
                sample_index: s.sample_index,
                offset_index: s.offset_index,
                offset: s.offset,
                window_start: s.window_start,
                frame_refs: s.frame_refs.iter().map(|r| r + base).collect(),
                steer: s.steer.clone(),
                depth: s.depth.clone(),
            });
        }
        Ok(())
    }

    /// Appends one sample given its frames (newest first, each
    /// `full_width × height`).
    pub fn push_stack(&mut self, frames: Vec<Vec<u8>>, steer: Vec<f64>, depth: Option<Vec<f32>>) -> Result<()> {
        self.check_entry(frames.len(), steer.len(), depth.as_ref().map(Vec::len))?;
        if frames.iter().any(|f| f.len() != self.full_width * self.height) {
            return Err(self.shape_error("frame size mismatch".into()));
        }
        let base = self.frames.len() as u32;
        let n = frames.len() as u32;
        self.frames.extend(frames);
        let index = self.entries.len() as u32;
        self.entries.push(DatasetEntry {
            episode_id: [0; 16],
            sample_index: index,
            offset_index: 0,
            offset: 0,
            window_start: ((self.full_width - self.crop_width) / 2) as u16,
            frame_refs: (base..base + n).collect(),
            steer,
            depth,
        });
        Ok(())
    }

    fn check_entry(&self, n_frames: usize, m_steps: usize, depth: Option<usize>) -> Result<()> {
        if n_frames != self.n_frames || m_steps != self.m_steps {
            return Err(self.shape_error(format!(
                "entry with {n_frames} frames and {m_steps} labels, expected {} and {}",
                self.n_frames, self.m_steps
            )));
        }
        if let Some(d) = depth {
            if d != self.depth_grid.0 * self.depth_grid.1 {
                return Err(self.shape_error(format!("depth target with {d} cells")));
            }
        }
        Ok(())
    }

    /// Input stack of entry `i` as intensities in [0, 1].
    pub fn input(&self, i: usize, out: &mut Vec<f64>) {
        let e = &self.entries[i];
        let start = e.window_start as usize;
        out.clear();
        out.reserve(self.n_frames * self.height * self.crop_width);
        for &r in &e.frame_refs {
            let f = &self.frames[r as usize];
            for row in 0..self.height {
                let line = &f[row * self.full_width + start..row * self.full_width + start + self.crop_width];
                out.extend(line.iter().map(|&v| v as f64 / 255.0));
            }
        }
    }

    /// New dataset holding the listed entries; the frame pool is copied whole.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.n_frames, self.height, self.full_width, self.crop_width, self.m_steps, self.depth_grid);
        out.frames = self.frames.clone();
        out.entries = indices.iter().map(|&i| self.entries[i].clone()).collect();
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.n_frames,
            self.height,
            self.full_width,
            self.crop_width,
            self.m_steps,
            self.depth_grid.0,
            self.depth_grid.1,
        ] {
            b.extend_from_slice(&(v as u16).to_le_bytes());
        }
        b.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for f in &self.frames {
            b.extend_from_slice(f);
        }
        b.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&e.episode_id);
            b.extend_from_slice(&e.sample_index.to_le_bytes());
            b.push(e.offset_index);
            b.extend_from_slice(&e.offset.to_le_bytes());
            b.extend_from_slice(&e.window_start.to_le_bytes());
            for r in &e.frame_refs {
                b.extend_from_slice(&r.to_le_bytes());
            }
            for s in &e.steer {
                b.extend_from_slice(&s.to_le_bytes());
            }
            match &e.depth {
                None => b.push(0),
                Some(d) => {
                    b.push(1);
                    for v in d {
                        b.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let digest = sha256(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| NnError::Format {
            what: "dataset",
            message: m.to_string(),
        };
        if bytes.len() < 4 + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != digest {
            return Err(fmt("digest mismatch"));
        }
        let mut r = Reader::new(body, "dataset");
        r.take(4)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u16()? as usize;
        }
        let [n_frames, height, full_width, crop_width, m_steps, gr, gc] = dims;
        if crop_width > full_width {
            return Err(fmt("crop wider than frames"));
        }
        let mut ds = Dataset::new(n_frames, height, full_width, crop_width, m_steps, (gr, gc));
        let frame_len = full_width * height;
        let n = r.count(frame_len)?;
        for _ in 0..n {
            ds.frames.push(r.take(frame_len)?.to_vec());
        }
        let n = r.count(16 + 4 + 1 + 4 + 2 + 4 * n_frames + 8 * m_steps + 1)?;
        for _ in 0..n {
            let episode_id: [u8; 16] = r.take(16)?.try_into().unwrap();
            let sample_index = r.u32()?;
            let offset_index = r.u8()?;
            let offset = r.i32()?;
            let window_start = r.u16()?;
            if window_start as usize + crop_width > full_width {
                return Err(fmt("crop window outside frame"));
            }
            let frame_refs = (0..n_frames).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if frame_refs.iter().any(|&f| f as usize >= ds.frames.len()) {
                return Err(fmt("frame reference out of range"));
            }
            let steer = (0..m_steps).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let depth = match r.u8()? {
                0 => None,
                1 => Some((0..gr * gc).map(|_| r.f32()).collect::<Result<Vec<_>>>()?),
                _ => return Err(fmt("bad depth flag")),
            };
            ds.entries.push(DatasetEntry {
                episode_id,
                sample_index,
                offset_index,
                offset,
                window_start,
                frame_refs,
                steer,
                depth,
            });
        }
        if r.remaining() != 0 {
            return Err(fmt("trailing bytes"));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let mut ds = Dataset::new(2, 2, 4, 2, 3, (1, 1));
        ds.push_stack(vec![vec![0, 51, 102, 153, 204, 255, 1, 2], vec![9; 8]], vec![0.1, 0.2, 0.3], Some(vec![4.5]))
            .unwrap();
        ds.push_stack(vec![vec![7; 8], vec![8; 8]], vec![-0.1, 0.0, 0.1], None).unwrap();
        ds
    }

    #[test]
    fn input_crops_the_window() {
        let ds = sample();
        let mut x = Vec::new();
        ds.input(0, &mut x);
        assert_eq!(x.len(), 8);
        assert_eq!(&x[..4], &[51.0 / 255.0, 102.0 / 255.0, 1.0, 1.0 / 255.0]);
    }

    #[test]
    fn codec_round_trips() {
        let ds = sample();
        let bytes = ds.encode();
        assert_eq!(&bytes[..4], b"SDDS");
        let back = Dataset::decode(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn codec_rejects_corruption() {
        let bytes = sample().encode();
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(Dataset::decode(&bad).is_err());
        assert!(Dataset::decode(&bytes[..bytes.len() - 5]).is_err());
        assert!(Dataset::decode(b"nope").is_err());
    }

    #[test]
    fn push_checks_shapes() {
        let mut ds = sample();
        assert!(ds.push_stack(vec![vec![0; 8]], vec![0.0; 3], None).is_err());
        assert!(ds.push_stack(vec![vec![0; 8]; 2], vec![0.0; 2], None).is_err());
        assert!(ds.push_stack(vec![vec![0; 8]; 2], vec![0.0; 3], Some(vec![1.0, 2.0])).is_err());
    }
}
