//! Model files.
//!
//! ```text
//! "SDMW" u32 version
//! spec: u16 n_frames, height, width, stem_channels, m_steps; u8 aux_depth;
//!       u8 block count, (u16 channels, u8 stride) per block; u64 init_seed
//! u32 tensor count, per tensor:
//!       u16 name length, name, u8 rank, u32 dims, f64 values
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use crate::bytes::Reader;
use crate::policy::{BlockSpec, PolicyParams, PolicySpec};
use crate::tensor::Tensor;
use crate::Result;

const MAGIC: &[u8; 4] = b"SDMW";
const VERSION: u32 = 1;

pub fn encode_model(spec: &PolicySpec, params: &PolicyParams) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    for v in [spec.n_frames, spec.height, spec.width, spec.stem_channels, spec.m_steps] {
        b.extend_from_slice(&(v as u16).to_le_bytes());
    }
    b.push(spec.aux_depth as u8);
    b.push(spec.blocks.len() as u8);
    for blk in &spec.blocks {
        b.extend_from_slice(&(blk.channels as u16).to_le_bytes());
        b.push(blk.stride as u8);
    }
    b.extend_from_slice(&params.init_seed.to_le_bytes());
    b.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.push(t.shape().len() as u8);
        for &d in t.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

pub fn decode_model(bytes: &[u8]) -> Result<(PolicySpec, PolicyParams)> {
    let mut r = Reader::new(bytes, "model");
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u16()? as usize;
    }
    let [n_frames, height, width, stem_channels, m_steps] = dims;
    let aux_depth = match r.u8()? {
        0 => false,
        1 => true,
        _ => return Err(r.err("bad aux flag")),
    };
    let n_blocks = r.u8()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let channels = r.u16()? as usize;
        let stride = r.u8()? as usize;
        blocks.push(BlockSpec { channels, stride });
    }
    let spec = PolicySpec {
        n_frames,
        height,
        width,
        stem_channels,
        blocks,
        m_steps,
        aux_depth,
    };
    spec.validate()?;
    let init_seed = r.u64()?;
    let n = r.count(3)?;
    let mut named = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.err("tensor too large"))?;
        if count.saturating_mul(8) > r.remaining() {
            return Err(r.err(format!("{name}: truncated values")));
        }
        let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::from_vec(&shape, values)?));
    }
    if r.remaining() != 0 {
        return Err(r.err("trailing bytes"));
    }
    let params = PolicyParams::from_tensors(&spec, named, init_seed)?;
    Ok((spec, params))
}

pub fn save_model(path: &Path, spec: &PolicySpec, params: &PolicyParams) -> Result<()> {
    std::fs::write(path, encode_model(spec, params))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(PolicySpec, PolicyParams)> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{forward, random_input};
    use sdai_core::rng::seeded;

    #[test]
    fn save_load_forward_is_bit_identical() {
        let spec = PolicySpec::default();
        let p = PolicyParams::init(&spec, 21);
        let bytes = encode_model(&spec, &p);
        assert_eq!(&bytes[..4], b"SDMW");
        let (spec2, p2) = decode_model(&bytes).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(p2, p);
        assert_eq!(encode_model(&spec2, &p2), bytes);
        let x = random_input(&spec, &mut seeded(1));
        let a = forward(&p, &spec, &x).unwrap();
        let b = forward(&p2, &spec2, &x).unwrap();
        assert_eq!(a.steer, b.steer);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn rejects_corrupt_files() {
        let spec = PolicySpec::default();
        let bytes = encode_model(&spec, &PolicyParams::init(&spec, 1));
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_model(b"SDMX\x01\0\0\0").is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_model(&bad).is_err());
    }
}
