//! On-disk store for episodes and model files.
//!
//! ```text
//! <root>/runs/<digest>.sdep        episode bytes
//! <root>/runs/<digest>.manifest    written last; its presence commits the run
//! <root>/models/<tag>/v<N>.sdmw    model bytes
//! <root>/models/<tag>/v<N>.manifest
//! <root>/tmp/                      staging, emptied on open
//! ```
//!
//! Every file is staged in `tmp/`, synced and renamed into place, so a crash
//! leaves either nothing or a complete file. A run or model without its
//! manifest is never listed and is removed on the next open.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use sdai_core::episode::sha256;
use sdai_core::{Episode, EpisodeId};

use crate::protocol::{Cursor, Encode};
use crate::{PlatformError, Result};

pub type Digest = [u8; 32];

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub episode_id: EpisodeId,
    pub byte_len: u64,
    pub digest: Digest,
    /// milliseconds since the Unix epoch
    pub upload_time_ms: u64,
    /// commit order, starting at 0
    pub seq: u64,
    pub scenario_tag: String,
    pub sample_count: u32,
}

impl Encode for RunManifest {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.episode_id.0);
        out.extend_from_slice(&self.byte_len.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.upload_time_ms.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        self.scenario_tag.encode(out);
        out.extend_from_slice(&self.sample_count.to_le_bytes());
    }

    fn decode(c: &mut Cursor<'_>) -> Result<Self> {
        Ok(Self {
            episode_id: EpisodeId(c.array()?),
            byte_len: c.u64()?,
            digest: c.array()?,
            upload_time_ms: c.u64()?,
            seq: c.u64()?,
            scenario_tag: String::decode(c)?,
            sample_count: c.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelManifest {
    pub tag: String,
    /// 1 for the first upload under a tag
    pub version: u32,
    pub byte_len: u64,
    pub digest: Digest,
    pub upload_time_ms: u64,
}

impl Encode for ModelManifest {
    fn encode(&self, out: &mut Vec<u8>) {
        self.tag.encode(out);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.byte_len.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.upload_time_ms.to_le_bytes());
    }

    fn decode(c: &mut Cursor<'_>) -> Result<Self> {
        Ok(Self {
            tag: String::decode(c)?,
            version: c.u32()?,
            byte_len: c.u64()?,
            digest: c.array()?,
            upload_time_ms: c.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadOutcome {
    pub manifest: RunManifest,
    /// the content was already stored; `manifest` is the original one
    pub duplicate: bool,
}

/// Model tags name directories, so they are restricted to
/// `[A-Za-z0-9._-]`, 1 to 64 bytes, and may not start with a dot.
pub fn check_model_tag(tag: &str) -> Result<()> {
    let ok = !tag.is_empty()
        && tag.len() <= 64
        && !tag.starts_with('.')
        && tag.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b));
    if ok {
        Ok(())
    } else {
        Err(PlatformError::Invalid(format!("bad model tag {tag:?}")))
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct Storage {
    root: PathBuf,
    /// serializes all mutations
    commit: Mutex<()>,
    runs: RwLock<Arc<Vec<RunManifest>>>,
    models: RwLock<Arc<BTreeMap<String, Vec<ModelManifest>>>>,
    staging: AtomicU64,
}

impl Storage {
    /// Opens (creating if needed) a store, discarding staged files and
    /// uncommitted runs left by an interrupted writer.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for d in ["runs", "models", "tmp"] {
            fs::create_dir_all(root.join(d))?;
        }
        for entry in fs::read_dir(root.join("tmp"))? {
            let p = entry?.path();
            if p.is_file() {
                fs::remove_file(&p)?;
            }
        }
        let runs = load_runs(&root.join("runs"))?;
        let mut models = BTreeMap::new();
        for entry in fs::read_dir(root.join("models"))? {
            let dir = entry?.path();
            if !dir.is_dir() {
                continue;
            }
            let versions = load_models(&dir)?;
            if let (Some(name), false) = (dir.file_name().and_then(|n| n.to_str()), versions.is_empty()) {
                models.insert(name.to_string(), versions);
            }
        }
        Ok(Self {
            root,
            commit: Mutex::new(()),
            runs: RwLock::new(Arc::new(runs)),
            models: RwLock::new(Arc::new(models)),
            staging: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to a staging file and atomically moves it to `dest`.
    fn place(&self, dest: &Path, bytes: &[u8]) -> Result<()> {
        let n = self.staging.fetch_add(1, Ordering::Relaxed);
        let tmp = self.root.join("tmp").join(format!("{}-{n}.part", std::process::id()));
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, dest)?;
        if let Some(dir) = dest.parent() {
            // directory sync makes the rename durable; not supported everywhere
            let _ = File::open(dir).and_then(|d| d.sync_all());
        }
        Ok(())
    }

    /// Stores an encoded episode. `declared` is the digest the sender
    /// computed; the payload is rejected if it differs.
    pub fn upload_run(&self, bytes: &[u8], declared: Option<&Digest>) -> Result<UploadOutcome> {
        let digest = sha256(bytes);
        if declared.is_some_and(|d| *d != digest) {
            return Err(PlatformError::DigestMismatch);
        }
        let ep = Episode::decode(bytes)?;
        let _guard = self.commit.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.runs();
        if let Some(m) = current.iter().find(|m| m.digest == digest) {
            return Ok(UploadOutcome { manifest: m.clone(), duplicate: true });
        }
        let manifest = RunManifest {
            episode_id: ep.id,
            byte_len: bytes.len() as u64,
            digest,
            upload_time_ms: now_ms(),
            seq: current.last().map_or(0, |m| m.seq + 1),
            scenario_tag: ep.scenario_tag,
            sample_count: ep.samples.len() as u32,
        };
        let stem = self.root.join("runs").join(hex(&digest));
        self.place(&stem.with_extension("sdep"), bytes)?;
        self.place(&stem.with_extension("manifest"), &manifest.to_bytes())?;
        let mut next = Vec::clone(&current);
        next.push(manifest.clone());
        *self.runs.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(UploadOutcome { manifest, duplicate: false })
    }

    /// Snapshot of the committed runs in commit order.
    pub fn runs(&self) -> Arc<Vec<RunManifest>> {
        self.runs.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn list_runs(&self, scenario_tag: Option<&str>) -> Vec<RunManifest> {
        self.runs().iter().filter(|m| scenario_tag.is_none_or(|t| m.scenario_tag == t)).cloned().collect()
    }

    /// Bytes of the earliest committed run with this id, checked against
    /// its manifest digest.
    pub fn get_run(&self, id: &EpisodeId) -> Result<Vec<u8>> {
        let runs = self.runs();
        let m = runs.iter().find(|m| m.episode_id == *id).ok_or_else(|| PlatformError::NotFound(format!("run {id}")))?;
        self.read_run(m)
    }

    pub fn read_run(&self, m: &RunManifest) -> Result<Vec<u8>> {
        let bytes = fs::read(self.root.join("runs").join(hex(&m.digest)).with_extension("sdep"))?;
        if sha256(&bytes) != m.digest {
            return Err(PlatformError::Corrupt(format!("run {} does not match its digest", m.episode_id)));
        }
        Ok(bytes)
    }

    /// Stores a model file as the next version under `tag`.
    pub fn put_model(&self, tag: &str, bytes: &[u8]) -> Result<ModelManifest> {
        check_model_tag(tag)?;
        sdai_nn::model::decode_model(bytes)?;
        let _guard = self.commit.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.models();
        let version = current.get(tag).and_then(|v| v.last()).map_or(1, |m| m.version + 1);
        let manifest = ModelManifest {
            tag: tag.to_string(),
            version,
            byte_len: bytes.len() as u64,
            digest: sha256(bytes),
            upload_time_ms: now_ms(),
        };
        let dir = self.root.join("models").join(tag);
        fs::create_dir_all(&dir)?;
        let stem = dir.join(format!("v{version:06}"));
        self.place(&stem.with_extension("sdmw"), bytes)?;
        self.place(&stem.with_extension("manifest"), &manifest.to_bytes())?;
        let mut next = BTreeMap::clone(&current);
        next.entry(tag.to_string()).or_insert_with(Vec::new).push(manifest.clone());
        *self.models.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(manifest)
    }

    pub fn models(&self) -> Arc<BTreeMap<String, Vec<ModelManifest>>> {
        self.models.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Latest version under `tag`.
    pub fn get_model(&self, tag: &str) -> Result<(ModelManifest, Vec<u8>)> {
        let models = self.models();
        let m = models
            .get(tag)
            .and_then(|v| v.last())
            .ok_or_else(|| PlatformError::NotFound(format!("model {tag:?}")))?
            .clone();
        let path = self.root.join("models").join(tag).join(format!("v{:06}", m.version)).with_extension("sdmw");
        let bytes = fs::read(path)?;
        if sha256(&bytes) != m.digest {
            return Err(PlatformError::Corrupt(format!("model {tag} v{} does not match its digest", m.version)));
        }
        Ok((m, bytes))
    }
}

fn read_manifest<T: Encode>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    T::from_bytes(&bytes).map_err(|e| PlatformError::Corrupt(format!("{}: {e}", path.display())))
}

/// Committed runs sorted by commit order; payload files without a manifest
/// are deleted.
fn load_runs(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut runs = Vec::new();
    let mut payloads = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("manifest") => {
                let m: RunManifest = read_manifest(&p)?;
                let payload = p.with_extension("sdep");
                if fs::metadata(&payload).map(|md| md.len()).ok() != Some(m.byte_len) {
                    return Err(PlatformError::Corrupt(format!("{} has no matching payload", p.display())));
                }
                runs.push(m);
            }
            Some("sdep") => payloads.push(p),
            _ => {}
        }
    }
    for p in payloads {
        if !p.with_extension("manifest").exists() {
            fs::remove_file(&p)?;
        }
    }
    runs.sort_by_key(|m| m.seq);
    Ok(runs)
}

fn load_models(dir: &Path) -> Result<Vec<ModelManifest>> {
    let mut versions = Vec::new();
    let mut payloads = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("manifest") => versions.push(read_manifest::<ModelManifest>(&p)?),
            Some("sdmw") => payloads.push(p),
            _ => {}
        }
    }
    for p in payloads {
        if !p.with_extension("manifest").exists() {
            fs::remove_file(&p)?;
        }
    }
    versions.sort_by_key(|m| m.version);
    Ok(versions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdai_core::episode::Source;
    use sdai_core::rng::seeded;
    use sdai_core::{CameraIntrinsics, Sample, VehicleState};

    pub(crate) fn tiny_episode(seed: u64, tag: &str) -> Vec<u8> {
        let mut rng = seeded(seed);
        let cam = CameraIntrinsics { width_full: 8, height: 4, ..CameraIntrinsics::default() };
        let samples = (0..3)
            .map(|i| Sample {
                timestamp: i as f64 * 0.1,
                state: VehicleState { x: i as f64, y: 0.0, heading: 0.0, speed: 5.0, steer: 0.0 },
                pixels: vec![i as u8; 32],
                depth: None,
                steer: vec![0.01 * i as f64; 2],
            })
            .collect();
        Episode {
            id: EpisodeId::random(&mut rng),
            scenario_tag: tag.into(),
            dt: 0.1,
            camera: cam,
            n_frames: 2,
            m_steps: 2,
            source: Source::Expert,
            samples,
        }
        .encode()
        .unwrap()
    }

    #[test]
    fn upload_list_get_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let st = Storage::open(dir.path()).unwrap();
        let bytes = tiny_episode(1, "s_curve");
        let first = st.upload_run(&bytes, Some(&sha256(&bytes))).unwrap();
        assert!(!first.duplicate);
        assert_eq!(first.manifest.sample_count, 3);
        let again = st.upload_run(&bytes, None).unwrap();
        assert!(again.duplicate);
        assert_eq!(again.manifest, first.manifest);
        assert_eq!(st.list_runs(None).len(), 1);
        assert_eq!(fs::read_dir(dir.path().join("runs")).unwrap().count(), 2);
        assert_eq!(st.get_run(&first.manifest.episode_id).unwrap(), bytes);

        st.upload_run(&tiny_episode(2, "straight"), None).unwrap();
        assert_eq!(st.list_runs(Some("straight")).len(), 1);
        assert_eq!(st.list_runs(None).iter().map(|m| m.seq).collect::<Vec<_>>(), vec![0, 1]);

        let reopened = Storage::open(dir.path()).unwrap();
        assert_eq!(*reopened.runs(), *st.runs());
    }

    #[test]
    fn rejects_bad_digest_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let st = Storage::open(dir.path()).unwrap();
        let bytes = tiny_episode(1, "s_curve");
        assert!(matches!(st.upload_run(&bytes, Some(&[0; 32])), Err(PlatformError::DigestMismatch)));
        assert!(matches!(st.upload_run(&bytes[..bytes.len() - 10], None), Err(PlatformError::Episode(_))));
        assert!(st.list_runs(None).is_empty());
        assert!(matches!(st.get_run(&EpisodeId([9; 16])), Err(PlatformError::NotFound(_))));
    }

    #[test]
    fn interrupted_writes_are_invisible_and_cleaned() {
        let dir = tempfile::tempdir().unwrap();
        {
            let st = Storage::open(dir.path()).unwrap();
            st.upload_run(&tiny_episode(1, "a"), None).unwrap();
        }
        // a writer killed while staging, and one killed between the payload
        // rename and the manifest rename
        fs::write(dir.path().join("tmp/123-0.part"), b"SDEP partial").unwrap();
        let orphan = dir.path().join("runs").join(format!("{}.sdep", hex(&[7; 32])));
        fs::write(&orphan, tiny_episode(2, "a")).unwrap();
        let st = Storage::open(dir.path()).unwrap();
        assert_eq!(st.list_runs(None).len(), 1);
        assert!(!orphan.exists());
        assert_eq!(fs::read_dir(dir.path().join("tmp")).unwrap().count(), 0);
    }

    #[test]
    fn model_versions() {
        let dir = tempfile::tempdir().unwrap();
        let st = Storage::open(dir.path()).unwrap();
        let spec = sdai_nn::PolicySpec::default();
        let a = sdai_nn::model::encode_model(&spec, &sdai_nn::PolicyParams::init(&spec, 1));
        let b = sdai_nn::model::encode_model(&spec, &sdai_nn::PolicyParams::init(&spec, 2));
        assert_eq!(st.put_model("slit", &a).unwrap().version, 1);
        assert_eq!(st.put_model("slit", &b).unwrap().version, 2);
        let (m, bytes) = st.get_model("slit").unwrap();
        assert_eq!((m.version, bytes == b), (2, true));
        assert!(matches!(st.get_model("other"), Err(PlatformError::NotFound(_))));
        assert!(st.put_model("../x", &a).is_err());
        assert!(st.put_model("junk", b"not a model").is_err());
        let reopened = Storage::open(dir.path()).unwrap();
        assert_eq!(reopened.get_model("slit").unwrap().0.version, 2);
    }
}
