use std::io::Write;
use std::net::TcpStream;
use std::thread;
use std::time::Instant;

use sdai_core::episode::{sha256, Source};
use sdai_core::rng::seeded;
use sdai_core::{CameraIntrinsics, Episode, EpisodeId, Sample, VehicleState};
use sdai_platform::protocol::{read_frame, write_frame, PROTOCOL_ERROR};
use sdai_platform::{Client, PlatformError, Server, Storage};

/// A run-sized episode: 128×64 frames, depth on every tenth sample.
fn episode(seed: u64, tag: &str, n: usize) -> Vec<u8> {
    let mut rng = seeded(seed);
    let id = EpisodeId::random(&mut rng);
    let samples = (0..n)
        .map(|i| Sample {
            timestamp: i as f64 * 0.1,
            state: VehicleState { x: i as f64 * 0.5, y: 0.01 * seed as f64, heading: 0.0, speed: 5.0, steer: 0.0 },
            pixels: (0..128 * 64).map(|p| ((p * 7 + i + seed as usize) % 256) as u8).collect(),
            depth: (i % 10 == 0).then(|| vec![5.0; 128 * 64]),
            steer: vec![0.0; 5],
        })
        .collect();
    Episode {
        id,
        scenario_tag: tag.into(),
        dt: 0.1,
        camera: CameraIntrinsics::default(),
        n_frames: 6,
        m_steps: 5,
        source: Source::Expert,
        samples,
    }
    .encode()
    .unwrap()
}

fn start() -> (tempfile::TempDir, std::net::SocketAddr) {
    let dir = tempfile::tempdir().unwrap();
    let (addr, _) = Server::bind(dir.path(), "127.0.0.1:0").unwrap().spawn().unwrap();
    (dir, addr)
}

#[test]
fn upload_then_list_and_dedup() {
    let (dir, addr) = start();
    let mut c = Client::connect(addr).unwrap();
    let bytes = episode(1, "s_curve", 40);
    let up = c.upload_run(&bytes).unwrap();
    assert!(!up.duplicate);
    let runs = c.list_runs(None).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].digest, sha256(&bytes));
    assert_eq!(runs[0].byte_len, bytes.len() as u64);

    let again = c.upload_run(&bytes).unwrap();
    assert!(again.duplicate);
    assert_eq!(again.manifest, up.manifest);
    assert_eq!(c.list_runs(None).unwrap().len(), 1);
    let stored = std::fs::read_dir(dir.path().join("runs")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "sdep").count();
    assert_eq!(stored, 1);

    assert_eq!(c.get_run(&up.manifest.episode_id).unwrap(), bytes);
    assert!(matches!(c.get_run(&EpisodeId([0; 16])), Err(PlatformError::NotFound(_))));
    assert!(c.list_runs(Some("loop")).unwrap().is_empty());
}

#[test]
fn hundred_fifty_sequential_uploads() {
    let (_dir, addr) = start();
    let mut c = Client::connect(addr).unwrap();
    let runs: Vec<Vec<u8>> = (0..150).map(|i| episode(i, "s_curve", 60)).collect();
    let t = Instant::now();
    for r in &runs {
        assert!(!c.upload_run(r).unwrap().duplicate);
    }
    let listed = c.list_runs(Some("s_curve")).unwrap();
    let elapsed = t.elapsed();
    assert_eq!(listed.len(), 150);
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");
    let seqs: Vec<u64> = listed.iter().map(|m| m.seq).collect();
    assert_eq!(seqs, (0..150).collect::<Vec<_>>());
}

#[test]
fn concurrent_distinct_uploads_all_land() {
    let (_dir, addr) = start();
    let workers: Vec<_> = (0..6)
        .map(|w| {
            thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                for i in 0..8 {
                    let up = c.upload_run(&episode(1000 + w * 100 + i, "s_curve", 20)).unwrap();
                    assert!(!up.duplicate);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    let runs = Client::connect(addr).unwrap().list_runs(None).unwrap();
    assert_eq!(runs.len(), 48);
    let mut seqs: Vec<u64> = runs.iter().map(|m| m.seq).collect();
    seqs.dedup();
    assert_eq!(seqs.len(), 48);
}

#[test]
fn abandoned_upload_is_never_visible() {
    let (dir, addr) = start();
    let mut c = Client::connect(addr).unwrap();
    c.upload_run(&episode(1, "s_curve", 10)).unwrap();

    // declare a large frame, send part of it, and vanish
    let bytes = episode(2, "s_curve", 200);
    let mut raw = TcpStream::connect(addr).unwrap();
    raw.write_all(&((bytes.len() + 33) as u32).to_le_bytes()).unwrap();
    raw.write_all(&[1]).unwrap();
    raw.write_all(&sha256(&bytes)).unwrap();
    raw.write_all(&bytes[..bytes.len() / 2]).unwrap();
    drop(raw);

    let runs = c.list_runs(None).unwrap();
    assert_eq!(runs.len(), 1);
    drop(c);
    // the same holds for a fresh process opening the directory
    assert_eq!(Storage::open(dir.path()).unwrap().list_runs(None).len(), 1);
}

#[test]
fn bad_digest_and_malformed_frames() {
    let (_dir, addr) = start();
    let bytes = episode(3, "s_curve", 5);
    let mut raw = TcpStream::connect(addr).unwrap();
    let mut payload = vec![0u8; 32];
    payload.extend_from_slice(&bytes);
    write_frame(&mut raw, 1, &payload).unwrap();
    let (status, msg) = read_frame(&mut raw).unwrap().unwrap();
    assert_eq!(status, 2, "{}", String::from_utf8_lossy(&msg));
    // the connection survives a rejected request
    write_frame(&mut raw, 2, &[0]).unwrap();
    assert_eq!(read_frame(&mut raw).unwrap().unwrap().0, 0);

    // unknown opcode: protocol error, then the server closes
    write_frame(&mut raw, 99, b"").unwrap();
    assert_eq!(read_frame(&mut raw).unwrap().unwrap().0, PROTOCOL_ERROR);
    assert!(read_frame(&mut raw).unwrap().is_none());

    // zero-length frame
    let mut raw = TcpStream::connect(addr).unwrap();
    raw.write_all(&[0, 0, 0, 0]).unwrap();
    assert_eq!(read_frame(&mut raw).unwrap().unwrap().0, PROTOCOL_ERROR);
    assert!(Client::connect(addr).unwrap().list_runs(None).unwrap().is_empty());
}

#[test]
fn models_are_versioned_by_tag() {
    let (_dir, addr) = start();
    let mut c = Client::connect(addr).unwrap();
    let spec = sdai_nn::PolicySpec::default();
    let v1 = sdai_nn::model::encode_model(&spec, &sdai_nn::PolicyParams::init(&spec, 1));
    let v2 = sdai_nn::model::encode_model(&spec, &sdai_nn::PolicyParams::init(&spec, 2));
    assert_eq!(c.put_model("slit", &v1).unwrap().version, 1);
    assert_eq!(c.put_model("slit", &v2).unwrap().version, 2);
    let (m, bytes) = c.get_model("slit").unwrap();
    assert_eq!(m.version, 2);
    assert_eq!(bytes, v2);
    assert!(matches!(c.get_model("baseline"), Err(PlatformError::NotFound(_))));
    assert!(matches!(c.put_model("bad tag", &v1), Err(PlatformError::Invalid(_))));
}
