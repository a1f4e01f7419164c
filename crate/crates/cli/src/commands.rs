//! The subcommands, callable from tests as plain functions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sdai_core::camera::{encode_pgm, quantize};
use sdai_core::rng::{derive_seed, seeded};
use sdai_core::slit::{crop_columns, StackLayout};
use sdai_core::{Episode, EpisodeId};
use sdai_drive::telemetry::{to_csv, tracking_rms};
use sdai_drive::{closed_loop_run, collect_expert_episode, Driver, EpisodeMetrics, RunOptions};
use sdai_nn::gradcheck::{gradcheck, GradcheckReport};
use sdai_nn::model::{load_model, save_model};
use sdai_nn::{forward, grad_cam, train::train_with, CamTarget, Dataset, PolicyParams, PolicySpec};
use sdai_platform::{augment_episodes, build_dataset, Client, DatasetFilter, Server, Storage};

use crate::config::{ExperimentConfig, Misalignment};
use crate::{CliError, Result};

/// Start-up transient excluded from the tracking RMS, seconds.
pub const RMS_AFTER_S: f64 = 1.0;

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join("config.txt"), cfg.to_kv_text().as_bytes())
}

#[derive(Debug, Clone)]
pub struct CollectedRun {
    pub seed: u64,
    pub id: EpisodeId,
    pub samples: usize,
    pub digest: [u8; 32],
    pub path: PathBuf,
}

/// Records `cfg.n_runs` expert episodes into `out/episodes`, uploading each
/// one when `upload` names a service address. An upload failure stops the
/// collection and reports how many runs made it.
pub fn collect(cfg: &ExperimentConfig, out: &Path, upload: Option<&str>) -> Result<Vec<CollectedRun>> {
    if cfg.n_runs == 0 {
        return Err(CliError::Usage("n_runs must be at least 1".into()));
    }
    prepare_out(out, cfg)?;
    let dir = out.join("episodes");
    fs::create_dir_all(&dir)?;
    let mut client = match upload {
        Some(addr) => Some(Client::connect(addr).map_err(|e| {
            CliError::Data(format!("service unreachable at {addr}: {e}; uploaded 0 of {} runs", cfg.n_runs))
        })?),
        None => None,
    };
    let mut runs = Vec::new();
    let mut csv = String::from("run,seed,episode_id,samples,sha256\n");
    for k in 0..cfg.n_runs {
        let seed = cfg.seed + k as u64;
        let ep = collect_expert_episode(&cfg.track, cfg.scenario_tag(), &cfg.sim, &cfg.camera, &cfg.pid, &cfg.collect, seed)?;
        let bytes = ep.encode()?;
        let path = dir.join(format!("{}.sdep", ep.id.to_hex()));
        write_atomic(&path, &bytes)?;
        let digest = sdai_core::episode::sha256(&bytes);
        if let Some(c) = client.as_mut() {
            if let Err(e) = c.upload_run(&bytes) {
                write_atomic(&out.join("collect.csv"), csv.as_bytes())?;
                return Err(CliError::Data(format!(
                    "upload of run {k} failed: {e}; uploaded {k} of {} runs",
                    cfg.n_runs
                )));
            }
        }
        csv.push_str(&format!("{k},{seed},{},{},{}\n", ep.id, ep.samples.len(), sdai_platform::storage::hex(&digest)));
        log::info!("run {k}: {} samples, episode {}", ep.samples.len(), ep.id);
        runs.push(CollectedRun { seed, id: ep.id, samples: ep.samples.len(), digest, path });
    }
    write_atomic(&out.join("collect.csv"), csv.as_bytes())?;
    Ok(runs)
}

/// Where training examples come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// every `*.sdep` file in a directory, in file-name order
    Episodes(PathBuf),
    /// runs in a data-platform storage directory
    Storage { dir: PathBuf, scenario_tag: Option<String> },
    /// an encoded dataset file
    Dataset(PathBuf),
}

/// Reads every episode file in `dir`, sorted by name.
pub fn episode_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sdep"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .sdep episodes in {}", dir.display())));
    }
    Ok(files)
}

/// Builds the training dataset; `baseline` disables slit augmentation.
pub fn load_dataset(cfg: &ExperimentConfig, source: &DataSource, baseline: bool) -> Result<Dataset> {
    let slit = if baseline { cfg.slit.center_only() } else { cfg.slit };
    let seed = derive_seed(cfg.train.seed, b"slit");
    Ok(match source {
        DataSource::Episodes(dir) => {
            let files = episode_files(dir)?;
            let episodes = files.iter().map(|p| {
                let bytes = fs::read(p)?;
                Episode::decode(&bytes).map_err(sdai_platform::PlatformError::from)
            });
            augment_episodes(episodes, &slit, &cfg.layout, seed)?
        }
        DataSource::Storage { dir, scenario_tag } => {
            let storage = Storage::open(dir)?;
            let filter = DatasetFilter { scenario_tag: scenario_tag.clone() };
            build_dataset(&storage, &filter, &slit, &cfg.layout, seed)?
        }
        DataSource::Dataset(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            Dataset::decode(&bytes)?
        }
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub entries: usize,
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
    pub model_path: PathBuf,
    pub params: PolicyParams,
}

/// Trains the policy and writes `model.sdmw` and `loss_trace.csv`.
pub fn train(cfg: &ExperimentConfig, source: &DataSource, baseline: bool, out: &Path) -> Result<TrainReport> {
    prepare_out(out, cfg)?;
    let data = load_dataset(cfg, source, baseline)?;
    if data.crop_width != cfg.policy.width || data.height != cfg.policy.height || data.n_frames != cfg.policy.n_frames {
        return Err(CliError::Data(format!(
            "dataset stacks {}×{}×{} do not match the policy input {}×{}×{}",
            data.n_frames, data.height, data.crop_width, cfg.policy.n_frames, cfg.policy.height, cfg.policy.width
        )));
    }
    log::info!("training on {} entries", data.len());
    let t0 = Instant::now();
    let outcome = train_with(&data, &cfg.policy, &cfg.train, |epoch, l| {
        log::info!("epoch {epoch}: loss {l:.6} ({:.0} s)", t0.elapsed().as_secs_f64());
    })?;
    let seconds = t0.elapsed().as_secs_f64();
    let model_path = out.join("model.sdmw");
    save_model(&model_path, &cfg.policy, &outcome.params)?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    write_atomic(&out.join("loss_trace.csv"), csv.as_bytes())?;
    Ok(TrainReport {
        entries: data.len(),
        loss_trace: outcome.loss_trace,
        seconds,
        model_path,
        params: outcome.params,
    })
}

/// The evaluated controller.
#[derive(Debug, Clone)]
pub enum ModelSource {
    /// pure pursuit on the true pose, standing in for a trained policy
    Expert,
    File(PathBuf),
    Loaded(PolicySpec, PolicyParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub misalignment: Misalignment,
    pub seed: u64,
    pub start_lateral: f64,
    pub metrics: EpisodeMetrics,
    pub tracking_rms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// centered start, no misalignment
    pub nominal: EvalRow,
}

pub const METRICS_HEADER: &str =
    "shift_px,yaw_rad,seed,start_lateral_m,completion,mean_abs_lateral_error_m,max_abs_lateral_error_m,departed,steps,tracking_rms_rad";

impl EvalRow {
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.misalignment.shift_px,
            self.misalignment.yaw_rad,
            self.seed,
            self.start_lateral,
            m.completion,
            m.mean_abs_lateral_error,
            m.max_abs_lateral_error,
            m.departed,
            m.steps,
            self.tracking_rms.map(|r| r.to_string()).unwrap_or_default()
        )
    }
}

/// Evaluation start offset for `seed`.
pub fn eval_start_lateral(cfg: &ExperimentConfig, seed: u64) -> f64 {
    use rand::Rng;
    if cfg.eval_start_lateral == 0.0 {
        return 0.0;
    }
    seeded(derive_seed(seed, b"eval-start")).random_range(-cfg.eval_start_lateral..=cfg.eval_start_lateral)
}

/// Runs one closed-loop episode per (misalignment, seed) plus the nominal
/// run, writing `metrics.csv` and `telemetry_nominal.csv`.
pub fn eval(cfg: &ExperimentConfig, model: &ModelSource, out: &Path) -> Result<EvalReport> {
    prepare_out(out, cfg)?;
    let loaded = match model {
        ModelSource::File(p) => Some(load_model(p).map_err(|e| CliError::Data(format!("model {}: {e}", p.display())))?),
        ModelSource::Loaded(s, p) => Some((s.clone(), p.clone())),
        ModelSource::Expert => None,
    };
    let driver = match &loaded {
        Some((spec, params)) => Driver::Policy { params, spec },
        None => Driver::Expert { lookahead: cfg.collect.lookahead },
    };
    let run = |m: Misalignment, seed: u64, start_lateral: f64| -> Result<(EvalRow, String)> {
        let mut cam = cfg.camera;
        cam.horizontal_shift += m.shift_px;
        cam.yaw_offset += m.yaw_rad;
        let opts = RunOptions { start_lateral, ..RunOptions::for_track(&cfg.track, &cfg.sim) };
        let r = closed_loop_run(driver, &cfg.track, &cfg.sim, &cam, &cfg.pid, &opts)?;
        let row = EvalRow {
            misalignment: m,
            seed,
            start_lateral,
            metrics: r.metrics,
            tracking_rms: tracking_rms(&r.telemetry, RMS_AFTER_S),
        };
        Ok((row, to_csv(&r.telemetry)))
    };

    let mut rows = Vec::new();
    let mut csv = format!("{METRICS_HEADER}\n");
    for m in cfg.misalignments() {
        for &seed in &cfg.eval_seeds {
            let (row, _) = run(m, seed, eval_start_lateral(cfg, seed))?;
            csv.push_str(&row.to_csv());
            csv.push('\n');
            rows.push(row);
        }
    }
    let (nominal, telemetry) = run(Misalignment { shift_px: 0.0, yaw_rad: 0.0 }, 0, 0.0)?;
    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
    write_atomic(&out.join("telemetry_nominal.csv"), telemetry.as_bytes())?;
    Ok(EvalReport { rows, nominal })
}

/// Alpha-blends a [0, 1] attention map over a [0, 1] image: white at 50%
/// opacity scaled by the attention value, so a zero map leaves the image
/// unchanged.
pub fn overlay(image: &[f64], attention: &[f64]) -> Vec<f64> {
    image
        .iter()
        .zip(attention)
        .map(|(&x, &a)| {
            let w = 0.5 * a.clamp(0.0, 1.0);
            ((1.0 - w) * x.clamp(0.0, 1.0) + w).clamp(0.0, 1.0)
        })
        .collect()
}

/// Depth shown bright when near, black at or beyond this range, meters.
pub const DEPTH_VIZ_RANGE: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct AttentionReport {
    pub width: usize,
    pub height: usize,
    /// blended overlay in [0, 1]
    pub overlay: Vec<f64>,
    pub attention: Vec<f64>,
    /// predicted coarse depth, row-major, when the model has the depth head
    pub depth: Option<Vec<f64>>,
}

/// The policy input for sample `index` of an episode: centered crops,
/// newest first, scaled to [0, 1].
pub fn episode_input(ep: &Episode, spec: &PolicySpec, index: usize) -> Result<Vec<f64>> {
    if index >= ep.samples.len() {
        return Err(CliError::Data(format!("sample index {index} out of range (episode has {})", ep.samples.len())));
    }
    let (w, h) = (ep.width(), ep.height());
    if spec.width > w || spec.height != h {
        return Err(CliError::Data(format!("policy input {}×{} does not fit episode frames {}×{}", spec.height, spec.width, h, w)));
    }
    let mut layout = StackLayout::for_dt(ep.dt);
    layout.n_frames = spec.n_frames;
    let start = (w - spec.width) / 2;
    let mut x = Vec::with_capacity(spec.input_len());
    for j in layout.stack_indices(index) {
        let crop = crop_columns(&ep.samples[j].pixels, w, h, start, spec.width);
        x.extend(crop.iter().map(|&v| v as f64 / 255.0));
    }
    Ok(x)
}

/// Grad-CAM of the first steering step for one episode sample. Writes
/// `input.pgm`, `attention.pgm` (the overlay) and, with a depth head,
/// `depth.pgm` at the policy input size.
pub fn attention(model: &Path, episode: &Path, index: usize, out: &Path) -> Result<AttentionReport> {
    let (spec, params) = load_model(model).map_err(|e| CliError::Data(format!("model {}: {e}", model.display())))?;
    let bytes = fs::read(episode).map_err(|e| CliError::Data(format!("cannot read {}: {e}", episode.display())))?;
    let ep = Episode::decode(&bytes)?;
    let x = episode_input(&ep, &spec, index)?;
    let map = grad_cam(&params, &spec, &x, CamTarget::Step0Steer)?;
    if map.values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("attention map is not finite".into()));
    }
    let plane = spec.height * spec.width;
    let image = &x[..plane];
    let blended = overlay(image, &map.values);
    let pgm = |v: &[f64]| encode_pgm(spec.width, spec.height, &v.iter().map(|&p| quantize(p)).collect::<Vec<u8>>());

    fs::create_dir_all(out)?;
    write_atomic(&out.join("input.pgm"), &pgm(image))?;
    write_atomic(&out.join("attention.pgm"), &pgm(&blended))?;
    let depth = forward(&params, &spec, &x)?.depth;
    if let Some(d) = &depth {
        let (gr, gc) = spec.depth_grid();
        let viz: Vec<f64> = (0..plane)
            .map(|p| {
                let (r, c) = (p / spec.width, p % spec.width);
                let z = d[(r * gr / spec.height) * gc + c * gc / spec.width];
                (1.0 - z / DEPTH_VIZ_RANGE).clamp(0.0, 1.0)
            })
            .collect();
        write_atomic(&out.join("depth.pgm"), &pgm(&viz))?;
    }
    Ok(AttentionReport {
        width: spec.width,
        height: spec.height,
        overlay: blended,
        attention: map.values,
        depth,
    })
}

/// Pass threshold on the worst relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Runs the finite-difference suite for every seed; fails with a numerical
/// error if any checked parameter exceeds the tolerance.
pub fn gradcheck_all(seeds: &[u64], min_params: usize) -> Result<Vec<GradcheckReport>> {
    if seeds.is_empty() || min_params == 0 {
        return Err(CliError::Usage("need at least one seed and one parameter".into()));
    }
    let reports = seeds.iter().map(|&s| gradcheck(s, min_params)).collect::<Result<Vec<_>, _>>()?;
    Ok(reports)
}

pub fn gradcheck_passed(reports: &[GradcheckReport]) -> bool {
    reports.iter().all(|r| r.max_rel_error < GRADCHECK_TOLERANCE)
}

/// Binds the data-platform service; the caller decides whether to block.
pub fn bind_server(storage: &Path, host: &str, port: u16) -> Result<Server> {
    Server::bind(storage, (host, port)).map_err(|e| CliError::Data(format!("cannot serve on {host}:{port}: {e}")))
}
