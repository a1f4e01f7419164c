//! The experiment configuration: one `key=value` file plus `--set` overrides.
//! Every key has a default, so an empty file is a valid configuration.

use std::path::Path;

use sdai_core::kv::KvMap;
use sdai_core::slit::StackLayout;
use sdai_core::{CameraIntrinsics, SimConfig, SlitConfig, Track};
use sdai_drive::{CollectConfig, PidGains};
use sdai_nn::{LossWeights, Optimizer, PolicySpec, TrainConfig};

use crate::{CliError, Result};

/// Pipeline slit recovery gain, rad per meter of pseudo displacement. A crop
/// shift is close to a pure camera rotation, and this value makes the label
/// change per radian of crop (gain · z_ref) equal the expert's heading gain
/// 2L / lookahead.
pub const RECOVERY_GAIN: f64 = 0.29;

/// Epochs over the 150-run set at stride 10; about 9 minutes on one core.
pub const EPOCHS: usize = 12;

/// Every key the tools read. Anything else is rejected so a typo cannot
/// silently fall back to a default.
pub const KNOWN_KEYS: &[&str] = &[
    // track
    "track",
    "track_length",
    "track_straight",
    "track_radius",
    "lane_half_width",
    // simulator
    "wheelbase",
    "dt",
    "speed",
    "steer_max",
    "steer_rate_max",
    "sim_seed",
    // camera
    "cam_width",
    "cam_height",
    "cam_focal",
    "cam_mount_height",
    "cam_pitch",
    "cam_yaw_offset",
    "cam_horizontal_shift",
    // slit augmentation
    "crop_width",
    "offset_max",
    "z_ref",
    "recovery_gain",
    "offsets_per_sample",
    "sample_stride",
    // PID
    "pid_kp",
    "pid_ki",
    "pid_kd",
    "pid_integral_limit",
    "pid_output_limit",
    // collection
    "n_runs",
    "seed",
    "n_frames",
    "m_steps",
    "label_noise",
    "start_lateral_max",
    "depth_every",
    "lookahead",
    // training
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "loss_steering",
    "loss_aux_depth",
    "train_seed",
    "aux_depth",
    // evaluation
    "sweep_px",
    "sweep_yaw",
    "eval_seeds",
    "eval_start_lateral",
];

/// One misalignment injected at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Misalignment {
    pub shift_px: f64,
    pub yaw_rad: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub track: Track,
    pub sim: SimConfig,
    pub camera: CameraIntrinsics,
    pub slit: SlitConfig,
    pub layout: StackLayout,
    pub pid: PidGains,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub policy: PolicySpec,
    pub n_runs: usize,
    /// collection seed; run `k` uses `seed + k`
    pub seed: u64,
    pub sweep_px: Vec<f64>,
    pub sweep_yaw: Vec<f64>,
    pub eval_seeds: Vec<u64>,
    /// evaluation starts are drawn uniformly from ±this, meters
    pub eval_start_lateral: f64,
    kv: KvMap,
}

impl ExperimentConfig {
    /// Reads `path` (if any), then applies `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut kv = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                KvMap::parse(&text)?
            }
            None => KvMap::default(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {o:?} is not key=value")))?;
            kv.set(k.trim(), v.trim());
        }
        Self::from_kv(kv)
    }

    pub fn from_kv(kv: KvMap) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(CliError::Usage(format!("unknown config key {k:?}")));
        }
        let track = Track::from_kv(&kv)?;
        let sim = SimConfig::from_kv(&kv)?;
        let camera = CameraIntrinsics::from_kv(&kv)?;
        let mut slit = SlitConfig::from_kv(&kv)?;
        slit.recovery_gain = kv.get_f64("recovery_gain")?.unwrap_or(RECOVERY_GAIN);
        slit.validate(camera.width_full)?;
        let pid = PidGains::from_kv(&kv, &sim)?;
        let collect = CollectConfig::from_kv(&kv)?;

        let mut layout = StackLayout::for_dt(sim.dt);
        layout.n_frames = collect.n_frames as usize;
        layout.sample_stride = kv.get("sample_stride")?.unwrap_or(10);
        if layout.sample_stride == 0 {
            return Err(CliError::Usage("sample_stride must be positive".into()));
        }

        let mut train = TrainConfig::default();
        train.epochs = kv.get("epochs")?.unwrap_or(EPOCHS);
        train.batch_size = kv.get("batch_size")?.unwrap_or(train.batch_size);
        train.learning_rate = kv.get_f64("learning_rate")?.unwrap_or(train.learning_rate);
        train.optimizer = match kv.get_str("optimizer").unwrap_or("adam") {
            "adam" => Optimizer::adam(),
            "sgd" => Optimizer::sgd(),
            other => return Err(CliError::Usage(format!("optimizer must be adam or sgd, got {other:?}"))),
        };
        let lw = LossWeights::default();
        train.loss_weights = LossWeights {
            steering: kv.get_f64("loss_steering")?.unwrap_or(lw.steering),
            aux_depth: kv.get_f64("loss_aux_depth")?.unwrap_or(lw.aux_depth),
        };
        train.seed = kv.get("train_seed")?.unwrap_or(train.seed);
        train.validate()?;

        let policy = PolicySpec {
            n_frames: collect.n_frames as usize,
            height: camera.height,
            width: slit.crop_width,
            m_steps: collect.m_steps as usize,
            aux_depth: kv.get("aux_depth")?.unwrap_or(true),
            ..PolicySpec::default()
        };
        policy.validate()?;

        let n_runs = kv.get("n_runs")?.unwrap_or(150);
        let eval_start_lateral = kv.get_f64("eval_start_lateral")?.unwrap_or(0.2);
        if !(eval_start_lateral >= 0.0 && eval_start_lateral < track.lane_half_width()) {
            return Err(CliError::Usage("eval_start_lateral must lie in [0, lane_half_width)".into()));
        }
        Ok(Self {
            track,
            sim,
            camera,
            slit,
            layout,
            pid,
            collect,
            train,
            policy,
            n_runs,
            seed: kv.get("seed")?.unwrap_or(0),
            sweep_px: kv.get_list("sweep_px")?.unwrap_or_else(|| vec![0.0, -8.0, 8.0, -12.0, 12.0]),
            sweep_yaw: kv.get_list("sweep_yaw")?.unwrap_or_default(),
            eval_seeds: kv.get_list("eval_seeds")?.unwrap_or_else(|| vec![0, 1, 2]),
            eval_start_lateral,
            kv,
        })
    }

    /// Pixel shifts first, then yaw offsets.
    pub fn misalignments(&self) -> Vec<Misalignment> {
        let px = self.sweep_px.iter().map(|&p| Misalignment { shift_px: p, yaw_rad: 0.0 });
        let yaw = self.sweep_yaw.iter().map(|&y| Misalignment { shift_px: 0.0, yaw_rad: y });
        px.chain(yaw).collect()
    }

    /// Scenario tag recorded in collected episodes.
    pub fn scenario_tag(&self) -> &str {
        self.kv.get_str("track").unwrap_or("s_curve")
    }

    /// The explicitly set keys, one `key=value` per line, for the record
    /// kept next to each command's outputs.
    pub fn to_kv_text(&self) -> String {
        self.kv
            .keys()
            .map(|k| format!("{k}={}\n", self.kv.get_str(k).unwrap_or_default()))
            .collect()
    }
}
