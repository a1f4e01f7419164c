//! Slit augmentation: pseudo-displacement by sliding a crop window across
//! the wide camera frame, with steering labels corrected toward recovery.
//!
//! A window moved left (negative offset) shows the scene shifted right, which
//! is what a vehicle displaced to the left would see. That sample gets a
//! label nudged to the right by `recovery_gain` per meter of pseudo
//! displacement, calibrated at the reference depth `z_ref`.

use rand::Rng;

use crate::camera::{render_frame, CameraFrame, CameraIntrinsics};
use crate::episode::{Episode, EpisodeId};
use crate::kv::KvMap;
use crate::rng::{derive_seed, seeded};
use crate::sim::VehicleState;
use crate::track::Track;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlitConfig {
    pub crop_width: usize,
    pub offset_max: u32,
    /// calibration depth, meters
    pub z_ref: f64,
    /// radians of steering per meter of pseudo displacement
    pub recovery_gain: f64,
    /// slit samples generated per input sample (offset 0 always included)
    pub offsets_per_sample: usize,
}

impl Default for SlitConfig {
    fn default() -> Self {
        Self {
            crop_width: 96,
            offset_max: 16,
            z_ref: 8.0,
            recovery_gain: 0.05,
            offsets_per_sample: 4,
        }
    }
}

impl SlitConfig {
    /// Center crop only; the no-augmentation baseline.
    pub fn center_only(self) -> Self {
        Self {
            offsets_per_sample: 1,
            ..self
        }
    }

    pub fn validate(&self, width_full: usize) -> Result<()> {
        if self.crop_width == 0 || self.crop_width + 2 * self.offset_max as usize > width_full {
            return Err(Error::InvalidConfig(format!(
                "crop_width {} + 2*offset_max {} exceeds frame width {width_full}",
                self.crop_width, self.offset_max
            )));
        }
        if (width_full - self.crop_width) % 2 != 0 {
            return Err(Error::InvalidConfig("frame and crop widths must differ by an even count".into()));
        }
        if !(self.recovery_gain >= 0.0) || !(self.z_ref > 0.0) {
            return Err(Error::InvalidConfig("recovery_gain >= 0 and z_ref > 0 required".into()));
        }
        if self.offsets_per_sample == 0 {
            return Err(Error::InvalidConfig("offsets_per_sample must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            crop_width: kv.get("crop_width")?.unwrap_or(d.crop_width),
            offset_max: kv.get("offset_max")?.unwrap_or(d.offset_max),
            z_ref: kv.get_f64("z_ref")?.unwrap_or(d.z_ref),
            recovery_gain: kv.get_f64("recovery_gain")?.unwrap_or(d.recovery_gain),
            offsets_per_sample: kv.get("offsets_per_sample")?.unwrap_or(d.offsets_per_sample),
        })
    }

    fn check_offset(&self, offset: i32) -> Result<()> {
        if offset.unsigned_abs() > self.offset_max {
            return Err(Error::OffsetOutOfRange {
                offset,
                max: self.offset_max,
            });
        }
        Ok(())
    }

    /// First column of the crop window for `offset`.
    pub fn window_start(&self, width_full: usize, offset: i32) -> Result<usize> {
        self.check_offset(offset)?;
        let center = (width_full - self.crop_width) as i64 / 2;
        let start = center + offset as i64;
        if start < 0 || start as usize + self.crop_width > width_full {
            return Err(Error::OffsetOutOfRange {
                offset,
                max: self.offset_max,
            });
        }
        Ok(start as usize)
    }
}

/// Copies columns `[start, start + crop)` out of a row-major raster.
pub fn crop_columns<T: Copy>(data: &[T], width: usize, height: usize, start: usize, crop: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(crop * height);
    for row in 0..height {
        out.extend_from_slice(&data[row * width + start..row * width + start + crop]);
    }
    out
}

/// Crops the window at `offset`; the depth channel is cropped identically.
pub fn slit_crop(frame: &CameraFrame, offset: i32, cfg: &SlitConfig) -> Result<CameraFrame> {
    cfg.validate(frame.width)?;
    let start = cfg.window_start(frame.width, offset)?;
    Ok(CameraFrame {
        width: cfg.crop_width,
        height: frame.height,
        pixels: crop_columns(&frame.pixels, frame.width, frame.height, start, cfg.crop_width),
        depth: crop_columns(&frame.depth, frame.width, frame.height, start, cfg.crop_width),
        timestamp: frame.timestamp,
        pose: frame.pose,
    })
}

/// Lateral displacement (meters, positive = left) emulated by the crop
/// window at `offset`, matched at the reference depth.
pub fn pseudo_displacement(offset: i32, cam: &CameraIntrinsics, cfg: &SlitConfig) -> Result<f64> {
    cfg.check_offset(offset)?;
    Ok(-(offset as f64) * cfg.z_ref / cam.focal)
}

/// Steering label for a crop at `offset`: a pseudo-left displacement steers
/// right to recover.
pub fn augment_label(steer: f64, offset: i32, cam: &CameraIntrinsics, cfg: &SlitConfig) -> Result<f64> {
    Ok(steer - cfg.recovery_gain * pseudo_displacement(offset, cam, cfg)?)
}

/// Mean absolute intensity difference between a crop at `offset` and a
/// center-cropped re-render from the pose it emulates, over the image rows
/// whose ground range lies in `band` meters.
pub fn crop_rerender_error(
    track: &Track,
    pose: &VehicleState,
    offset: i32,
    cam: &CameraIntrinsics,
    cfg: &SlitConfig,
    band: (f64, f64),
) -> Result<f64> {
    let d = pseudo_displacement(offset, cam, cfg)?;
    let crop = slit_crop(&render_frame(pose, track, cam), offset, cfg)?;
    let shifted = VehicleState {
        x: pose.x - d * pose.heading.sin(),
        y: pose.y + d * pose.heading.cos(),
        ..*pose
    };
    let reference = slit_crop(&render_frame(&shifted, track, cam), 0, cfg)?;
    let rows: Vec<usize> = (0..cam.height)
        .filter(|&r| matches!(cam.ground_row_depth(r), Ok(z) if z >= band.0 && z <= band.1))
        .collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig(format!("no image row in depth band {band:?}")));
    }
    let mut sum = 0.0;
    for &r in &rows {
        for c in 0..cfg.crop_width {
            sum += (crop.pixel(c, r) - reference.pixel(c, r)).abs();
        }
    }
    Ok(sum / (rows.len() * cfg.crop_width) as f64)
}

/// How samples are turned into policy inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackLayout {
    /// frames per stack; channel 0 is the current frame
    pub n_frames: usize,
    /// ticks between stacked frames
    pub frame_stride: usize,
    /// coarse depth grid (rows, cols) pooled from the cropped depth
    pub depth_grid: (usize, usize),
    /// use every `sample_stride`-th sample of each episode, starting at a
    /// per-episode phase so strided runs do not all sample the same places
    pub sample_stride: usize,
}

impl StackLayout {
    /// Six frames half a second apart (2 Hz), 8×12 depth grid, every sample.
    pub fn for_dt(dt: f64) -> Self {
        Self {
            n_frames: 6,
            frame_stride: ((0.5 / dt).round() as usize).max(1),
            depth_grid: (8, 12),
            sample_stride: 1,
        }
    }

    /// Episode sample indices stacked for sample `i`, newest first; indices
    /// before the episode start are clamped to the first sample.
    pub fn stack_indices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_frames).map(move |k| i.saturating_sub(k * self.frame_stride))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlitSample {
    pub sample_index: u32,
    pub offset_index: u8,
    pub offset: i32,
    /// first column of the crop window in the full-width frames
    pub window_start: u16,
    /// indices into [`AugmentedEpisode::frames`], channel 0 = current frame
    pub frame_refs: Vec<u32>,
    pub steer: Vec<f64>,
    /// block-averaged depth of the current frame; `INFINITY` marks cells
    /// that contain sky
    pub depth: Option<Vec<f32>>,
}

/// Slit samples of one episode. Stacks are stored as references into a pool
/// of full-width source frames and cropped on demand, since every frame
/// appears in several stacks and under several offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEpisode {
    pub source_id: EpisodeId,
    pub scenario_tag: String,
    pub full_width: usize,
    pub crop_width: usize,
    pub height: usize,
    /// full-width u8 frames, each `full_width × height`
    pub frames: Vec<Vec<u8>>,
    pub samples: Vec<SlitSample>,
}

impl AugmentedEpisode {
    /// Cropped input stack of sample `k`, `n_frames × height × crop_width`.
    pub fn stack(&self, k: usize) -> Vec<u8> {
        let s = &self.samples[k];
        let mut out = Vec::with_capacity(s.frame_refs.len() * self.height * self.crop_width);
        for &f in &s.frame_refs {
            out.extend(crop_columns(&self.frames[f as usize], self.full_width, self.height, s.window_start as usize, self.crop_width));
        }
        out
    }
}

/// Block-averages a depth raster into a `rows × cols` grid. Cells with any
/// non-finite pixel are marked `INFINITY`.
pub fn coarse_depth(depth: &[f32], width: usize, height: usize, rows: usize, cols: usize) -> Vec<f32> {
    let (bh, bw) = (height / rows, width / cols);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut sum = 0.0f64;
            let mut sky = false;
            for y in r * bh..(r + 1) * bh {
                for x in c * bw..(c + 1) * bw {
                    let d = depth[y * width + x];
                    if d.is_finite() {
                        sum += d as f64;
                    } else {
                        sky = true;
                    }
                }
            }
            out.push(if sky { f32::INFINITY } else { (sum / (bh * bw) as f64) as f32 });
        }
    }
    out
}

/// Expands every used sample into `offsets_per_sample` slit samples (offset 0
/// first, the rest uniform in ±offset_max) with corrected labels on every
/// step of the horizon. The random stream depends only on `(seed, episode id)`.
pub fn augment_episode(
    ep: &Episode,
    cam: &CameraIntrinsics,
    cfg: &SlitConfig,
    layout: &StackLayout,
    seed: u64,
) -> Result<AugmentedEpisode> {
    if ep.width() < cam.width_full {
        return Err(Error::NotAugmentable(format!(
            "frame width {} narrower than camera width {}",
            ep.width(),
            cam.width_full
        )));
    }
    cfg.validate(ep.width())
        .map_err(|e| Error::NotAugmentable(e.to_string()))?;
    let (w, h) = (ep.width(), ep.height());
    let (grows, gcols) = layout.depth_grid;
    if grows == 0 || gcols == 0 || h % grows != 0 || cfg.crop_width % gcols != 0 {
        return Err(Error::InvalidConfig("depth grid must tile the cropped frame".into()));
    }
    let mut rng = seeded(derive_seed(seed, &ep.id.0));
    let max = cfg.offset_max as i32;
    let mut pool: Vec<Vec<u8>> = Vec::new();
    let mut pool_index: Vec<Option<u32>> = vec![None; ep.samples.len()];
    let mut samples = Vec::new();
    let stride = layout.sample_stride.max(1);
    let phase = if stride > 1 { rng.random_range(0..stride) } else { 0 };
    for i in (phase..ep.samples.len()).step_by(stride) {
        let frame_refs: Vec<u32> = layout
            .stack_indices(i)
            .map(|j| {
                *pool_index[j].get_or_insert_with(|| {
                    pool.push(ep.samples[j].pixels.clone());
                    (pool.len() - 1) as u32
                })
            })
            .collect();
        let mut offsets = vec![0i32];
        offsets.extend((1..cfg.offsets_per_sample).map(|_| rng.random_range(-max..=max)));
        for (oi, &offset) in offsets.iter().enumerate() {
            let start = cfg.window_start(w, offset)?;
            let steer = ep.samples[i]
                .steer
                .iter()
                .map(|&s| augment_label(s, offset, cam, cfg))
                .collect::<Result<Vec<_>>>()?;
            let depth = ep.samples[i].depth.as_ref().map(|d| {
                let cropped = crop_columns(d, w, h, start, cfg.crop_width);
                coarse_depth(&cropped, cfg.crop_width, h, grows, gcols)
            });
            samples.push(SlitSample {
                sample_index: i as u32,
                offset_index: oi as u8,
                offset,
                window_start: start as u16,
                frame_refs: frame_refs.clone(),
                steer,
                depth,
            });
        }
    }
    Ok(AugmentedEpisode {
        source_id: ep.id,
        scenario_tag: ep.scenario_tag.clone(),
        full_width: w,
        crop_width: cfg.crop_width,
        height: h,
        frames: pool,
        samples,
    })
}
