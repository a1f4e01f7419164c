//! Synthetic monocular front camera over a flat-ground world.
//!
//! Every pixel ray is intersected with the ground plane, so the intensity
//! image and the depth map come from the same projection. Lane boundaries
//! (centerline ± lane half width) are drawn as anti-aliased bright strokes.

use crate::kv::KvMap;
use crate::sim::VehicleState;
use crate::track::{Point2, Track};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub width_full: usize,
    pub height: usize,
    /// pixels
    pub focal: f64,
    /// meters above ground
    pub mount_height: f64,
    /// radians, positive looks down
    pub pitch: f64,
    /// radians added to the vehicle heading (mounting misalignment)
    pub yaw_offset: f64,
    /// principal point shift in pixels (mounting misalignment); positive
    /// moves image content to the right
    pub horizontal_shift: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width_full: 128,
            height: 64,
            focal: 64.0,
            mount_height: 1.4,
            pitch: 0.08,
            yaw_offset: 0.0,
            horizontal_shift: 0.0,
        }
    }
}

/// Rendering constants that are not part of the camera model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneStyle {
    /// lane marking width on the ground, meters
    pub stroke_width: f64,
    pub ground: f64,
    pub marking: f64,
    pub sky: f64,
    /// markings beyond this ground range are not drawn
    pub max_range: f64,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            stroke_width: 0.12,
            ground: 0.05,
            marking: 0.95,
            sky: 0.5,
            max_range: 60.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width_full == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("camera dimensions must be positive".into()));
        }
        if self.width_full > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::InvalidConfig("camera dimensions exceed u16".into()));
        }
        if !(self.focal > 0.0) || !(self.mount_height > 0.0) {
            return Err(Error::InvalidConfig("focal and mount_height must be positive".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let cam = Self {
            width_full: kv.get("cam_width")?.unwrap_or(d.width_full),
            height: kv.get("cam_height")?.unwrap_or(d.height),
            focal: kv.get_f64("cam_focal")?.unwrap_or(d.focal),
            mount_height: kv.get_f64("cam_mount_height")?.unwrap_or(d.mount_height),
            pitch: kv.get_f64("cam_pitch")?.unwrap_or(d.pitch),
            yaw_offset: kv.get_f64("cam_yaw_offset")?.unwrap_or(d.yaw_offset),
            horizontal_shift: kv.get_f64("cam_horizontal_shift")?.unwrap_or(d.horizontal_shift),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn cx(&self) -> f64 {
        self.width_full as f64 / 2.0 + self.horizontal_shift
    }

    pub fn cy(&self) -> f64 {
        self.height as f64 / 2.0
    }

    /// Continuous image row of the horizon.
    pub fn horizon_row(&self) -> f64 {
        self.cy() - self.focal * self.pitch.tan()
    }

    /// Downward component of the (unnormalized, unit optical-axis) ray
    /// through the center of `row`.
    fn row_down(&self, row: usize) -> f64 {
        let yn = (row as f64 + 0.5 - self.cy()) / self.focal;
        self.pitch.sin() + yn * self.pitch.cos()
    }

    /// Depth along the optical axis of the ground point seen at `row`, or
    /// `None` for rows at or above the horizon. On flat ground with no roll
    /// this does not depend on the column.
    pub fn row_optical_depth(&self, row: usize) -> Option<f64> {
        let down = self.row_down(row);
        (down > 0.0).then(|| self.mount_height / down)
    }

    /// Forward ground distance to the flat-ground point seen by the center of
    /// `row`: `mount_height / tan(declination)`.
    pub fn ground_row_depth(&self, row: usize) -> Result<f64> {
        let declination = self.pitch + ((row as f64 + 0.5 - self.cy()) / self.focal).atan();
        if declination <= 0.0 || row >= self.height {
            return Err(Error::NoGroundIntersection { row });
        }
        Ok(self.mount_height / declination.tan())
    }

    /// Projects a ground point given in the camera's horizontal frame
    /// (`forward`, `left` meters) to continuous pixel coordinates.
    pub fn project_ground(&self, forward: f64, left: f64) -> Option<(f64, f64)> {
        let (sp, cp) = self.pitch.sin_cos();
        let h = self.mount_height;
        let zc = forward * cp + h * sp;
        if zc <= 0.0 {
            return None;
        }
        let xc = -left;
        let yc = -forward * sp + h * cp;
        Some((self.cx() + self.focal * xc / zc, self.cy() + self.focal * yc / zc))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    /// row-major intensities in [0, 1]
    pub pixels: Vec<f64>,
    /// row-major optical-axis depth in meters, `f64::INFINITY` for sky
    pub depth: Vec<f64>,
    pub timestamp: f64,
    pub pose: VehicleState,
}

impl CameraFrame {
    pub fn pixel(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn quantized(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.quantized())
    }

    /// Depth raster: magic `SDDP`, u16 width, u16 height, then little-endian
    /// f32 values.
    pub fn depth_raster(&self) -> Vec<u8> {
        let depth: Vec<f32> = self.depth.iter().map(|&d| d as f32).collect();
        encode_depth_raster(self.width, self.height, &depth)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_depth_raster(width: usize, height: usize, depth: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + depth.len() * 4);
    out.extend_from_slice(b"SDDP");
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&(height as u16).to_le_bytes());
    for d in depth {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

/// Renders the view from `state` with the default scene style.
pub fn render_frame(state: &VehicleState, track: &Track, cam: &CameraIntrinsics) -> CameraFrame {
    render_frame_styled(state, track, cam, &SceneStyle::default())
}

pub fn render_frame_styled(
    state: &VehicleState,
    track: &Track,
    cam: &CameraIntrinsics,
    style: &SceneStyle,
) -> CameraFrame {
    let (w, h) = (cam.width_full, cam.height);
    let mut pixels = vec![style.sky; w * h];
    let mut depth = vec![f64::INFINITY; w * h];

    let yaw = state.heading + cam.yaw_offset;
    let fwd = Point2::new(yaw.cos(), yaw.sin());
    let left = Point2::new(-yaw.sin(), yaw.cos());
    let origin = state.position();
    let (sp, cp) = cam.pitch.sin_cos();
    let hw = track.lane_half_width();
    let (cx, cy, f) = (cam.cx(), cam.cy(), cam.focal);

    for row in 0..h {
        let yn = (row as f64 + 0.5 - cy) / f;
        let down = sp + yn * cp;
        if down <= 0.0 {
            continue;
        }
        let t = cam.mount_height / down;
        let ahead = t * (cp - yn * sp);
        // lateral ground footprint of one pixel at this depth
        let footprint = t / f;
        let width = style.stroke_width.max(footprint);
        let base = origin + fwd * ahead;
        for col in 0..w {
            let idx = row * w + col;
            depth[idx] = t;
            let xn = (col as f64 + 0.5 - cx) / f;
            let mut v = style.ground;
            if ahead <= style.max_range {
                let p = base + left * (-t * xn);
                if let Some(dc) = track.distance_within_margin(p) {
                    let db = (dc - hw).abs();
                    let coverage = ((width / 2.0 - db) / footprint + 0.5).clamp(0.0, 1.0);
                    v += (style.marking - style.ground) * coverage;
                }
            }
            pixels[idx] = v;
        }
    }

    CameraFrame {
        width: w,
        height: h,
        pixels,
        depth,
        timestamp: 0.0,
        pose: *state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::{make_track, TrackKind};

    fn straight() -> Track {
        make_track(TrackKind::Straight { length: 100.0 }).unwrap()
    }

    fn pose(x: f64, y: f64, heading: f64) -> VehicleState {
        VehicleState { x, y, heading, speed: 5.0, steer: 0.0 }
    }

    #[test]
    fn centered_view_is_mirror_symmetric() {
        let cam = CameraIntrinsics::default();
        let f = render_frame(&pose(10.0, 0.0, 0.0), &straight(), &cam);
        for row in 0..f.height {
            for col in 0..f.width {
                let m = f.width - 1 - col;
                assert!((f.pixel(col, row) - f.pixel(m, row)).abs() < 1e-6, "({col},{row})");
            }
        }
    }

    #[test]
    fn pinhole_projection_example() {
        let flat = CameraIntrinsics { pitch: 0.0, ..Default::default() };
        // camera at 1.4 m: a ground point 8 m ahead, 1 m left
        let (u, _) = flat.project_ground(8.0, 1.0).unwrap();
        assert!((u - 56.0).abs() < 1e-12);

        let cam = CameraIntrinsics::default();
        let zc = 8.0 * 0.08f64.cos() + 1.4 * 0.08f64.sin();
        let (u, _) = cam.project_ground(8.0, 1.0).unwrap();
        assert!((u - (64.0 - 64.0 / zc)).abs() < 1e-12);
    }

    #[test]
    fn sky_rows_have_infinite_depth() {
        let cam = CameraIntrinsics::default();
        let f = render_frame(&pose(10.0, 0.0, 0.0), &straight(), &cam);
        let horizon = cam.horizon_row();
        for row in 0..f.height {
            let sky = (row as f64 + 0.5) <= horizon;
            for col in 0..f.width {
                let d = f.depth[row * f.width + col];
                assert_eq!(sky, d.is_infinite(), "row {row}");
                if sky {
                    assert_eq!(f.pixel(col, row), 0.5);
                }
            }
        }
    }

    #[test]
    fn intensity_bounds_and_depth_monotone() {
        let cam = CameraIntrinsics::default();
        let t = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
        let f = render_frame(&VehicleState::on_track(&t, 50.0, 0.3, 0.05, 5.0), &t, &cam);
        assert!(f.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let mut saw_bright = false;
        for col in 0..f.width {
            let mut prev = f64::INFINITY;
            for row in 0..f.height {
                let d = f.depth[row * f.width + col];
                if d.is_finite() {
                    assert!(d > 0.0 && d <= prev);
                    prev = d;
                }
                let p = f.pixel(col, row);
                if p >= 0.9 {
                    saw_bright = true;
                    assert!(d.is_finite());
                }
            }
        }
        assert!(saw_bright);
    }

    #[test]
    fn ground_row_depth_cases() {
        let cam = CameraIntrinsics::default();
        let h = cam.height;
        let depths: Vec<f64> = (0..h).filter_map(|r| cam.ground_row_depth(r).ok()).collect();
        assert!(depths.windows(2).all(|w| w[1] < w[0]));
        assert!(depths.last().unwrap() < &3.0);
        assert!(depths[0] > 50.0);

        // row whose center ray declination is 0.175 rad
        let yn = (0.175f64 - 0.08).tan();
        let row_center = 32.0 + 64.0 * yn;
        let r = (row_center - 0.5).round() as usize;
        let decl = 0.08 + ((r as f64 + 0.5 - 32.0) / 64.0).atan();
        let got = cam.ground_row_depth(r).unwrap();
        assert!((got - 1.4 / decl.tan()).abs() < 1e-12);
        assert!((1.4 / 0.175f64.tan() - 7.92).abs() < 1e-2);
        assert!((got - 7.92).abs() < 0.3);

        let horizon = cam.horizon_row().floor() as usize;
        let sky_row = (0..h).rev().find(|&r| (r as f64 + 0.5) <= cam.horizon_row()).unwrap();
        assert!(horizon >= sky_row);
        assert_eq!(
            cam.ground_row_depth(sky_row),
            Err(Error::NoGroundIntersection { row: sky_row })
        );
        assert!(cam.ground_row_depth(0).is_err());
    }

    /// Column centroid of the bright stroke nearest to `guess` in `row`.
    fn stroke_centroid(f: &CameraFrame, row: usize, lo: usize, hi: usize) -> f64 {
        let (mut sw, mut sx) = (0.0, 0.0);
        for col in lo..hi {
            let w = (f.pixel(col, row) - 0.05).max(0.0);
            sw += w;
            sx += w * (col as f64 + 0.5);
        }
        sx / sw
    }

    #[test]
    fn lateral_translation_shifts_columns_by_parallax() {
        let cam = CameraIntrinsics::default();
        let track = straight();
        let d = 0.4;
        let a = render_frame(&pose(10.0, 0.0, 0.0), &track, &cam);
        let b = render_frame(&pose(10.0, d, 0.0), &track, &cam);
        for row in [38usize, 44, 50] {
            let z = cam.row_optical_depth(row).unwrap();
            let expected = cam.focal * d / z;
            // right lane boundary lives in the right half of the image
            let ca = stroke_centroid(&a, row, 64, 128);
            let cb = stroke_centroid(&b, row, 64, 128);
            assert!(((cb - ca) - expected).abs() <= 1.0, "row {row}: {} vs {expected}", cb - ca);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let cam = CameraIntrinsics::default();
        let t = make_track(TrackKind::S_CURVE_DEFAULT).unwrap();
        let s = VehicleState::on_track(&t, 70.0, -0.2, 0.02, 5.0);
        let a = render_frame(&s, &t, &cam);
        let b = render_frame(&s, &t, &cam);
        assert!(a.pixels.iter().zip(&b.pixels).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn export_formats() {
        let cam = CameraIntrinsics::default();
        let f = render_frame(&pose(10.0, 0.0, 0.0), &straight(), &cam);
        let pgm = f.to_pgm();
        assert!(pgm.starts_with(b"P5\n128 64\n255\n"));
        assert_eq!(pgm.len(), b"P5\n128 64\n255\n".len() + 128 * 64);
        let raster = f.depth_raster();
        assert_eq!(&raster[..4], b"SDDP");
        assert_eq!(u16::from_le_bytes([raster[4], raster[5]]), 128);
        assert_eq!(u16::from_le_bytes([raster[6], raster[7]]), 64);
        assert_eq!(raster.len(), 8 + 4 * 128 * 64);
        assert!(f32::from_le_bytes(raster[8..12].try_into().unwrap()).is_infinite());
    }
}
