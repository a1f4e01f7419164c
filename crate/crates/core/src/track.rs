//! Arc-length parameterized centerline tracks.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};

use crate::kv::KvMap;
use crate::{Error, Result};

/// Default lane half width (a 3.5 m lane).
pub const DEFAULT_LANE_HALF_WIDTH: f64 = 1.75;

const STRAIGHT_SPACING: f64 = 1.0;
const ARC_SPACING: f64 = 0.5;
const GRID_CELL: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// Track shapes understood by [`make_track`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackKind {
    Straight { length: f64 },
    /// straight, 90° left arc, straight, 90° right arc
    SCurve { straight: f64, radius: f64 },
    /// closed counterclockwise circle starting at the origin heading +x
    Loop { radius: f64 },
}

impl TrackKind {
    pub const S_CURVE_DEFAULT: TrackKind = TrackKind::SCurve {
        straight: 40.0,
        radius: 20.0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            TrackKind::Straight { .. } => "straight",
            TrackKind::SCurve { .. } => "s_curve",
            TrackKind::Loop { .. } => "loop",
        }
    }

    /// Reads `kind`, `length`, `straight` and `radius` keys; missing
    /// dimensions fall back to the defaults of each kind.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let kind = kv.get_str("track").unwrap_or("s_curve");
        Self::parse(
            kind,
            kv.get_f64("track_length")?,
            kv.get_f64("track_straight")?,
            kv.get_f64("track_radius")?,
        )
    }

    pub fn parse(
        kind: &str,
        length: Option<f64>,
        straight: Option<f64>,
        radius: Option<f64>,
    ) -> Result<Self> {
        match kind {
            "straight" => Ok(TrackKind::Straight {
                length: length.unwrap_or(100.0),
            }),
            "s_curve" => Ok(TrackKind::SCurve {
                straight: straight.unwrap_or(40.0),
                radius: radius.unwrap_or(20.0),
            }),
            "loop" => Ok(TrackKind::Loop {
                radius: radius.unwrap_or(30.0),
            }),
            other => Err(Error::InvalidTrack(format!("unknown track kind {other:?}"))),
        }
    }
}

/// Result of projecting a point onto the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// arc-length of the nearest centerline point
    pub s: f64,
    /// signed distance, positive to the left of the track direction
    pub lateral: f64,
    pub point: Point2,
    pub segment: usize,
}

#[derive(Debug, Clone)]
pub struct Track {
    centerline: Vec<Point2>,
    cumulative: Vec<f64>,
    lane_half_width: f64,
    total_length: f64,
    closed: bool,
    grid: SegmentGrid,
}

impl Track {
    /// Builds a track from an ordered polyline. Consecutive points must be
    /// distinct; a closed track repeats its first point at the end.
    pub fn new(centerline: Vec<Point2>, lane_half_width: f64, closed: bool) -> Result<Self> {
        if centerline.len() < 2 {
            return Err(Error::InvalidTrack("centerline needs at least two points".into()));
        }
        if !(lane_half_width > 0.0) {
            return Err(Error::InvalidTrack("lane_half_width must be positive".into()));
        }
        let mut cumulative = Vec::with_capacity(centerline.len());
        cumulative.push(0.0);
        for w in centerline.windows(2) {
            let len = w[0].dist(w[1]);
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidTrack("consecutive centerline points coincide".into()));
            }
            cumulative.push(cumulative.last().unwrap() + len);
        }
        let total_length = *cumulative.last().unwrap();
        let grid = SegmentGrid::build(&centerline, lane_half_width + 1.5);
        Ok(Self {
            centerline,
            cumulative,
            lane_half_width,
            total_length,
            closed,
            grid,
        })
    }

    pub fn centerline(&self) -> &[Point2] {
        &self.centerline
    }

    pub fn lane_half_width(&self) -> f64 {
        self.lane_half_width
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn segment_count(&self) -> usize {
        self.centerline.len() - 1
    }

    fn segment(&self, i: usize) -> (Point2, Point2) {
        (self.centerline[i], self.centerline[i + 1])
    }

    /// Nearest point on segment `i`, returned as the clamped parameter and
    /// squared distance.
    fn segment_nearest(&self, i: usize, p: Point2) -> (f64, f64) {
        let (a, b) = self.segment(i);
        let ab = b - a;
        let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        let q = a + ab * t;
        (t, (p - q).dot(p - q))
    }

    fn projection_on(&self, i: usize, t: f64, p: Point2) -> Projection {
        let (a, b) = self.segment(i);
        let ab = b - a;
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let q = a + ab * t;
        let dir = ab * (1.0 / len);
        let mut lateral = dir.cross(p - q).signum() * p.dist(q);
        // Past the ends of an open track, measure against the extended end
        // segment rather than the endpoint.
        if !self.closed && ((i == 0 && t == 0.0) || (i + 1 == self.segment_count() && t == 1.0)) {
            lateral = dir.cross(p - q);
        }
        if lateral == 0.0 {
            lateral = 0.0;
        }
        Projection {
            s: self.cumulative[i] + t * len,
            lateral,
            point: q,
            segment: i,
        }
    }

    /// Global nearest point; ties go to the lower arc-length.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = (0usize, 0.0, f64::INFINITY);
        for i in 0..self.segment_count() {
            let (t, d2) = self.segment_nearest(i, p);
            if d2 < best.2 {
                best = (i, t, d2);
            }
        }
        self.projection_on(best.0, best.1, p)
    }

    /// Nearest point restricted to segments overlapping `[s_hint - window,
    /// s_hint + window]` (wrapping on closed tracks). Used to follow progress
    /// without jumping between distant parts of the track.
    pub fn project_near(&self, p: Point2, s_hint: f64, window: f64) -> Projection {
        let lo = s_hint - window;
        let hi = s_hint + window;
        let overlaps = |i: usize| -> bool {
            let (s0, s1) = (self.cumulative[i], self.cumulative[i + 1]);
            if self.closed {
                let l = self.total_length;
                [-l, 0.0, l].iter().any(|off| s1 + off >= lo && s0 + off <= hi)
            } else {
                s1 >= lo && s0 <= hi
            }
        };
        let mut best: Option<(usize, f64, f64)> = None;
        for i in (0..self.segment_count()).filter(|&i| overlaps(i)) {
            let (t, d2) = self.segment_nearest(i, p);
            if best.is_none_or(|b| d2 < b.2) {
                best = Some((i, t, d2));
            }
        }
        match best {
            Some((i, t, _)) => self.projection_on(i, t, p),
            None => self.project(p),
        }
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => i.saturating_sub(1).min(self.segment_count() - 1),
        };
        let len = self.cumulative[i + 1] - self.cumulative[i];
        (i, (s - self.cumulative[i]) / len)
    }

    /// Centerline point at arc-length `s`. Closed tracks wrap; open tracks
    /// extrapolate along the end segments.
    pub fn point_at(&self, s: f64) -> Point2 {
        let s = if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s
        };
        let (i, t) = self.locate(s);
        let (a, b) = self.segment(i);
        a + (b - a) * t
    }

    /// Direction of travel (radians) at arc-length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let s = if self.closed {
            s.rem_euclid(self.total_length)
        } else {
            s.clamp(0.0, self.total_length)
        };
        let (i, _) = self.locate(s);
        let (a, b) = self.segment(i);
        (b.y - a.y).atan2(b.x - a.x)
    }

    /// Unsigned distance from `p` to the centerline if it is within the
    /// grid margin, `None` otherwise. Backed by a uniform grid so the renderer
    /// can query every pixel.
    pub fn distance_within_margin(&self, p: Point2) -> Option<f64> {
        let cands = self.grid.candidates(p)?;
        let mut best = f64::INFINITY;
        for &i in cands {
            let (_, d2) = self.segment_nearest(i as usize, p);
            best = best.min(d2);
        }
        let d = best.sqrt();
        (d <= self.grid.margin).then_some(d)
    }

    pub fn margin(&self) -> f64 {
        self.grid.margin
    }

    /// Loads a track from `key=value` config (see [`TrackKind::from_kv`]).
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let kind = TrackKind::from_kv(kv)?;
        let hw = kv.get_f64("lane_half_width")?.unwrap_or(DEFAULT_LANE_HALF_WIDTH);
        make_track_with_width(kind, hw)
    }
}

#[derive(Debug, Clone)]
struct SegmentGrid {
    origin: Point2,
    nx: usize,
    ny: usize,
    margin: f64,
    cells: Vec<Vec<u32>>,
}

impl SegmentGrid {
    fn build(points: &[Point2], margin: f64) -> Self {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let origin = Point2::new(lo.x - margin - GRID_CELL, lo.y - margin - GRID_CELL);
        let nx = ((hi.x + margin + GRID_CELL - origin.x) / GRID_CELL).ceil() as usize + 1;
        let ny = ((hi.y + margin + GRID_CELL - origin.y) / GRID_CELL).ceil() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, w) in points.windows(2).enumerate() {
            let x0 = ((w[0].x.min(w[1].x) - margin - origin.x) / GRID_CELL).floor() as usize;
            let x1 = ((w[0].x.max(w[1].x) + margin - origin.x) / GRID_CELL).floor() as usize;
            let y0 = ((w[0].y.min(w[1].y) - margin - origin.y) / GRID_CELL).floor() as usize;
            let y1 = ((w[0].y.max(w[1].y) + margin - origin.y) / GRID_CELL).floor() as usize;
            for cy in y0..=y1.min(ny - 1) {
                for cx in x0..=x1.min(nx - 1) {
                    cells[cy * nx + cx].push(i as u32);
                }
            }
        }
        Self {
            origin,
            nx,
            ny,
            margin,
            cells,
        }
    }

    fn candidates(&self, p: Point2) -> Option<&[u32]> {
        let fx = (p.x - self.origin.x) / GRID_CELL;
        let fy = (p.y - self.origin.y) / GRID_CELL;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (cx, cy) = (fx as usize, fy as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        let c = &self.cells[cy * self.nx + cx];
        (!c.is_empty()).then_some(c.as_slice())
    }
}

fn push_straight(pts: &mut Vec<Point2>, heading: f64, length: f64) {
    let start = *pts.last().unwrap();
    let n = (length / STRAIGHT_SPACING).ceil().max(1.0) as usize;
    let dir = Point2::new(heading.cos(), heading.sin());
    for k in 1..=n {
        pts.push(start + dir * (length * k as f64 / n as f64));
    }
}

/// Appends an arc turning by `sweep` radians (positive = left).
fn push_arc(pts: &mut Vec<Point2>, heading: f64, radius: f64, sweep: f64) {
    let start = *pts.last().unwrap();
    let side = sweep.signum();
    // center lies to the left for left turns
    let center = start + Point2::new(-heading.sin(), heading.cos()) * (side * radius);
    let phi0 = heading - side * FRAC_PI_2;
    let n = (radius * sweep.abs() / ARC_SPACING).ceil().max(1.0) as usize;
    for k in 1..=n {
        let phi = phi0 + sweep * k as f64 / n as f64;
        pts.push(center + Point2::new(phi.cos(), phi.sin()) * radius);
    }
}

/// Builds one of the parametric tracks with the default lane width.
pub fn make_track(kind: TrackKind) -> Result<Track> {
    make_track_with_width(kind, DEFAULT_LANE_HALF_WIDTH)
}

pub fn make_track_with_width(kind: TrackKind, lane_half_width: f64) -> Result<Track> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidTrack(format!("{name} must be positive, got {v}")))
        }
    };
    let mut pts = vec![Point2::new(0.0, 0.0)];
    match kind {
        TrackKind::Straight { length } => {
            positive("length", length)?;
            push_straight(&mut pts, 0.0, length);
            Track::new(pts, lane_half_width, false)
        }
        TrackKind::SCurve { straight, radius } => {
            positive("straight", straight)?;
            positive("radius", radius)?;
            push_straight(&mut pts, 0.0, straight);
            push_arc(&mut pts, 0.0, radius, FRAC_PI_2);
            push_straight(&mut pts, FRAC_PI_2, straight);
            push_arc(&mut pts, FRAC_PI_2, radius, -FRAC_PI_2);
            Track::new(pts, lane_half_width, false)
        }
        TrackKind::Loop { radius } => {
            positive("radius", radius)?;
            push_arc(&mut pts, 0.0, radius, 2.0 * PI);
            Track::new(pts, lane_half_width, true)
        }
    }
}
