//! Path localization, receding reference windows and the safe driving corridor.
//!
//! Obstacles are handled in path coordinates `(s, d)`: arc length along the
//! global path and signed lateral offset, positive to the left. Each active
//! obstacle becomes a no-go box `D′` that is stretched by the safe distance
//! fore and aft and by the lateral margin sideways. The corridor keeps the
//! free side of the lane and the reference is moved to its middle, with
//! smoothstep ramps in and out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ocp::ReferenceWindow;
use crate::vehicle::VehicleState;
use crate::Error;

/// Half-width of the search window around a localization hint.
pub const HINT_WINDOW: usize = 50;
/// Clearance the adjusted reference keeps from both corridor edges.
pub const REFERENCE_MARGIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_ref: f64,
}

/// Interpolated point of a [`GlobalPath`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v_ref: f64,
    pub s: f64,
}

impl PathPoint {
    /// Unit normal pointing to the left of the path heading.
    pub fn normal(&self) -> [f64; 2] {
        [-self.psi.sin(), self.psi.cos()]
    }
}

/// Position relative to the path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Nearest sample.
    pub index: usize,
    pub s: f64,
    /// Signed lateral offset, positive to the left.
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalPath {
    x: Vec<f64>,
    y: Vec<f64>,
    psi: Vec<f64>,
    v_ref: Vec<f64>,
    s: Vec<f64>,
    pub lane_half_width: f64,
}

impl GlobalPath {
    /// Arc length is the cumulative chord length; headings are unwrapped.
    pub fn new(samples: &[PathSample], lane_half_width: f64) -> Result<Self, Error> {
        if samples.is_empty() {
            return Err(Error::Config("path has no samples".into()));
        }
        if !(lane_half_width > 0.0) {
            return Err(Error::range("lane_half_width_m", "must be positive"));
        }
        let mut s = Vec::with_capacity(samples.len());
        let mut psi = Vec::with_capacity(samples.len());
        s.push(0.0);
        psi.push(samples[0].psi);
        for (i, w) in samples.windows(2).enumerate() {
            let ds = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if !(ds > 0.0) {
                return Err(Error::Config(format!("path samples {i} and {} do not advance in arc length", i + 1)));
            }
            s.push(s[i] + ds);
            let prev = psi[i];
            psi.push(prev + wrap(w[1].psi - prev));
        }
        if samples.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.psi.is_finite() && p.v_ref >= 0.0)) {
            return Err(Error::Config("path samples must be finite with non-negative v_ref".into()));
        }
        Ok(Self {
            x: samples.iter().map(|p| p.x).collect(),
            y: samples.iter().map(|p| p.y).collect(),
            psi,
            v_ref: samples.iter().map(|p| p.v_ref).collect(),
            s,
            lane_half_width,
        })
    }

    /// Reads `X,Y,psi,v_ref` rows; a header line is skipped if present.
    pub fn from_csv(path: impl AsRef<Path>, lane_half_width: f64) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse_csv(&text, lane_half_width)
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn parse_csv(text: &str, lane_half_width: f64) -> Result<Self, Error> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Result<Vec<f64>, _> = cols.iter().map(|c| c.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 4 => samples.push(PathSample { x: v[0], y: v[1], psi: v[2], v_ref: v[3] }),
                Err(_) if samples.is_empty() && i == 0 => continue,
                _ => return Err(Error::Config(format!("line {}: expected X,Y,psi,v_ref", i + 1))),
            }
        }
        Self::new(&samples, lane_half_width)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("X,Y,psi,v_ref\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{},{}\n", self.x[i], self.y[i], self.psi[i], self.v_ref[i]));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s_end(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn sample(&self, k: usize) -> PathPoint {
        PathPoint { x: self.x[k], y: self.y[k], psi: self.psi[k], v_ref: self.v_ref[k], s: self.s[k] }
    }

    fn dist2(&self, k: usize, x: f64, y: f64) -> f64 {
        (x - self.x[k]).powi(2) + (y - self.y[k]).powi(2)
    }

    fn argmin(&self, range: std::ops::Range<usize>, x: f64, y: f64) -> usize {
        let mut best = range.start;
        let mut best_d = f64::INFINITY;
        for k in range {
            let d = self.dist2(k, x, y);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Nearest sample; ties go to the lowest index.
    ///
    /// With a hint, only `hint ± 50` samples are scanned unless the minimum
    /// lands on an interior edge of that window, in which case the whole path
    /// is scanned.
    pub fn localize(&self, x: f64, y: f64, hint: Option<usize>) -> usize {
        let n = self.len();
        let Some(h) = hint.filter(|&h| h < n) else {
            return self.argmin(0..n, x, y);
        };
        let lo = h.saturating_sub(HINT_WINDOW);
        let hi = (h + HINT_WINDOW + 1).min(n);
        let k = self.argmin(lo..hi, x, y);
        if (k == lo && lo > 0) || (k + 1 == hi && hi < n) {
            self.argmin(0..n, x, y)
        } else {
            k
        }
    }

    /// Continuous projection onto the segments adjacent to the nearest sample.
    pub fn project(&self, x: f64, y: f64, hint: Option<usize>) -> Projection {
        let k = self.localize(x, y, hint);
        let mut best: Option<(f64, f64, f64)> = None;
        for a in [k.saturating_sub(1), k] {
            let b = a + 1;
            if b >= self.len() {
                continue;
            }
            let (dx, dy) = (self.x[b] - self.x[a], self.y[b] - self.y[a]);
            let len = dx.hypot(dy);
            let t = (((x - self.x[a]) * dx + (y - self.y[a]) * dy) / (len * len)).clamp(0.0, 1.0);
            let (fx, fy) = (self.x[a] + t * dx, self.y[a] + t * dy);
            let dist = (x - fx).hypot(y - fy);
            let side = (dx * (y - fy) - dy * (x - fx)) / len;
            if best.map_or(true, |(bd, _, _)| dist < bd) {
                best = Some((dist, self.s[a] + t * len, side));
            }
        }
        match best {
            Some((_, s, d)) => Projection { index: k, s, d },
            None => {
                let p = self.sample(k);
                let nrm = p.normal();
                Projection { index: k, s: p.s, d: nrm[0] * (x - p.x) + nrm[1] * (y - p.y) }
            }
        }
    }

    /// Linear interpolation at arc length `s`, clamped to the path; `v_ref` is
    /// zero at and beyond the terminus.
    pub fn point_at(&self, s: f64) -> PathPoint {
        let n = self.len();
        if n == 1 || s >= self.s_end() {
            let mut p = self.sample(n - 1);
            p.v_ref = 0.0;
            return p;
        }
        if s <= 0.0 {
            return self.sample(0);
        }
        let i = self.s.partition_point(|&v| v <= s).saturating_sub(1).min(n - 2);
        let t = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        let lerp = |v: &[f64]| v[i] + t * (v[i + 1] - v[i]);
        PathPoint { x: lerp(&self.x), y: lerp(&self.y), psi: lerp(&self.psi), v_ref: lerp(&self.v_ref), s }
    }

    pub fn frenet_to_xy(&self, s: f64, d: f64) -> [f64; 2] {
        let p = self.point_at(s);
        let n = p.normal();
        [p.x + d * n[0], p.y + d * n[1]]
    }
}

fn wrap(a: f64) -> f64 {
    crate::vehicle::wrap_angle(a)
}

/// `N + 1` points starting at arc length `s_start`, each advanced by
/// `v_ref(s)·dt`, clamped at the path end. Headings are shifted by a multiple
/// of 2π to lie within π of `psi_measured`.
pub fn extract_reference_window(path: &GlobalPath, s_start: f64, n: usize, dt: f64, psi_measured: f64) -> ReferenceWindow {
    let mut pts = Vec::with_capacity(n + 1);
    let mut s = s_start.clamp(0.0, path.s_end());
    for _ in 0..=n {
        let p = path.point_at(s);
        pts.push((p.v_ref, p.x, p.y, p.psi, s));
        s = (s + p.v_ref * dt).min(path.s_end());
    }
    let turns = ((psi_measured - pts[0].3) / std::f64::consts::TAU).round() * std::f64::consts::TAU;
    for p in &mut pts {
        p.3 += turns;
    }
    ReferenceWindow::new(&pts)
}

/// Oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(a, b)| [self.center[0] + a * c - b * s, self.center[1] + a * s + b * c])
    }

    pub fn footprint(state: &VehicleState, length: f64, width: f64) -> Self {
        Self { center: [state.x, state.y], heading: state.psi, length, width }
    }
}

fn overlaps(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let (p, q) = (poly[i], poly[(i + 1) % 4]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let proj = |v: &[f64; 2]| v[0] * axis[0] + v[1] * axis[1];
            let (amin, amax) = a.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            let (bmin, bmax) = b.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            if amax < bmin || bmax < amin {
                return false;
            }
        }
    }
    true
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Euclidean distance between two rectangles, zero when they overlap.
pub fn rect_distance(a: &Rect, b: &Rect) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    if overlaps(&ca, &cb) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (pts, poly) in [(&ca, &cb), (&cb, &ca)] {
        for &p in pts.iter() {
            for i in 0..4 {
                best = best.min(point_segment_distance(p, poly[i], poly[(i + 1) % 4]));
            }
        }
    }
    best
}

/// A static obstacle; `length` runs along `heading`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub name: String,
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    /// Revealed once the distance to collision drops to this value.
    pub detection_range: f64,
    /// Revealed at this simulation time regardless of distance.
    pub reveal_time: Option<f64>,
    #[serde(default)]
    pub active: bool,
}

impl Obstacle {
    pub fn rect(&self) -> Rect {
        Rect { center: self.center, heading: self.heading, length: self.length, width: self.width }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::range("obstacle.length_m/width_m", format!("obstacle `{}` needs positive size", self.name)));
        }
        if !(self.detection_range >= 0.0) {
            return Err(Error::range("obstacle.detection_range_m", "must be non-negative"));
        }
        Ok(())
    }
}

/// Distance from the ego footprint to the obstacle box.
pub fn distance_to_collision(ego: &Rect, obstacle: &Obstacle) -> f64 {
    rect_distance(ego, &obstacle.rect())
}

/// Latches `active` on every obstacle within its detection range of the ego
/// footprint, or whose reveal time has passed. Returns the indices that
/// became active in this call.
pub fn gate_obstacles(obstacles: &mut [Obstacle], ego: &Rect, time: f64) -> Vec<usize> {
    let mut revealed = Vec::new();
    for (i, o) in obstacles.iter_mut().enumerate() {
        if o.active {
            continue;
        }
        let timed = o.reveal_time.is_some_and(|t| time >= t);
        if timed || distance_to_collision(ego, o) <= o.detection_range {
            o.active = true;
            revealed.push(i);
        }
    }
    revealed
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorParams {
    /// Reaction time that stretches each obstacle box fore and aft by `speed · safe_duration`.
    pub safe_duration_s: f64,
    pub lateral_margin_m: f64,
    /// The reference shift ramps in over `max(safe distance, speed · ramp_duration)`.
    pub ramp_duration_s: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self { safe_duration_s: 1.2, lateral_margin_m: 1.5, ramp_duration_s: 2.5 }
    }
}

impl CorridorParams {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.safe_duration_s > 0.0) {
            return Err(Error::range("safe_duration_s", "must be positive"));
        }
        if !(self.lateral_margin_m >= 0.0) {
            return Err(Error::range("lateral_margin_m", "must be non-negative"));
        }
        if !(self.ramp_duration_s >= 0.0) {
            return Err(Error::range("ramp_duration_s", "must be non-negative"));
        }
        Ok(())
    }
}

/// An inflated obstacle in path coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoGoBox {
    pub s_min: f64,
    pub s_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub pass_left: bool,
    /// Reference offset while passing: middle of the free side.
    pub offset: f64,
    pub ramp: f64,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl NoGoBox {
    /// Inflates `obstacle` at planning speed `speed`.
    pub fn new(
        path: &GlobalPath,
        obstacle: &Obstacle,
        speed: f64,
        params: &CorridorParams,
        index: usize,
    ) -> Result<Self, Error> {
        let half_width = path.lane_half_width;
        // extent of the obstacle box in path coordinates around its projection
        let proj = path.project(obstacle.center[0], obstacle.center[1], None);
        let rel = obstacle.heading - path.point_at(proj.s).psi;
        let (c, s) = (rel.cos().abs(), rel.sin().abs());
        let half_s = 0.5 * (obstacle.length * c + obstacle.width * s);
        let half_d = 0.5 * (obstacle.length * s + obstacle.width * c);
        let safe = params.safe_duration_s * speed;
        let d_min = proj.d - half_d - params.lateral_margin_m;
        let d_max = proj.d + half_d + params.lateral_margin_m;
        let left_free = half_width - d_max;
        let right_free = d_min + half_width;
        let pass_left = left_free >= right_free;
        let (lo, hi) = if pass_left { (d_max, half_width) } else { (-half_width, d_min) };
        if hi - lo < 2.0 * REFERENCE_MARGIN {
            return Err(Error::CorridorEmpty { stage: index });
        }
        Ok(Self {
            s_min: proj.s - half_s - safe,
            s_max: proj.s + half_s + safe,
            d_min,
            d_max,
            pass_left,
            offset: 0.5 * (lo + hi),
            ramp: safe.max(speed * params.ramp_duration_s),
        })
    }

    pub fn contains_s(&self, s: f64) -> bool {
        s >= self.s_min && s <= self.s_max
    }

    /// 1 inside the box, smoothstep ramps before and after, 0 far away.
    pub fn weight(&self, s: f64) -> f64 {
        if self.contains_s(s) {
            1.0
        } else if s < self.s_min {
            if self.ramp > 0.0 { smoothstep(1.0 - (self.s_min - s) / self.ramp) } else { 0.0 }
        } else if self.ramp > 0.0 {
            smoothstep(1.0 - (s - self.s_max) / self.ramp)
        } else {
            0.0
        }
    }
}

/// Lateral bounds `(right, left)` and reference offset at arc length `s`.
pub fn lateral_bounds(s: f64, boxes: &[NoGoBox], lane_half_width: f64) -> Option<(f64, f64, f64)> {
    let (mut right, mut left) = (-lane_half_width, lane_half_width);
    let mut inside = false;
    for b in boxes.iter().filter(|b| b.contains_s(s)) {
        inside = true;
        if b.pass_left {
            right = right.max(b.d_max);
        } else {
            left = left.min(b.d_min);
        }
    }
    if left - right < 2.0 * REFERENCE_MARGIN {
        return None;
    }
    let offset = if inside {
        0.5 * (left + right)
    } else {
        let raw: f64 = boxes.iter().map(|b| b.weight(s) * b.offset).sum();
        raw.clamp(right + REFERENCE_MARGIN, left - REFERENCE_MARGIN)
    };
    Some((right, left, offset))
}

/// Half-space pair of one stage: `right ≤ nᵀ(p − center) ≤ left`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorridorStage {
    /// Path point the offsets are measured from.
    pub center: [f64; 2],
    /// Left unit normal of the path heading.
    pub normal: [f64; 2],
    pub left: f64,
    pub right: f64,
    /// Lateral offset of the adjusted reference.
    pub ref_offset: f64,
}

impl CorridorStage {
    /// Straight stage with heading `psi`, reference on the center line.
    pub fn straight(center: [f64; 2], psi: f64, left: f64, right: f64) -> Self {
        Self { center, normal: [-psi.sin(), psi.cos()], left, right, ref_offset: 0.0 }
    }

    pub fn offset_of(&self, p: [f64; 2]) -> f64 {
        self.normal[0] * (p[0] - self.center[0]) + self.normal[1] * (p[1] - self.center[1])
    }

    /// Bounds on `nᵀp` as used by the optimizer.
    pub fn normal_bounds(&self) -> (f64, f64) {
        let c = self.normal[0] * self.center[0] + self.normal[1] * self.center[1];
        (c + self.right, c + self.left)
    }

    /// Distance outside the slab, zero inside.
    pub fn violation(&self, p: [f64; 2]) -> f64 {
        let d = self.offset_of(p);
        (d - self.left).max(self.right - d).max(0.0)
    }

    /// Moves `p` along the normal into the slab.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let d = self.offset_of(p);
        let shift = d.clamp(self.right, self.left) - d;
        [p[0] + shift * self.normal[0], p[1] + shift * self.normal[1]]
    }
}

/// Corridor stages for `k = 1..N` and the adjusted reference for `k = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corridor {
    pub stages: Vec<CorridorStage>,
    pub reference: ReferenceWindow,
}

impl Corridor {
    /// Full lane at every stage, reference unchanged.
    pub fn unobstructed(window: &ReferenceWindow, lane_half_width: f64) -> Self {
        let stages = window.x_ref[1..]
            .iter()
            .map(|r| CorridorStage::straight([r[3], r[4]], r[5], lane_half_width, -lane_half_width))
            .collect();
        Self { stages, reference: window.clone() }
    }
}

/// Planning speed of an obstacle: the reference speed at its projection.
pub fn obstacle_speed(path: &GlobalPath, obstacle: &Obstacle) -> f64 {
    let proj = path.project(obstacle.center[0], obstacle.center[1], None);
    path.point_at(proj.s).v_ref
}

/// Inflated boxes of all active obstacles.
pub fn no_go_boxes(path: &GlobalPath, obstacles: &[Obstacle], params: &CorridorParams) -> Result<Vec<NoGoBox>, Error> {
    obstacles
        .iter()
        .filter(|o| o.active)
        .map(|o| NoGoBox::new(path, o, obstacle_speed(path, o), params, 0))
        .collect()
}

/// Builds the corridor along `window` (whose points lie on `path`).
pub fn build_corridor(path: &GlobalPath, window: &ReferenceWindow, boxes: &[NoGoBox]) -> Result<Corridor, Error> {
    let lane = path.lane_half_width;
    let mut reference = window.clone();
    let mut stages = Vec::with_capacity(window.len().saturating_sub(1));
    for (k, (r, &s)) in window.x_ref.iter().zip(&window.s).enumerate() {
        let (right, left, offset) = lateral_bounds(s, boxes, lane).ok_or(Error::CorridorEmpty { stage: k })?;
        let psi = r[5];
        let normal = [-psi.sin(), psi.cos()];
        let center = [r[3], r[4]];
        if k > 0 {
            stages.push(CorridorStage { center, normal, left, right, ref_offset: offset });
        }
        if offset != 0.0 || !boxes.is_empty() {
            // heading follows the slope of the shifted reference
            let h = 0.05;
            let slope = match (lateral_bounds(s + h, boxes, lane), lateral_bounds((s - h).max(0.0), boxes, lane)) {
                (Some(a), Some(b)) if s < path.s_end() => (a.2 - b.2) / (s + h - (s - h).max(0.0)),
                _ => 0.0,
            };
            let adj = &mut reference.x_ref[k];
            adj[3] = center[0] + offset * normal[0];
            adj[4] = center[1] + offset * normal[1];
            adj[5] = psi + slope.atan();
        }
    }
    Ok(Corridor { stages, reference })
}
