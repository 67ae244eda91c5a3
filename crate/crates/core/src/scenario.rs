//! Scenario files, run orchestration, summaries and plot data.
//!
//! Scenarios are TOML with units in the key names. Three are built in:
//! `dlc80` (double lane change at 80 km/h), `parking10` (pedestrian
//! revealed at 10 m while creeping at 10 km/h) and `alden60` (lane keeping
//! at 60 km/h past a parked car).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ocp::OcpConfig;
use crate::planner::{no_go_boxes, CorridorParams, GlobalPath, Obstacle, PathSample};
use crate::sim::{heading_error, run_closed_loop, PlantConfig, RunLog, SimSetup};
use crate::sqp::Timings;
use crate::vehicle::{ControlInput, VehicleParams, VehicleState};
use crate::Error;

pub const BUILTIN: [(&str, &str); 3] = [
    ("dlc80", include_str!("../scenarios/dlc80.toml")),
    ("parking10", include_str!("../scenarios/parking10.toml")),
    ("alden60", include_str!("../scenarios/alden60.toml")),
];

const REQUIRED: [&str; 2] = ["name", "path"];

/// Reference speed after the start transient used for steady-state statistics.
pub const STEADY_STATE_AFTER_S: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Straight,
    DoubleLaneChange,
    Csv,
}

/// Double-lane-change centerline. Section lengths and the lane offset follow
/// the published ISO 3888-1 layout; they are external data, not derived here.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlcGeometry {
    pub lead_in_m: f64,
    pub entry_length_m: f64,
    pub first_transition_m: f64,
    pub side_lane_length_m: f64,
    pub second_transition_m: f64,
    pub exit_length_m: f64,
    pub run_out_m: f64,
    pub lane_offset_m: f64,
}

impl Default for DlcGeometry {
    fn default() -> Self {
        Self {
            lead_in_m: 60.0,
            entry_length_m: 15.0,
            first_transition_m: 30.0,
            side_lane_length_m: 25.0,
            second_transition_m: 25.0,
            exit_length_m: 15.0,
            run_out_m: 80.0,
            lane_offset_m: 3.5,
        }
    }
}

impl DlcGeometry {
    pub fn total_length(&self) -> f64 {
        self.lead_in_m
            + self.entry_length_m
            + self.first_transition_m
            + self.side_lane_length_m
            + self.second_transition_m
            + self.exit_length_m
            + self.run_out_m
    }

    /// Lateral offset and slope of the centerline at longitudinal position `x`.
    pub fn offset(&self, x: f64) -> (f64, f64) {
        use std::f64::consts::PI;
        let h = self.lane_offset_m;
        let up = self.lead_in_m + self.entry_length_m;
        let top = up + self.first_transition_m;
        let down = top + self.side_lane_length_m;
        let bottom = down + self.second_transition_m;
        if x <= up || x >= bottom {
            (0.0, 0.0)
        } else if x < top {
            let w = PI / self.first_transition_m;
            (0.5 * h * (1.0 - (w * (x - up)).cos()), 0.5 * h * w * (w * (x - up)).sin())
        } else if x <= down {
            (h, 0.0)
        } else {
            let w = PI / self.second_transition_m;
            (0.5 * h * (1.0 + (w * (x - down)).cos()), -0.5 * h * w * (w * (x - down)).sin())
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let lengths = [
            ("path.dlc.lead_in_m", self.lead_in_m),
            ("path.dlc.entry_length_m", self.entry_length_m),
            ("path.dlc.side_lane_length_m", self.side_lane_length_m),
            ("path.dlc.exit_length_m", self.exit_length_m),
            ("path.dlc.run_out_m", self.run_out_m),
        ];
        for (f, v) in lengths {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::range(f, "must be non-negative"));
            }
        }
        for (f, v) in [("path.dlc.first_transition_m", self.first_transition_m), ("path.dlc.second_transition_m", self.second_transition_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::range(f, "must be positive"));
            }
        }
        if !self.lane_offset_m.is_finite() {
            return Err(Error::range("path.dlc.lane_offset_m", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub kind: PathKind,
    /// Cruise speed; ignored for `csv`, which carries its own profile.
    #[serde(default)]
    pub speed_kph: f64,
    pub lane_half_width_m: f64,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default)]
    pub length_m: f64,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub dlc: DlcGeometry,
}

fn default_spacing() -> f64 {
    0.5
}

/// Obstacle placed either in path coordinates or in the world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub name: String,
    pub s_m: Option<f64>,
    pub d_m: Option<f64>,
    pub x_m: Option<f64>,
    pub y_m: Option<f64>,
    pub heading_rad: Option<f64>,
    pub length_m: f64,
    pub width_m: f64,
    pub detection_range_m: f64,
    pub reveal_time_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub lateral_offset_m: f64,
    pub heading_offset_rad: f64,
    /// Defaults to the reference speed at the start of the path.
    pub speed_kph: Option<f64>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { lateral_offset_m: 0.0, heading_offset_rad: 0.0, speed_kph: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSpec {
    pub length_m: f64,
    pub width_m: f64,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self { length_m: 4.4, width_m: 1.8 }
    }
}

/// Conditions a run must meet to pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassSpec {
    pub max_deviation_m: Option<f64>,
    pub max_corridor_violation_m: f64,
    /// Clearance to every obstacle must stay strictly above this.
    pub min_clearance_m: f64,
    /// Bound on the final distance to the path centerline.
    pub final_centerline_m: Option<f64>,
}

impl Default for PassSpec {
    fn default() -> Self {
        Self { max_deviation_m: None, max_corridor_violation_m: 0.0, min_clearance_m: 0.0, final_centerline_m: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub path: PathSpec,
    #[serde(default = "default_max_time")]
    pub max_time_s: f64,
    #[serde(default = "default_stop_distance")]
    pub stop_distance_m: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub ego: EgoSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub planner: CorridorParams,
    #[serde(default)]
    pub ocp: OcpConfig,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub pass: PassSpec,
}

fn default_max_time() -> f64 {
    60.0
}

fn default_stop_distance() -> f64 {
    40.0
}

/// A validated scenario with its path resolved.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub path: GlobalPath,
    pub obstacles: Vec<Obstacle>,
}

fn prefixed<T>(prefix: &str, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Range { field, message } if !field.contains('.') => Error::Range { field: format!("{prefix}.{field}"), message },
        other => other,
    })
}

impl Scenario {
    /// Parses scenario text; relative path files resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("parse error: {e}")))?;
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !table.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required fields: {}", missing.join(", "))));
        }
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(format!("invalid scenario: {e}")))?;
        Self::from_config(config, base_dir)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text, Path::new(".")).expect("built-in scenarios are valid"))
    }

    /// A file path, or the name of a built-in scenario.
    pub fn resolve(arg: &str) -> Result<Self, Error> {
        let p = Path::new(arg);
        if p.exists() {
            return Self::load(p);
        }
        Self::builtin(arg).ok_or_else(|| {
            let names: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("`{arg}` is neither a file nor a built-in scenario ({})", names.join(", ")))
        })
    }

    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self, Error> {
        prefixed("ocp", config.ocp.validate())?;
        prefixed("planner", config.planner.validate())?;
        prefixed("vehicle", config.vehicle.validate())?;
        config.plant.validate()?;
        for (f, v) in [("max_time_s", config.max_time_s), ("stop_distance_m", config.stop_distance_m)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::range(f, "must be finite and non-negative"));
            }
        }
        if !(config.ego.length_m > 0.0 && config.ego.width_m > 0.0) {
            return Err(Error::range("ego", "length_m and width_m must be positive"));
        }
        let path = build_path(&config.path, base_dir)?;
        let mut obstacles = Vec::with_capacity(config.obstacles.len());
        for spec in &config.obstacles {
            obstacles.push(place_obstacle(spec, &path)?);
        }
        let scenario = Self { config, path, obstacles };
        // every obstacle box must leave a usable side
        prefixed("planner", scenario.safe_boxes())?;
        Ok(scenario)
    }

    /// The closed-loop setup for a seed; `None` keeps the scenario's seed.
    pub fn setup(&self, seed: Option<u64>) -> SimSetup {
        let c = &self.config;
        let start = self.path.point_at(0.0);
        let [x, y] = self.path.frenet_to_xy(0.0, c.initial.lateral_offset_m);
        let vx = c.initial.speed_kph.map_or(start.v_ref, |v| v / 3.6);
        let state = VehicleState::new(vx, 0.0, 0.0, x, y, start.psi + c.initial.heading_offset_rad);
        let tr = c.vehicle.equilibrium_throttle(vx).clamp(c.ocp.tr_bounds[0], c.ocp.tr_bounds[1]);
        let mut plant = c.plant.clone();
        if let Some(seed) = seed {
            plant.seed = seed;
        }
        SimSetup {
            path: self.path.clone(),
            obstacles: self.obstacles.clone(),
            ocp: c.ocp.clone(),
            params: c.vehicle,
            corridor: c.planner,
            plant,
            initial_state: state,
            initial_control: ControlInput::new(0.0, tr),
            max_time_s: c.max_time_s,
            stop_distance_m: c.stop_distance_m,
            ego_length_m: c.ego.length_m,
            ego_width_m: c.ego.width_m,
            compare_cold_start: false,
        }
    }

    /// Fore and aft extent of each obstacle's no-go box beyond its body.
    pub fn safe_boxes(&self) -> Result<Vec<BoxExtent>, Error> {
        let revealed: Vec<Obstacle> = self.obstacles.iter().map(|o| Obstacle { active: true, ..o.clone() }).collect();
        let boxes = no_go_boxes(&self.path, &revealed, &self.config.planner)?;
        Ok(self
            .obstacles
            .iter()
            .zip(boxes)
            .map(|(o, b)| {
                let s = self.path.project(o.center[0], o.center[1], None).s;
                BoxExtent {
                    name: o.name.clone(),
                    fore_m: b.s_max - s - 0.5 * o.length,
                    aft_m: s - 0.5 * o.length - b.s_min,
                    offset_m: b.offset,
                }
            })
            .collect())
    }
}

fn build_path(spec: &PathSpec, base_dir: &Path) -> Result<GlobalPath, Error> {
    if !(spec.lane_half_width_m > 0.0) {
        return Err(Error::range("path.lane_half_width_m", "must be positive"));
    }
    if spec.kind == PathKind::Csv {
        let file = spec.file.as_ref().ok_or_else(|| Error::Config("path.file is required for kind = \"csv\"".into()))?;
        let full = if file.is_absolute() { file.clone() } else { base_dir.join(file) };
        return GlobalPath::from_csv(full, spec.lane_half_width_m);
    }
    if !(spec.speed_kph > 0.0 && spec.speed_kph <= 250.0) {
        return Err(Error::range("path.speed_kph", "must be in (0, 250]"));
    }
    if !(spec.spacing_m > 0.0) {
        return Err(Error::range("path.spacing_m", "must be positive"));
    }
    let v = spec.speed_kph / 3.6;
    let (length, shape): (f64, Box<dyn Fn(f64) -> (f64, f64)>) = match spec.kind {
        PathKind::Straight => {
            if !(spec.length_m > 0.0) {
                return Err(Error::range("path.length_m", "must be positive"));
            }
            (spec.length_m, Box::new(|_| (0.0, 0.0)))
        }
        PathKind::DoubleLaneChange => {
            spec.dlc.validate()?;
            let g = spec.dlc;
            (g.total_length(), Box::new(move |x| g.offset(x)))
        }
        PathKind::Csv => unreachable!(),
    };
    let n = (length / spec.spacing_m).ceil() as usize;
    let samples: Vec<PathSample> = (0..=n)
        .map(|i| {
            let x = (i as f64 * spec.spacing_m).min(length);
            let (y, slope) = shape(x);
            PathSample { x, y, psi: slope.atan(), v_ref: v }
        })
        .collect();
    GlobalPath::new(&samples, spec.lane_half_width_m)
}

fn place_obstacle(spec: &ObstacleSpec, path: &GlobalPath) -> Result<Obstacle, Error> {
    let (center, heading) = match (spec.s_m, spec.d_m, spec.x_m, spec.y_m) {
        (Some(s), d, None, None) => {
            if !(0.0..=path.s_end()).contains(&s) {
                return Err(Error::range("obstacles.s_m", format!("obstacle `{}` is off the path", spec.name)));
            }
            (path.frenet_to_xy(s, d.unwrap_or(0.0)), path.point_at(s).psi)
        }
        (None, None, Some(x), Some(y)) => ([x, y], spec.heading_rad.unwrap_or(0.0)),
        _ => {
            return Err(Error::Config(format!(
                "obstacle `{}` needs either s_m (and optionally d_m) or both x_m and y_m",
                spec.name
            )))
        }
    };
    let o = Obstacle {
        name: spec.name.clone(),
        center,
        heading: spec.heading_rad.unwrap_or(heading),
        length: spec.length_m,
        width: spec.width_m,
        detection_range: spec.detection_range_m,
        reveal_time: spec.reveal_time_s,
        active: false,
    };
    o.validate()?;
    Ok(o)
}

/// No-go box extent around one obstacle.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxExtent {
    pub name: String,
    pub fore_m: f64,
    pub aft_m: f64,
    pub offset_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reveal {
    pub time_s: f64,
    pub clearance_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub max_ms: f64,
    /// Share of the accounted time per category.
    pub shares: Vec<(&'static str, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: usize,
}

impl IterationStats {
    pub fn of(values: &[usize]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, median: f64::NAN, p95: f64::NAN, max: 0 };
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        Self {
            mean: v.iter().sum::<usize>() as f64 / v.len() as f64,
            median: median_sorted(&v),
            p95: v[nearest_rank(v.len(), 0.95)] as f64,
            max: *v.last().unwrap(),
        }
    }
}

fn median_sorted(v: &[usize]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

fn nearest_rank(n: usize, p: f64) -> usize {
    ((p * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// Statistics of one run, computed from the log alone.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub duration_s: f64,
    pub outcome: String,
    /// Lateral deviation from the adjusted reference.
    pub rmse_lateral_m: f64,
    pub rmse_heading_rad: f64,
    pub rmse_vx_mps: f64,
    pub max_lateral_deviation_m: f64,
    pub max_corridor_violation_m: f64,
    pub min_clearance_m: f64,
    /// Mean |vx − v_ref| after the start transient while the reference is unshifted.
    pub vx_steady_state_error_mps: f64,
    /// Largest planned lateral reference shift, signed.
    pub max_reference_shift_m: f64,
    pub final_lateral_error_m: f64,
    pub reveals: Vec<Reveal>,
    pub sqp: IterationStats,
    pub qp: IterationStats,
    pub convergence_rate: f64,
    pub timing: Option<TimingSummary>,
    /// Filled in by [`run`]; a bare log carries no obstacle geometry.
    pub safe_boxes: Vec<BoxExtent>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

pub fn summarize(log: &RunLog) -> Result<RunSummary, Error> {
    let r = &log.records;
    if r.is_empty() {
        return Err(Error::Config("cannot summarize an empty run log".into()));
    }
    let last = r.last().unwrap();
    let mut reveals = Vec::new();
    let mut active = 0;
    for rec in r {
        if rec.active_obstacles > active {
            reveals.push(Reveal { time_s: rec.time, clearance_m: rec.clearance });
        }
        active = rec.active_obstacles;
    }
    let steady: Vec<f64> = r
        .iter()
        .filter(|x| x.time >= STEADY_STATE_AFTER_S && x.ref_offset == 0.0)
        .map(|x| (x.state.vx - x.reference[0]).abs())
        .collect();
    let shift = r.iter().map(|x| x.ref_offset).fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    let timing = (!log.timings.is_empty()).then(|| summarize_timings(&log.timings));
    Ok(RunSummary {
        steps: r.len(),
        duration_s: last.time - r[0].time + log.dt,
        outcome: log.outcome.as_str().to_string(),
        rmse_lateral_m: rms(r.iter().map(|x| x.deviation())),
        rmse_heading_rad: rms(r.iter().map(heading_error)),
        rmse_vx_mps: rms(r.iter().map(|x| x.state.vx - x.reference[0])),
        max_lateral_deviation_m: r.iter().map(|x| x.deviation().abs()).fold(0.0, f64::max),
        max_corridor_violation_m: r.iter().map(|x| x.corridor_violation).fold(0.0, f64::max),
        min_clearance_m: r.iter().map(|x| x.clearance).fold(f64::INFINITY, f64::min),
        vx_steady_state_error_mps: if steady.is_empty() { f64::NAN } else { steady.iter().sum::<f64>() / steady.len() as f64 },
        max_reference_shift_m: shift,
        final_lateral_error_m: last.lateral_error,
        reveals,
        sqp: IterationStats::of(&r.iter().map(|x| x.sqp_iterations).collect::<Vec<_>>()),
        qp: IterationStats::of(&r.iter().map(|x| x.qp_iterations).collect::<Vec<_>>()),
        convergence_rate: r.iter().filter(|x| x.status.is_converged()).count() as f64 / r.len() as f64,
        timing,
        safe_boxes: Vec::new(),
    })
}

fn summarize_timings(t: &[Timings]) -> TimingSummary {
    let ms: Vec<f64> = t.iter().map(|x| x.total.as_secs_f64() * 1e3).collect();
    let accounted: f64 = t.iter().map(|x| x.accounted().as_secs_f64()).sum();
    let shares = Timings::CATEGORIES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let s: f64 = t.iter().map(|x| x.categories()[i].1.as_secs_f64()).sum();
            (*name, if accounted > 0.0 { s / accounted } else { 0.0 })
        })
        .collect();
    TimingSummary { mean_ms: ms.iter().sum::<f64>() / ms.len() as f64, max_ms: ms.iter().copied().fold(0.0, f64::max), shares }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "outcome: {}", self.outcome)?;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "duration_s: {:.2}", self.duration_s)?;
        writeln!(f, "rmse_lateral_m: {:.4}", self.rmse_lateral_m)?;
        writeln!(f, "rmse_heading_rad: {:.5}", self.rmse_heading_rad)?;
        writeln!(f, "rmse_vx_mps: {:.4}", self.rmse_vx_mps)?;
        writeln!(f, "max_lateral_deviation_m: {:.4}", self.max_lateral_deviation_m)?;
        writeln!(f, "max_corridor_violation_m: {:.4}", self.max_corridor_violation_m)?;
        writeln!(f, "min_clearance_m: {:.3}", self.min_clearance_m)?;
        writeln!(f, "vx_steady_state_error_mps: {:.4}", self.vx_steady_state_error_mps)?;
        writeln!(f, "max_reference_shift_m: {:.3}", self.max_reference_shift_m)?;
        writeln!(f, "final_lateral_error_m: {:.4}", self.final_lateral_error_m)?;
        for (i, r) in self.reveals.iter().enumerate() {
            writeln!(f, "reveal_{i}: t = {:.2} s, distance to collision {:.3} m", r.time_s, r.clearance_m)?;
        }
        for b in &self.safe_boxes {
            writeln!(f, "safe_box_{}: fore {:.2} m, aft {:.2} m, reference offset {:.2} m", b.name, b.fore_m, b.aft_m, b.offset_m)?;
        }
        for (name, s) in [("sqp", &self.sqp), ("qp", &self.qp)] {
            writeln!(f, "{name}_iterations: mean {:.2}, median {}, p95 {}, max {}", s.mean, s.median, s.p95, s.max)?;
        }
        writeln!(f, "convergence_rate: {:.4}", self.convergence_rate)?;
        if let Some(t) = &self.timing {
            writeln!(f, "solve_time_ms: mean {:.3}, max {:.3}", t.mean_ms, t.max_ms)?;
            for (name, share) in &t.shares {
                writeln!(f, "timing_share_{name}: {:.1}%", 100.0 * share)?;
            }
        }
        Ok(())
    }
}

/// One pass condition and whether it held.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn evaluate(summary: &RunSummary, pass: &PassSpec) -> Vec<Check> {
    let mut checks = vec![
        Check {
            name: "completed".into(),
            passed: summary.outcome == "completed",
            detail: summary.outcome.clone(),
        },
        Check {
            name: "corridor".into(),
            passed: summary.max_corridor_violation_m <= pass.max_corridor_violation_m,
            detail: format!("max violation {:.4} m", summary.max_corridor_violation_m),
        },
        Check {
            name: "clearance".into(),
            passed: summary.min_clearance_m > pass.min_clearance_m,
            detail: format!("min clearance {:.3} m", summary.min_clearance_m),
        },
    ];
    if let Some(max) = pass.max_deviation_m {
        checks.push(Check {
            name: "deviation".into(),
            passed: summary.max_lateral_deviation_m < max,
            detail: format!("max deviation {:.4} m (limit {max})", summary.max_lateral_deviation_m),
        });
    }
    if let Some(max) = pass.final_centerline_m {
        checks.push(Check {
            name: "final_centerline".into(),
            passed: summary.final_lateral_error_m.abs() <= max,
            detail: format!("final offset {:.4} m (limit {max})", summary.final_lateral_error_m),
        });
    }
    checks
}

/// Artifacts of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: RunLog,
    pub summary: RunSummary,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs a scenario; with `out_dir` set, writes the log, summary and plot data there.
pub fn run(scenario: &Scenario, seed: Option<u64>, out_dir: Option<&Path>) -> Result<RunOutput, Error> {
    let log = run_closed_loop(&scenario.setup(seed), |_| {})?;
    let mut summary = summarize(&log)?;
    summary.safe_boxes = scenario.safe_boxes()?;
    let checks = evaluate(&summary, &scenario.config.pass);
    if let Some(dir) = out_dir {
        write_outputs(dir, &log, &summary, &checks)?;
    }
    Ok(RunOutput { log, summary, checks })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

pub fn write_outputs(dir: &Path, log: &RunLog, summary: &RunSummary, checks: &[Check]) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "runlog.csv", &log.to_csv())?;
    write(dir, "timing.csv", &log.timing_csv())?;
    let mut report = summary.to_string();
    for c in checks {
        report.push_str(&format!("check_{}: {} ({})\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail));
    }
    write(dir, "summary.txt", &report)?;
    for (name, text) in plot_data(log) {
        write(dir, name, &text)?;
    }
    Ok(())
}

/// Plot-ready CSV tables derived from the log only.
pub fn plot_data(log: &RunLog) -> Vec<(&'static str, String)> {
    let table = |header: &str, row: &dyn Fn(&crate::sim::StepRecord) -> Vec<f64>| {
        let mut out = format!("{header}\n");
        for r in &log.records {
            let v: Vec<String> = row(r).iter().map(f64::to_string).collect();
            out.push_str(&v.join(","));
            out.push('\n');
        }
        out
    };
    let mut files = vec![
        ("plot_xy.csv", table("x_m,y_m,ref_x_m,ref_y_m", &|r| vec![r.state.x, r.state.y, r.reference[1], r.reference[2]])),
        ("plot_x_yaw.csv", table("x_m,psi_rad,ref_psi_rad", &|r| vec![r.state.x, r.state.psi, r.reference[3]])),
        ("plot_vx.csv", table("time_s,vx_mps,ref_vx_mps", &|r| vec![r.time, r.state.vx, r.reference[0]])),
        (
            "plot_controls.csv",
            table("time_s,cmd_delta_rad,applied_delta_rad,cmd_tr,applied_tr", &|r| {
                vec![r.time, r.command.delta, r.applied.delta, r.command.tr, r.applied.tr]
            }),
        ),
        (
            "plot_lateral.csv",
            table("s_m,lateral_error_m,ref_offset_m,corridor_right_m,corridor_left_m", &|r| {
                vec![r.s, r.lateral_error, r.ref_offset, r.corridor_right, r.corridor_left]
            }),
        ),
    ];
    if !log.timings.is_empty() {
        let mut out = String::from("time_s,solve_ms\n");
        for (r, t) in log.records.iter().zip(&log.timings) {
            out.push_str(&format!("{},{:.6}\n", r.time, t.total.as_secs_f64() * 1e3));
        }
        files.push(("plot_exec_time.csv", out));
    }
    files
}

/// Loads `runlog.csv` and, if present next to it, `timing.csv`.
pub fn load_log(path: impl AsRef<Path>) -> Result<RunLog, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut log = RunLog::from_csv(&text)?;
    let timing = path.with_file_name("timing.csv");
    if let Ok(t) = std::fs::read_to_string(&timing) {
        let timings = RunLog::parse_timings(&t)?;
        if timings.len() == log.records.len() {
            log.timings = timings;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_with_expected_settings() {
        let s = Scenario::builtin("dlc80").unwrap();
        assert_eq!(s.config.ocp.horizon, 30);
        assert_eq!(s.config.ocp.dt_s, 0.04);
        assert!((s.path.point_at(0.0).v_ref - 80.0 / 3.6).abs() < 1e-12);
        assert!(Scenario::builtin("parking10").is_some());
        assert!(Scenario::builtin("alden60").is_some());
    }

    #[test]
    fn empty_file_lists_required_fields() {
        let err = Scenario::parse("", Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("name") && err.contains("path"), "{err}");
    }

    #[test]
    fn negative_safe_duration_names_the_field() {
        let text = BUILTIN[2].1.replace("safe_duration_s = 1.2", "safe_duration_s = -1.0");
        assert_ne!(text, BUILTIN[2].1);
        match Scenario::parse(&text, Path::new(".")) {
            Err(Error::Range { field, .. }) => assert_eq!(field, "planner.safe_duration_s"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\nspeed_mph = 3\n", BUILTIN[0].1);
        assert!(Scenario::parse(&text, Path::new(".")).is_err());
    }

    #[test]
    fn dlc_centerline_is_continuous_and_reaches_the_offset() {
        let g = DlcGeometry::default();
        let mut prev = g.offset(0.0).0;
        let mut peak: f64 = 0.0;
        let n = 4000;
        for i in 1..=n {
            let x = g.total_length() * i as f64 / n as f64;
            let (y, _) = g.offset(x);
            assert!((y - prev).abs() < 0.05);
            peak = peak.max(y);
            prev = y;
        }
        assert_eq!(peak, g.lane_offset_m);
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn alden_box_spans_twenty_metres_each_way() {
        let s = Scenario::builtin("alden60").unwrap();
        let b = &s.safe_boxes().unwrap()[0];
        assert!((b.fore_m - 20.0).abs() < 0.1 && (b.aft_m - 20.0).abs() < 0.1, "{b:?}");
    }

    #[test]
    fn iteration_stats_use_nearest_rank() {
        let s = IterationStats::of(&[1, 2, 2, 3, 10]);
        assert_eq!(s.median, 2.0);
        assert_eq!(s.p95, 10.0);
        assert_eq!(s.max, 10);
        assert_eq!(IterationStats::of(&[1, 3]).median, 2.0);
    }
}
