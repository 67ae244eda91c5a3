//! Deterministic closed-loop simulation.
//!
//! The plant is the bicycle model with perturbed parameters, a FIFO actuator
//! delay, a steering rate limit and Gaussian measurement noise from a seeded
//! ChaCha stream. The controller solves one OCP per sample.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ocp::{build_nlp, shift_warm_start, warm_start_shift, OcpConfig, OcpNlp};
use crate::planner::{
    build_corridor, extract_reference_window, gate_obstacles, lateral_bounds, no_go_boxes, rect_distance,
    Corridor, CorridorParams, GlobalPath, NoGoBox, Obstacle, Projection, Rect,
};
use crate::sqp::{NlpSolution, SolveStats, SolveStatus, SqpSolver, Timings};
use crate::vehicle::{rk4_step, wrap_angle, ControlInput, VehicleParams, VehicleState};
use crate::Error;

/// Lateral error that aborts a run.
pub const DIVERGENCE_LIMIT_M: f64 = 20.0;

/// Multiplicative perturbation of each physical vehicle parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamScale {
    pub mass: f64,
    pub iz: f64,
    pub lf: f64,
    pub lr: f64,
    pub kf: f64,
    pub kr: f64,
    pub t_max: f64,
    pub wheel_radius: f64,
    pub cr0: f64,
    pub cr2: f64,
}

impl ParamScale {
    pub fn identity() -> Self {
        Self { mass: 1.0, iz: 1.0, lf: 1.0, lr: 1.0, kf: 1.0, kr: 1.0, t_max: 1.0, wheel_radius: 1.0, cr0: 1.0, cr2: 1.0 }
    }

    fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("mass", self.mass),
            ("iz", self.iz),
            ("lf", self.lf),
            ("lr", self.lr),
            ("kf", self.kf),
            ("kr", self.kr),
            ("t_max", self.t_max),
            ("wheel_radius", self.wheel_radius),
            ("cr0", self.cr0),
            ("cr2", self.cr2),
        ]
    }

    pub fn apply(&self, p: &VehicleParams) -> VehicleParams {
        VehicleParams {
            mass: p.mass * self.mass,
            iz: p.iz * self.iz,
            lf: p.lf * self.lf,
            lr: p.lr * self.lr,
            kf: p.kf * self.kf,
            kr: p.kr * self.kr,
            t_max: p.t_max * self.t_max,
            wheel_radius: p.wheel_radius * self.wheel_radius,
            cr0: p.cr0 * self.cr0,
            cr2: p.cr2 * self.cr2,
            ..p.clone()
        }
    }
}

impl Default for ParamScale {
    /// Heavier car, softer tires and more drag than the controller assumes.
    fn default() -> Self {
        Self { mass: 1.1, kf: 0.85, kr: 0.85, cr2: 1.2, ..Self::identity() }
    }
}

/// Standard deviation of additive measurement noise per state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStd {
    pub vx_mps: f64,
    pub vy_mps: f64,
    pub omega_radps: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub psi_rad: f64,
}

impl NoiseStd {
    pub fn zero() -> Self {
        Self { vx_mps: 0.0, vy_mps: 0.0, omega_radps: 0.0, x_m: 0.0, y_m: 0.0, psi_rad: 0.0 }
    }

    fn to_array(self) -> [f64; 6] {
        [self.vx_mps, self.vy_mps, self.omega_radps, self.x_m, self.y_m, self.psi_rad]
    }
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self { vx_mps: 0.05, vy_mps: 0.05, omega_radps: 0.005, x_m: 0.05, y_m: 0.05, psi_rad: 0.005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub param_scale: ParamScale,
    pub noise_std: NoiseStd,
    pub actuator_delay_steps: usize,
    pub steer_rate_limit_radps: f64,
    pub substeps: usize,
    /// Mechanical steering stop.
    pub delta_limit_rad: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            param_scale: ParamScale::default(),
            noise_std: NoiseStd::default(),
            actuator_delay_steps: 1,
            steer_rate_limit_radps: 1.0,
            substeps: 16,
            delta_limit_rad: 0.5,
            seed: 0,
        }
    }
}

impl PlantConfig {
    /// Exact model, no delay, no noise, no rate limit.
    pub fn ideal() -> Self {
        Self {
            param_scale: ParamScale::identity(),
            noise_std: NoiseStd::zero(),
            actuator_delay_steps: 0,
            steer_rate_limit_radps: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in self.param_scale.entries() {
            if !(0.5..=2.0).contains(&v) {
                return Err(Error::range(&format!("plant.param_scale.{name}"), format!("{v} is outside [0.5, 2.0]")));
            }
        }
        if self.noise_std.to_array().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::range("plant.noise_std", "standard deviations must be finite and non-negative"));
        }
        if !(self.steer_rate_limit_radps > 0.0) {
            return Err(Error::range("plant.steer_rate_limit_radps", "must be positive"));
        }
        if self.substeps < 8 {
            return Err(Error::range("plant.substeps", "the plant integrates with at least 8 substeps"));
        }
        if !(self.delta_limit_rad > 0.0) {
            return Err(Error::range("plant.delta_limit_rad", "must be positive"));
        }
        Ok(())
    }
}

/// The simulated vehicle.
#[derive(Clone, Debug)]
pub struct Plant {
    pub state: VehicleState,
    pub params: VehicleParams,
    pub config: PlantConfig,
    pub dt: f64,
    applied: ControlInput,
    fifo: VecDeque<ControlInput>,
    rng: ChaCha8Rng,
    noise: [Option<Normal<f64>>; 6],
}

impl Plant {
    pub fn new(
        state: VehicleState,
        nominal: &VehicleParams,
        config: &PlantConfig,
        dt: f64,
        initial: ControlInput,
    ) -> Result<Self, Error> {
        config.validate()?;
        let noise = config.noise_std.to_array().map(|s| if s > 0.0 { Normal::new(0.0, s).ok() } else { None });
        Ok(Self {
            state,
            params: config.param_scale.apply(nominal),
            config: config.clone(),
            dt,
            applied: initial,
            fifo: std::iter::repeat(initial).take(config.actuator_delay_steps).collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            noise,
        })
    }

    /// Truth plus noise; always draws six samples so the stream stays aligned.
    pub fn measure(&mut self) -> VehicleState {
        let mut x = self.state.to_array();
        for (xi, n) in x.iter_mut().zip(&self.noise) {
            if let Some(n) = n {
                *xi += n.sample(&mut self.rng);
            }
        }
        VehicleState::from_array(x)
    }

    pub fn applied(&self) -> ControlInput {
        self.applied
    }

    /// Queues `command`, applies the delayed, rate-limited and saturated
    /// input for one sample and returns it.
    pub fn step(&mut self, command: ControlInput) -> ControlInput {
        self.fifo.push_back(command);
        let target = self.fifo.pop_front().expect("fifo holds at least the new command");
        let max_change = self.config.steer_rate_limit_radps * self.dt;
        let change = target.delta - self.applied.delta;
        let delta = if change.abs() <= max_change { target.delta } else { self.applied.delta + max_change.copysign(change) };
        let lim = self.config.delta_limit_rad;
        self.applied = ControlInput::new(delta.clamp(-lim, lim), target.tr.clamp(-1.0, 1.0));
        self.state = rk4_step(&self.state, &self.applied, &self.params, self.dt, self.config.substeps);
        self.applied
    }
}

/// Everything one closed-loop run needs.
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub path: GlobalPath,
    pub obstacles: Vec<Obstacle>,
    pub ocp: OcpConfig,
    pub params: VehicleParams,
    pub corridor: CorridorParams,
    pub plant: PlantConfig,
    pub initial_state: VehicleState,
    pub initial_control: ControlInput,
    pub max_time_s: f64,
    /// The run ends once the car is this close to the end of the path.
    pub stop_distance_m: f64,
    pub ego_length_m: f64,
    pub ego_width_m: f64,
    /// Also solve every step from a cold start and log its iteration count.
    pub compare_cold_start: bool,
}

/// Output of one controller invocation.
#[derive(Clone, Debug)]
pub struct ControllerStep {
    pub nlp: OcpNlp,
    pub solution: NlpSolution,
    pub corridor: Corridor,
    pub projection: Projection,
    pub command: ControlInput,
}

/// Receding-horizon controller with warm starting.
#[derive(Clone, Debug)]
pub struct NmpcController {
    pub ocp: OcpConfig,
    pub params: VehicleParams,
    pub u_last: ControlInput,
    solver: SqpSolver,
    previous: Option<NlpSolution>,
    hint: Option<usize>,
}

impl NmpcController {
    pub fn new(ocp: OcpConfig, params: VehicleParams, u_last: ControlInput) -> Self {
        Self { ocp, params, u_last, solver: SqpSolver::default(), previous: None, hint: None }
    }

    /// Drops the warm start so the next solve begins cold.
    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// Localizes, builds the corridor and OCP, solves it and returns the first control.
    pub fn step(&mut self, measured: &VehicleState, path: &GlobalPath, boxes: &[NoGoBox]) -> Result<ControllerStep, Error> {
        let projection = path.project(measured.x, measured.y, self.hint);
        self.hint = Some(projection.index);
        let window = extract_reference_window(path, projection.s, self.ocp.horizon, self.ocp.dt_s, measured.psi);
        let corridor = build_corridor(path, &window, boxes)?;
        let nlp = build_nlp(measured, &corridor.reference, &corridor, &self.u_last, &self.ocp, &self.params)?;
        let (z0, warm) = match &self.previous {
            Some(prev) => (
                warm_start_shift(&prev.x, measured, &corridor, &self.ocp),
                Some(shift_warm_start(&prev.warm_start(), self.ocp.horizon)),
            ),
            None => (nlp.initial_guess(), None),
        };
        let solution = self.solver.solve(&nlp, &z0, warm.as_ref())?;
        let command = nlp.layout.controls(&solution.x)[0];
        self.u_last = command;
        self.previous = Some(solution.clone());
        Ok(ControllerStep { nlp, solution, corridor, projection, command })
    }
}

/// Statistics of solving `nlp` from its cold-start guess.
pub fn solve_cold(nlp: &OcpNlp) -> Result<SolveStats, Error> {
    Ok(SqpSolver::default().solve(nlp, &nlp.initial_guess(), None)?.stats)
}

/// One logged control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub s: f64,
    pub state: VehicleState,
    pub measured: VehicleState,
    /// Adjusted reference at stage 0: `(v, X, Y, ψ)`.
    pub reference: [f64; 4],
    /// Signed offset of the true position from the path.
    pub lateral_error: f64,
    pub ref_offset: f64,
    pub corridor_right: f64,
    pub corridor_left: f64,
    pub corridor_violation: f64,
    pub command: ControlInput,
    pub applied: ControlInput,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub status: SolveStatus,
    pub objective: f64,
    pub cold_sqp_iterations: Option<usize>,
    pub active_obstacles: usize,
    /// Distance from the footprint to the nearest obstacle box.
    pub clearance: f64,
}

impl StepRecord {
    /// Lateral deviation from the adjusted reference.
    pub fn deviation(&self) -> f64 {
        self.lateral_error - self.ref_offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Completed,
    TimeLimit,
    Diverged { time: f64, error: f64 },
    Failed(String),
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::TimeLimit => "time_limit",
            Outcome::Diverged { .. } => "diverged",
            Outcome::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub dt: f64,
    pub records: Vec<StepRecord>,
    /// Wall-clock timings, one per record; kept out of the deterministic CSV.
    pub timings: Vec<Timings>,
    pub outcome: Outcome,
}

pub const RUNLOG_COLUMNS: [&str; 37] = [
    "step", "time_s", "s_m", "vx_mps", "vy_mps", "omega_radps", "x_m", "y_m", "psi_rad", "meas_vx_mps",
    "meas_vy_mps", "meas_omega_radps", "meas_x_m", "meas_y_m", "meas_psi_rad", "ref_vx_mps", "ref_x_m", "ref_y_m",
    "ref_psi_rad", "lateral_error_m", "ref_offset_m", "corridor_right_m", "corridor_left_m", "corridor_violation_m",
    "cmd_delta_rad", "cmd_tr", "applied_delta_rad", "applied_tr", "sqp_iterations", "qp_iterations",
    "primal_infeasibility", "dual_infeasibility", "status", "objective", "cold_sqp_iterations", "active_obstacles",
    "clearance_m",
];

pub const TIMING_COLUMNS: [&str; 8] =
    ["step", "total_ms", "qp_ms", "line_search_ms", "cost_constraints_ms", "gradient_ms", "hessian_ms", "jacobian_ms"];

fn parse_status(s: &str) -> Option<SolveStatus> {
    [SolveStatus::Converged, SolveStatus::MaxIter, SolveStatus::LineSearchFailure, SolveStatus::QpFailure]
        .into_iter()
        .find(|v| v.as_str() == s)
}

impl RunLog {
    /// Fixed-column CSV; identical inputs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = RUNLOG_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let st = r.state.to_array();
            let me = r.measured.to_array();
            let mut fields: Vec<String> = vec![r.step.to_string(), r.time.to_string(), r.s.to_string()];
            fields.extend(st.iter().map(f64::to_string));
            fields.extend(me.iter().map(f64::to_string));
            fields.extend(r.reference.iter().map(f64::to_string));
            for v in [r.lateral_error, r.ref_offset, r.corridor_right, r.corridor_left, r.corridor_violation] {
                fields.push(v.to_string());
            }
            for v in [r.command.delta, r.command.tr, r.applied.delta, r.applied.tr] {
                fields.push(v.to_string());
            }
            fields.push(r.sqp_iterations.to_string());
            fields.push(r.qp_iterations.to_string());
            fields.push(r.primal_infeasibility.to_string());
            fields.push(r.dual_infeasibility.to_string());
            fields.push(r.status.as_str().to_string());
            fields.push(r.objective.to_string());
            fields.push(r.cold_sqp_iterations.map_or(String::new(), |v| v.to_string()));
            fields.push(r.active_obstacles.to_string());
            fields.push(r.clearance.to_string());
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = TIMING_COLUMNS.join(",");
        out.push('\n');
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        for (r, t) in self.records.iter().zip(&self.timings) {
            let _ = write!(out, "{},{:.6}", r.step, ms(t.total));
            for (_, d) in t.categories() {
                let _ = write!(out, ",{:.6}", ms(d));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`RunLog::to_csv`] output; the outcome is inferred as completed.
    pub fn from_csv(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("run log is empty".into()))?;
        if header.split(',').ne(RUNLOG_COLUMNS.iter().copied()) {
            return Err(Error::Config("run log header does not match the expected columns".into()));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("run log line {}: {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != RUNLOG_COLUMNS.len() {
                return Err(bad("wrong number of fields"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(RUNLOG_COLUMNS[k]));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(RUNLOG_COLUMNS[k]));
            let state = |k: usize| -> Result<VehicleState, Error> {
                Ok(VehicleState::new(num(k)?, num(k + 1)?, num(k + 2)?, num(k + 3)?, num(k + 4)?, num(k + 5)?))
            };
            records.push(StepRecord {
                step: int(0)?,
                time: num(1)?,
                s: num(2)?,
                state: state(3)?,
                measured: state(9)?,
                reference: [num(15)?, num(16)?, num(17)?, num(18)?],
                lateral_error: num(19)?,
                ref_offset: num(20)?,
                corridor_right: num(21)?,
                corridor_left: num(22)?,
                corridor_violation: num(23)?,
                command: ControlInput::new(num(24)?, num(25)?),
                applied: ControlInput::new(num(26)?, num(27)?),
                sqp_iterations: int(28)?,
                qp_iterations: int(29)?,
                primal_infeasibility: num(30)?,
                dual_infeasibility: num(31)?,
                status: parse_status(f[32]).ok_or_else(|| bad("status"))?,
                objective: num(33)?,
                cold_sqp_iterations: if f[34].is_empty() { None } else { Some(int(34)?) },
                active_obstacles: int(35)?,
                clearance: num(36)?,
            });
        }
        if records.is_empty() {
            return Err(Error::Config("run log has no records".into()));
        }
        let dt = if records.len() > 1 { records[1].time - records[0].time } else { 0.0 };
        Ok(Self { dt, records, timings: Vec::new(), outcome: Outcome::Completed })
    }

    /// Parses [`RunLog::timing_csv`] output into per-step timings.
    pub fn parse_timings(text: &str) -> Result<Vec<Timings>, Error> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let v: Result<Vec<f64>, _> = line.split(',').skip(1).map(str::parse::<f64>).collect();
            let v = v.map_err(|_| Error::Config(format!("timing line {}: not numeric", i + 1)))?;
            if v.len() != 7 {
                return Err(Error::Config(format!("timing line {}: expected 8 fields", i + 1)));
            }
            let d = |ms: f64| std::time::Duration::from_secs_f64(ms.max(0.0) / 1e3);
            out.push(Timings {
                total: d(v[0]),
                qp: d(v[1]),
                line_search: d(v[2]),
                cost_constraints: d(v[3]),
                gradient: d(v[4]),
                hessian: d(v[5]),
                jacobian: d(v[6]),
            });
        }
        Ok(out)
    }
}

/// Runs the loop until the path end, the time limit or a failure. The
/// observer sees every controller step, e.g. for independent checks.
pub fn run_closed_loop(setup: &SimSetup, mut observer: impl FnMut(&ControllerStep)) -> Result<RunLog, Error> {
    setup.ocp.validate()?;
    setup.corridor.validate()?;
    setup.params.validate()?;
    let dt = setup.ocp.dt_s;
    let mut plant = Plant::new(setup.initial_state, &setup.params, &setup.plant, dt, setup.initial_control)?;
    let mut controller = NmpcController::new(setup.ocp.clone(), setup.params.clone(), setup.initial_control);
    let mut obstacles = setup.obstacles.clone();
    for o in &obstacles {
        o.validate()?;
    }
    let mut boxes = no_go_boxes(&setup.path, &obstacles, &setup.corridor)?;
    let mut records = Vec::new();
    let mut timings = Vec::new();
    let max_steps = (setup.max_time_s / dt).round() as usize;
    let lane = setup.path.lane_half_width;
    let mut hint = None;
    let mut outcome = Outcome::TimeLimit;

    for step in 0..max_steps {
        let time = step as f64 * dt;
        let truth = plant.state;
        let truth_proj = setup.path.project(truth.x, truth.y, hint);
        hint = Some(truth_proj.index);
        if truth_proj.s >= setup.path.s_end() - setup.stop_distance_m {
            outcome = Outcome::Completed;
            break;
        }
        if truth_proj.d.abs() > DIVERGENCE_LIMIT_M {
            outcome = Outcome::Diverged { time, error: truth_proj.d };
            break;
        }
        let footprint = Rect::footprint(&truth, setup.ego_length_m, setup.ego_width_m);
        if !gate_obstacles(&mut obstacles, &footprint, time).is_empty() {
            boxes = no_go_boxes(&setup.path, &obstacles, &setup.corridor)?;
        }
        let measured = plant.measure();
        let result = controller.step(&measured, &setup.path, &boxes);
        let cs = match result {
            Ok(cs) => cs,
            Err(e) => {
                outcome = Outcome::Failed(e.to_string());
                break;
            }
        };
        observer(&cs);
        let cold = if setup.compare_cold_start { Some(solve_cold(&cs.nlp)?.sqp_iterations) } else { None };
        let (right, left, offset) = lateral_bounds(truth_proj.s, &boxes, lane).unwrap_or((-lane, lane, 0.0));
        let d = truth_proj.d;
        let clearance = obstacles
            .iter()
            .map(|o| rect_distance(&footprint, &o.rect()))
            .fold(f64::INFINITY, f64::min);
        let r0 = cs.corridor.reference.x_ref[0];
        let stats = &cs.solution.stats;
        let applied = plant.step(cs.command);
        records.push(StepRecord {
            step,
            time,
            s: truth_proj.s,
            state: truth,
            measured,
            reference: [r0[0], r0[3], r0[4], r0[5]],
            lateral_error: d,
            ref_offset: offset,
            corridor_right: right,
            corridor_left: left,
            corridor_violation: (d - left).max(right - d).max(0.0),
            command: cs.command,
            applied,
            sqp_iterations: stats.sqp_iterations,
            qp_iterations: stats.qp_iterations_total,
            primal_infeasibility: stats.primal_infeasibility,
            dual_infeasibility: stats.dual_infeasibility,
            status: stats.status,
            objective: stats.objective,
            cold_sqp_iterations: cold,
            active_obstacles: obstacles.iter().filter(|o| o.active).count(),
            clearance,
        });
        timings.push(stats.timings);
    }
    Ok(RunLog { dt, records, timings, outcome })
}

/// Heading error wrapped to `(−π, π]`.
pub fn heading_error(r: &StepRecord) -> f64 {
    wrap_angle(r.state.psi - r.reference[3])
}
