//! Multiple-shooting transcription of the trajectory-tracking problem.
//!
//! Decision vector, stage-major: `[x₀, u₀, x₁, u₁, …, x_{N−1}, u_{N−1}, x_N]`
//! with 6 states and 2 controls per stage, `8N + 6` entries in total.
//!
//! Constraint rows:
//!
//! | rows              | meaning                                   |
//! |-------------------|-------------------------------------------|
//! | `0..6`            | `x₀ − x_now = 0`                          |
//! | `6 + 6k + i`      | `x_{k+1} − f_d(x_k, u_k) = 0`             |
//! | `6 + 6N + 2(k−1)` | left corridor edge at stage `k = 1..N`    |
//! | next row          | right corridor edge at stage `k`          |
//!
//! The cost is `Σ_{k<N} ‖x_k − x_ref,k‖²_Q + ‖u_k‖²_R + ‖u_k − u_{k−1}‖²_S +
//! ‖x_N − x_ref,N‖²_P` with `u_{−1}` the last applied command.

use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffScalar, Dual, Real};
use crate::planner::Corridor;
use crate::sparse::{Pattern, SymmetricPattern};
use crate::sqp::{Nlp, WarmStart};
use crate::qp::{ActiveSet, BoundStatus};
use crate::vehicle::{rk4, ControlInput, VehicleParams, VehicleState, NU, NX};
use crate::Error;

const NZ: usize = NX + NU;
/// Nominal state magnitudes used when problem scaling is enabled.
const STATE_SCALE: [f64; NX] = [10.0, 1.0, 1.0, 10.0, 10.0, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: usize,
    pub dt_s: f64,
    pub rk4_substeps: usize,
    /// Diagonal of the state weight, order `(vx, vy, ω, X, Y, ψ)`.
    pub q: [f64; NX],
    /// Diagonal of the input weight, order `(δ, tr)`.
    pub r: [f64; NU],
    /// Diagonal of the input-rate weight.
    pub s: [f64; NU],
    /// Diagonal of the terminal weight.
    pub p: [f64; NX],
    pub vx_bounds_mps: [f64; 2],
    pub vy_bounds_mps: [f64; 2],
    pub omega_bounds_radps: [f64; 2],
    pub delta_bounds_rad: [f64; 2],
    pub tr_bounds: [f64; 2],
    /// Half-widths of a box on the terminal tracking error; off by default.
    pub terminal_error_box: Option<[f64; NX]>,
    /// Gradient-based objective scaling and nominal defect-row scaling.
    pub scale_problem: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        let q = [1.0, 1.0, 1.0, 5.0, 5.0, 20.0];
        Self {
            horizon: 30,
            dt_s: 0.04,
            rk4_substeps: 4,
            q,
            r: [1.0, 0.01],
            s: [200.0, 10.0],
            p: q.map(|v| 10.0 * v),
            vx_bounds_mps: [0.0, 40.0],
            vy_bounds_mps: [-5.0, 5.0],
            omega_bounds_radps: [-1.5, 1.5],
            delta_bounds_rad: [-0.5, 0.5],
            tr_bounds: [-1.0, 1.0],
            terminal_error_box: None,
            scale_problem: false,
        }
    }
}

fn check_range(field: &str, b: [f64; 2]) -> Result<(), Error> {
    if b[0].is_nan() || b[1].is_nan() || b[0] > b[1] {
        Err(Error::range(field, format!("lower bound {} exceeds upper bound {}", b[0], b[1])))
    } else {
        Ok(())
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.horizon == 0 {
            return Err(Error::range("horizon", "must be at least 1"));
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::range("dt_s", "must be positive"));
        }
        if self.rk4_substeps == 0 {
            return Err(Error::range("rk4_substeps", "must be at least 1"));
        }
        for (field, w) in [("q", &self.q[..]), ("s", &self.s[..]), ("p", &self.p[..])] {
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::range(field, "weights must be finite and non-negative"));
            }
        }
        if self.r.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::range("r", "input weight must be positive definite"));
        }
        let min_q = self.q.iter().copied().fold(f64::INFINITY, f64::min);
        let min_p = self.p.iter().copied().fold(f64::INFINITY, f64::min);
        if min_p < min_q {
            return Err(Error::range("p", "smallest terminal weight must be at least the smallest state weight"));
        }
        check_range("vx_bounds_mps", self.vx_bounds_mps)?;
        check_range("vy_bounds_mps", self.vy_bounds_mps)?;
        check_range("omega_bounds_radps", self.omega_bounds_radps)?;
        check_range("delta_bounds_rad", self.delta_bounds_rad)?;
        check_range("tr_bounds", self.tr_bounds)?;
        if self.tr_bounds[0] < -1.0 || self.tr_bounds[1] > 1.0 {
            return Err(Error::range("tr_bounds", "throttle ratio is limited to [-1, 1]"));
        }
        if let Some(b) = self.terminal_error_box {
            if b.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::range("terminal_error_box", "half-widths must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Index arithmetic of the stage-major decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
}

impl Layout {
    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn num_vars(&self) -> usize {
        NZ * self.horizon + NX
    }

    pub fn num_constraints(&self) -> usize {
        NX + NX * self.horizon + 2 * self.horizon
    }

    pub fn state(&self, k: usize) -> usize {
        NZ * k
    }

    pub fn control(&self, k: usize) -> usize {
        NZ * k + NX
    }

    pub fn defect_row(&self, k: usize) -> usize {
        NX + NX * k
    }

    /// Left-edge row of stage `k ≥ 1`; the right edge follows it.
    pub fn corridor_row(&self, k: usize) -> usize {
        NX + NX * self.horizon + 2 * (k - 1)
    }

    pub fn states(&self, z: &[f64]) -> Vec<VehicleState> {
        (0..=self.horizon).map(|k| VehicleState::from_array(array(&z[self.state(k)..]))).collect()
    }

    pub fn controls(&self, z: &[f64]) -> Vec<ControlInput> {
        (0..self.horizon).map(|k| ControlInput::from_array(array(&z[self.control(k)..]))).collect()
    }
}

fn array<const L: usize>(s: &[f64]) -> [f64; L] {
    std::array::from_fn(|i| s[i])
}

/// Per-stage tracking targets `(v_ref, 0, 0, X_ref, Y_ref, ψ_ref)` for `k = 0..N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceWindow {
    pub x_ref: Vec<[f64; NX]>,
    /// Arc length of each point along the global path.
    pub s: Vec<f64>,
}

impl ReferenceWindow {
    /// From `(v_ref, X_ref, Y_ref, ψ_ref, s)` samples; lateral velocity and yaw
    /// rate targets are zero.
    pub fn new(points: &[(f64, f64, f64, f64, f64)]) -> Self {
        Self {
            x_ref: points.iter().map(|&(v, x, y, psi, _)| [v, 0.0, 0.0, x, y, psi]).collect(),
            s: points.iter().map(|p| p.4).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x_ref.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_ref.is_empty()
    }
}

fn quad_form(w: &[f64], e: &[f64]) -> f64 {
    w.iter().zip(e).map(|(wi, ei)| wi * ei * ei).sum()
}

/// `‖x − x_ref‖²_Q + ‖u‖²_R + ‖u − u_prev‖²_S`.
pub fn stage_cost(x: &[f64; NX], u: &[f64; NU], u_prev: &[f64; NU], x_ref: &[f64; NX], cfg: &OcpConfig) -> f64 {
    let e: Vec<f64> = x.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
    quad_form(&cfg.q, &e) + quad_form(&cfg.r, u) + quad_form(&cfg.s, &du)
}

/// `‖x_N − x_ref,N‖²_P`.
pub fn terminal_cost(x_n: &[f64; NX], x_ref: &[f64; NX], cfg: &OcpConfig) -> f64 {
    let e: Vec<f64> = x_n.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    quad_form(&cfg.p, &e)
}

/// The tracking OCP at one sampling instant.
#[derive(Clone, Debug)]
pub struct OcpNlp {
    pub config: OcpConfig,
    pub params: VehicleParams,
    pub x_now: VehicleState,
    pub window: ReferenceWindow,
    pub corridor: Corridor,
    pub u_last: ControlInput,
    pub layout: Layout,
    obj_scale: f64,
    row_scale: [f64; NX],
}

/// Builds the OCP for the current measurement, reference and corridor.
pub fn build_nlp(
    x_now: &VehicleState,
    window: &ReferenceWindow,
    corridor: &Corridor,
    u_last: &ControlInput,
    config: &OcpConfig,
    params: &VehicleParams,
) -> Result<OcpNlp, Error> {
    config.validate()?;
    let n = config.horizon;
    if window.len() != n + 1 {
        return Err(Error::Dimension(format!("reference window has {} points, expected {}", window.len(), n + 1)));
    }
    if corridor.stages.len() != n {
        return Err(Error::Dimension(format!("corridor has {} stages, expected {n}", corridor.stages.len())));
    }
    let row_scale = if config.scale_problem { STATE_SCALE.map(|v| 1.0 / v) } else { [1.0; NX] };
    let mut nlp = OcpNlp {
        config: config.clone(),
        params: params.clone(),
        x_now: *x_now,
        window: window.clone(),
        corridor: corridor.clone(),
        u_last: *u_last,
        layout: Layout::new(n),
        obj_scale: 1.0,
        row_scale,
    };
    if config.scale_problem {
        // gradient-based: keep the largest objective gradient entry near 100
        let z = nlp.initial_guess();
        let mut g = vec![0.0; nlp.num_vars()];
        nlp.gradient(&z, &mut g);
        let gmax = g.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        nlp.obj_scale = if gmax > 100.0 { 100.0 / gmax } else { 1.0 };
    }
    Ok(nlp)
}

impl OcpNlp {
    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    /// Objective without scaling.
    pub fn cost(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let mut f = 0.0;
        let mut u_prev = self.u_last.to_array();
        for k in 0..l.horizon {
            let x: [f64; NX] = array(&z[l.state(k)..]);
            let u: [f64; NU] = array(&z[l.control(k)..]);
            f += stage_cost(&x, &u, &u_prev, &self.window.x_ref[k], &self.config);
            u_prev = u;
        }
        let x_n: [f64; NX] = array(&z[l.state(l.horizon)..]);
        f + terminal_cost(&x_n, &self.window.x_ref[l.horizon], &self.config)
    }

    /// Cold-start guess: the measured state held over the horizon, last command repeated.
    pub fn initial_guess(&self) -> Vec<f64> {
        let l = self.layout;
        let mut z = vec![0.0; l.num_vars()];
        let x = self.x_now.to_array();
        let u = self.u_last.to_array();
        for k in 0..=l.horizon {
            z[l.state(k)..l.state(k) + NX].copy_from_slice(&x);
            if k < l.horizon {
                z[l.control(k)..l.control(k) + NU].copy_from_slice(&u);
            }
        }
        let (lb, ub) = self.var_bounds();
        for (v, (lo, hi)) in z.iter_mut().zip(lb.iter().zip(&ub)) {
            *v = v.clamp(*lo, *hi);
        }
        z
    }

    /// Largest defect residual `‖x_{k+1} − f_d(x_k, u_k)‖∞`, unscaled.
    pub fn max_defect(&self, z: &[f64]) -> f64 {
        let l = self.layout;
        let mut worst = 0.0_f64;
        for k in 0..l.horizon {
            let next = self.discrete(&array::<NX>(&z[l.state(k)..]), &array::<NU>(&z[l.control(k)..]));
            for i in 0..NX {
                worst = worst.max((z[l.state(k + 1) + i] - next[i]).abs());
            }
        }
        worst
    }

    fn discrete<S: Real>(&self, x: &[S; NX], u: &[S; NU]) -> [S; NX] {
        rk4(x, u, &self.params, self.config.dt_s, self.config.rk4_substeps)
    }

    fn stage_vars<S: Real>(z: &[f64], base: usize, seed: impl Fn(f64, usize) -> S) -> ([S; NX], [S; NU]) {
        let x = std::array::from_fn(|i| seed(z[base + i], i));
        let u = std::array::from_fn(|i| seed(z[base + NX + i], NX + i));
        (x, u)
    }

    fn state_bounds(&self) -> [[f64; 2]; 3] {
        let c = &self.config;
        [c.vx_bounds_mps, c.vy_bounds_mps, c.omega_bounds_radps]
    }
}

impl Nlp for OcpNlp {
    fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    fn num_constraints(&self) -> usize {
        self.layout.num_constraints()
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let nv = l.num_vars();
        let mut lb = vec![f64::NEG_INFINITY; nv];
        let mut ub = vec![f64::INFINITY; nv];
        let sb = self.state_bounds();
        for k in 1..=l.horizon {
            for (i, b) in sb.iter().enumerate() {
                lb[l.state(k) + i] = b[0];
                ub[l.state(k) + i] = b[1];
            }
        }
        if let Some(half) = self.config.terminal_error_box {
            let r = &self.window.x_ref[l.horizon];
            for i in 0..NX {
                let j = l.state(l.horizon) + i;
                lb[j] = lb[j].max(r[i] - half[i]);
                ub[j] = ub[j].min(r[i] + half[i]);
            }
        }
        let ub_in = [self.config.delta_bounds_rad, self.config.tr_bounds];
        for k in 0..l.horizon {
            for (i, b) in ub_in.iter().enumerate() {
                lb[l.control(k) + i] = b[0];
                ub[l.control(k) + i] = b[1];
            }
        }
        (lb, ub)
    }

    fn constraint_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout;
        let m = l.num_constraints();
        let mut lb = vec![0.0; m];
        let mut ub = vec![0.0; m];
        for k in 1..=l.horizon {
            let (lo, hi) = self.corridor.stages[k - 1].normal_bounds();
            let r = l.corridor_row(k);
            lb[r] = f64::NEG_INFINITY;
            ub[r] = hi;
            lb[r + 1] = lo;
            ub[r + 1] = f64::INFINITY;
        }
        (lb, ub)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        self.obj_scale * self.cost(z)
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let l = self.layout;
        let c = &self.config;
        grad.fill(0.0);
        for k in 0..=l.horizon {
            let w = if k == l.horizon { &c.p } else { &c.q };
            let r = &self.window.x_ref[k];
            for i in 0..NX {
                grad[l.state(k) + i] = 2.0 * w[i] * (z[l.state(k) + i] - r[i]);
            }
        }
        let last = self.u_last.to_array();
        for k in 0..l.horizon {
            for i in 0..NU {
                let u = z[l.control(k) + i];
                let prev = if k == 0 { last[i] } else { z[l.control(k - 1) + i] };
                let mut gi = 2.0 * c.r[i] * u + 2.0 * c.s[i] * (u - prev);
                if k + 1 < l.horizon {
                    gi -= 2.0 * c.s[i] * (z[l.control(k + 1) + i] - u);
                }
                grad[l.control(k) + i] = gi;
            }
        }
        for g in grad.iter_mut() {
            *g *= self.obj_scale;
        }
    }

    fn constraints(&self, z: &[f64], g: &mut [f64]) {
        let l = self.layout;
        let x_now = self.x_now.to_array();
        for i in 0..NX {
            g[i] = z[i] - x_now[i];
        }
        for k in 0..l.horizon {
            let next = self.discrete(&array::<NX>(&z[l.state(k)..]), &array::<NU>(&z[l.control(k)..]));
            let row = l.defect_row(k);
            for i in 0..NX {
                g[row + i] = self.row_scale[i] * (z[l.state(k + 1) + i] - next[i]);
            }
        }
        for k in 1..=l.horizon {
            let nrm = self.corridor.stages[k - 1].normal;
            let v = nrm[0] * z[l.state(k) + 3] + nrm[1] * z[l.state(k) + 4];
            let r = l.corridor_row(k);
            g[r] = v;
            g[r + 1] = v;
        }
    }

    fn jacobian_structure(&self) -> Pattern {
        let l = self.layout;
        let mut e = Vec::with_capacity(NX + l.horizon * NX * (NZ + 1) + 4 * l.horizon);
        for i in 0..NX {
            e.push((i, i));
        }
        for k in 0..l.horizon {
            let row = l.defect_row(k);
            for i in 0..NX {
                for j in 0..NZ {
                    e.push((row + i, l.state(k) + j));
                }
                e.push((row + i, l.state(k + 1) + i));
            }
        }
        for k in 1..=l.horizon {
            let r = l.corridor_row(k);
            for rr in [r, r + 1] {
                e.push((rr, l.state(k) + 3));
                e.push((rr, l.state(k) + 4));
            }
        }
        Pattern::new(l.num_constraints(), l.num_vars(), e)
    }

    fn jacobian_values(&self, z: &[f64], values: &mut [f64]) {
        let l = self.layout;
        let mut p = 0;
        for _ in 0..NX {
            values[p] = 1.0;
            p += 1;
        }
        for k in 0..l.horizon {
            let (x, u) = Self::stage_vars::<Dual<NZ>>(z, l.state(k), Dual::variable);
            let next = self.discrete(&x, &u);
            for i in 0..NX {
                let sc = self.row_scale[i];
                for j in 0..NZ {
                    values[p] = -sc * next[i].grad[j];
                    p += 1;
                }
                values[p] = sc;
                p += 1;
            }
        }
        for k in 1..=l.horizon {
            let nrm = self.corridor.stages[k - 1].normal;
            for _ in 0..2 {
                values[p] = nrm[0];
                values[p + 1] = nrm[1];
                p += 2;
            }
        }
    }

    fn hessian_structure(&self) -> SymmetricPattern {
        let l = self.layout;
        let mut h = SymmetricPattern::new(l.num_vars());
        // dense lower block over (x_k, u_k) per stage, then the terminal diagonal
        for k in 0..l.horizon {
            let b = l.state(k);
            for i in 0..NZ {
                for j in 0..=i {
                    h.insert(b + i, b + j);
                }
            }
        }
        for i in 0..NX {
            let j = l.state(l.horizon) + i;
            h.insert(j, j);
        }
        // input-rate coupling u_k ↔ u_{k−1}
        for k in 1..l.horizon {
            for i in 0..NU {
                h.insert(l.control(k) + i, l.control(k - 1) + i);
            }
        }
        h
    }

    fn hessian_values(&self, z: &[f64], obj_factor: f64, lambda: &[f64], values: &mut [f64]) {
        let l = self.layout;
        let c = &self.config;
        let sigma = obj_factor * self.obj_scale;
        let mut p = 0;
        for k in 0..l.horizon {
            let (x, u) = Self::stage_vars::<DiffScalar<NZ>>(z, l.state(k), DiffScalar::variable);
            let next = self.discrete(&x, &u);
            let row = l.defect_row(k);
            let mut acc = DiffScalar::<NZ>::constant(0.0);
            for i in 0..NX {
                acc = acc + next[i] * (-lambda[row + i] * self.row_scale[i]);
            }
            for i in 0..NZ {
                for j in 0..=i {
                    let mut v = acc.second(i, j);
                    if i == j {
                        v += sigma
                            * if i < NX {
                                2.0 * c.q[i]
                            } else {
                                let ui = i - NX;
                                let rate = if k + 1 < l.horizon { 4.0 } else { 2.0 };
                                2.0 * c.r[ui] + rate * c.s[ui]
                            };
                    }
                    values[p] = v;
                    p += 1;
                }
            }
        }
        for i in 0..NX {
            values[p] = sigma * 2.0 * c.p[i];
            p += 1;
        }
        for _k in 1..l.horizon {
            for i in 0..NU {
                values[p] = -sigma * 2.0 * c.s[i];
                p += 1;
            }
        }
    }
}

/// Shifts a horizon solution one stage forward for the next sample.
///
/// Stage `k` takes stage `k + 1`, the last stage is duplicated, `x₀` is set to
/// the measurement, shifted states are clamped into the state bounds and
/// positions projected into the new corridor.
pub fn warm_start_shift(previous: &[f64], x_now: &VehicleState, corridor: &Corridor, config: &OcpConfig) -> Vec<f64> {
    let l = Layout::new(config.horizon);
    let n = l.horizon;
    let mut z = previous.to_vec();
    for k in 0..n {
        let (src, dst) = (l.state(k + 1), l.state(k));
        let width = if k + 1 < n { NZ } else { NX };
        z.copy_within(src..src + width, dst);
    }
    z[..NX].copy_from_slice(&x_now.to_array());
    let sb = [config.vx_bounds_mps, config.vy_bounds_mps, config.omega_bounds_radps];
    for k in 1..=n {
        let b = l.state(k);
        for (i, r) in sb.iter().enumerate() {
            z[b + i] = z[b + i].clamp(r[0], r[1]);
        }
        let p = corridor.stages[k - 1].project([z[b + 3], z[b + 4]]);
        z[b + 3] = p[0];
        z[b + 4] = p[1];
    }
    for k in 0..n {
        let b = l.control(k);
        z[b] = z[b].clamp(config.delta_bounds_rad[0], config.delta_bounds_rad[1]);
        z[b + 1] = z[b + 1].clamp(config.tr_bounds[0], config.tr_bounds[1]);
    }
    z
}

/// Shifts multipliers and working set one stage, duplicating the last stage.
pub fn shift_warm_start(warm: &WarmStart, horizon: usize) -> WarmStart {
    let l = Layout::new(horizon);
    let shift_vars = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        shift_var_blocks(&mut out, &l);
        out
    };
    let shift_rows = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        shift_row_blocks(&mut out, &l);
        out
    };
    let active_set = warm.active_set.as_ref().map(|a| {
        let mut bounds = a.bounds.clone();
        shift_var_blocks(&mut bounds, &l);
        let mut constraints = a.constraints.clone();
        shift_row_blocks(&mut constraints, &l);
        for b in bounds.iter_mut().take(NX) {
            *b = BoundStatus::Inactive;
        }
        ActiveSet { constraints, bounds }
    });
    WarmStart {
        lambda: if warm.lambda.len() == l.num_constraints() { shift_rows(&warm.lambda) } else { Vec::new() },
        bound_duals: if warm.bound_duals.len() == l.num_vars() { shift_vars(&warm.bound_duals) } else { Vec::new() },
        active_set: active_set.filter(|a| a.bounds.len() == l.num_vars() && a.constraints.len() == l.num_constraints()),
    }
}

fn shift_var_blocks<T: Copy>(v: &mut [T], l: &Layout) {
    if v.len() != l.num_vars() {
        return;
    }
    let n = l.horizon;
    for k in 0..n {
        let width = if k + 1 < n { NZ } else { NX };
        v.copy_within(l.state(k + 1)..l.state(k + 1) + width, l.state(k));
    }
}

fn shift_row_blocks<T: Copy>(v: &mut [T], l: &Layout) {
    if v.len() != l.num_constraints() {
        return;
    }
    let n = l.horizon;
    for k in 0..n.saturating_sub(1) {
        v.copy_within(l.defect_row(k + 1)..l.defect_row(k + 1) + NX, l.defect_row(k));
    }
    for k in 1..n {
        v.copy_within(l.corridor_row(k + 1)..l.corridor_row(k + 1) + 2, l.corridor_row(k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqp::SqpSolver;
    use crate::sqp::SolveStatus;

    fn straight_setup(n: usize, v: f64) -> (OcpConfig, ReferenceWindow, Corridor) {
        let cfg = OcpConfig { horizon: n, ..OcpConfig::default() };
        let pts: Vec<_> = (0..=n).map(|k| {
            let s = v * cfg.dt_s * k as f64;
            (v, s, 0.0, 0.0, s)
        }).collect();
        let window = ReferenceWindow::new(&pts);
        let corridor = Corridor::unobstructed(&window, 2.0);
        (cfg, window, corridor)
    }

    #[test]
    fn single_stage_counts() {
        let (cfg, w, c) = straight_setup(1, 10.0);
        let nlp = build_nlp(&VehicleState::default(), &w, &c, &ControlInput::default(), &cfg, &VehicleParams::default())
            .unwrap();
        assert_eq!(nlp.num_vars(), 14);
        assert_eq!(nlp.num_constraints(), 6 + 6 + 2);
    }

    #[test]
    fn zero_cost_on_reference() {
        let cfg = OcpConfig::default();
        let x = [1.0, 0.0, 0.0, 2.0, 3.0, 0.5];
        assert_eq!(stage_cost(&x, &[0.0; 2], &[0.0; 2], &x, &cfg), 0.0);
        assert_eq!(terminal_cost(&x, &x, &cfg), 0.0);
    }

    #[test]
    fn unit_weight_quadratic_form() {
        let cfg = OcpConfig { q: [1.0; 6], ..OcpConfig::default() };
        let x = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(stage_cost(&x, &[0.0; 2], &[0.0; 2], &[0.0; 6], &cfg), 1.0);
    }

    #[test]
    fn doubled_terminal_weight_doubles_cost() {
        let base = OcpConfig::default();
        let doubled = OcpConfig { p: base.q.map(|v| 2.0 * v), ..base.clone() };
        let q_form = OcpConfig { p: base.q, ..base.clone() };
        let e = [0.3, -0.2, 0.1, 1.5, -0.7, 0.05];
        let z = [0.0; 6];
        assert_eq!(terminal_cost(&e, &z, &doubled), 2.0 * terminal_cost(&e, &z, &q_form));
    }

    #[test]
    fn rollout_has_zero_defects() {
        let n = 5;
        let (cfg, w, c) = straight_setup(n, 10.0);
        let p = VehicleParams::default();
        let x0 = VehicleState::new(10.0, 0.2, 0.05, 0.0, 0.1, 0.02);
        let nlp = build_nlp(&x0, &w, &c, &ControlInput::default(), &cfg, &p).unwrap();
        let l = nlp.layout;
        let mut z = vec![0.0; l.num_vars()];
        let mut x = x0.to_array();
        for k in 0..n {
            let u = [0.01 * k as f64, 0.1];
            z[l.state(k)..l.state(k) + 6].copy_from_slice(&x);
            z[l.control(k)..l.control(k) + 2].copy_from_slice(&u);
            x = rk4(&x, &u, &p, cfg.dt_s, cfg.rk4_substeps);
        }
        z[l.state(n)..].copy_from_slice(&x);
        let mut g = vec![0.0; l.num_constraints()];
        nlp.constraints(&z, &mut g);
        for v in &g[..6 + 6 * n] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let bad = OcpConfig { r: [0.0, 1.0], ..OcpConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Range { field, .. }) if field == "r"));
        let bad = OcpConfig { p: [0.1; 6], ..OcpConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Range { field, .. }) if field == "p"));
        let bad = OcpConfig { horizon: 0, ..OcpConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cruise_solution_balances_forces() {
        let n = 10;
        let v = 15.0;
        let (cfg, w, c) = straight_setup(n, v);
        let p = VehicleParams::default();
        let x0 = VehicleState::new(v, 0.0, 0.0, 0.0, 0.0, 0.0);
        let tr_eq = p.equilibrium_throttle(v);
        let nlp = build_nlp(&x0, &w, &c, &ControlInput::new(0.0, tr_eq), &cfg, &p).unwrap();
        let sol = SqpSolver::default().solve(&nlp, &nlp.initial_guess(), None).unwrap();
        assert_eq!(sol.stats.status, SolveStatus::Converged);
        for u in nlp.layout.controls(&sol.x) {
            assert!(u.delta.abs() < 1e-6);
            // the small throttle weight trades a sliver of speed for effort
            assert!((u.tr - tr_eq).abs() < 0.1 * tr_eq, "tr {} vs {}", u.tr, tr_eq);
        }
        assert!(nlp.max_defect(&sol.x) < 1e-6);
    }
}
