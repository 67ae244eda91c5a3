//! Single-track (bicycle) vehicle model.
//!
//! Six states `(vx, vy, omega, X, Y, psi)`: body-frame velocities and yaw
//! rate, global position and heading. Two inputs: front steering angle and a
//! normalized throttle/brake command. Lateral forces come from a linear tire
//! model; longitudinal drive force is split evenly between the axles.
//!
//! Every function here is generic over [`Real`], so the same code serves the
//! plant simulation (`f64`) and the optimizer's exact derivatives.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::Error;

pub const NX: usize = 6;
pub const NU: usize = 2;

/// Width of the `tanh` sign surrogate applied to the driving resistance (m/s).
pub const RESISTANCE_SIGN_WIDTH: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl VehicleState {
    pub fn new(vx: f64, vy: f64, omega: f64, x: f64, y: f64, psi: f64) -> Self {
        Self { vx, vy, omega, x, y, psi }
    }

    pub fn to_array(self) -> [f64; NX] {
        [self.vx, self.vy, self.omega, self.x, self.y, self.psi]
    }

    pub fn from_array(a: [f64; NX]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Front steering angle (rad).
    pub delta: f64,
    /// Normalized throttle (> 0) or brake (< 0).
    pub tr: f64,
}

impl ControlInput {
    pub fn new(delta: f64, tr: f64) -> Self {
        Self { delta, tr }
    }

    pub fn to_array(self) -> [f64; NU] {
        [self.delta, self.tr]
    }

    pub fn from_array(a: [f64; NU]) -> Self {
        Self::new(a[0], a[1])
    }

    /// Clamps into `[delta_min, delta_max] × [-1, 1]`.
    pub fn saturate(self, delta_bounds: (f64, f64)) -> Self {
        Self {
            delta: self.delta.clamp(delta_bounds.0, delta_bounds.1),
            tr: self.tr.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg m²).
    pub iz: f64,
    /// CoG to front axle (m).
    pub lf: f64,
    /// CoG to rear axle (m).
    pub lr: f64,
    /// Front cornering stiffness (N/rad).
    pub kf: f64,
    /// Rear cornering stiffness (N/rad).
    pub kr: f64,
    /// Maximum drive torque (N m).
    pub t_max: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Zeroth-order resistance (N).
    pub cr0: f64,
    /// Second-order resistance (kg/m).
    pub cr2: f64,
    /// Floor on `vx` in the slip-angle denominators (m/s).
    pub vx_eps: f64,
}

impl Default for VehicleParams {
    /// Compact-car values; not identified from any particular vehicle.
    fn default() -> Self {
        Self {
            mass: 1500.0,
            iz: 2500.0,
            lf: 1.2,
            lr: 1.4,
            kf: 90_000.0,
            kr: 100_000.0,
            t_max: 1800.0,
            wheel_radius: 0.31,
            cr0: 150.0,
            cr2: 0.4,
            vx_eps: 0.5,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("mass", self.mass),
            ("iz", self.iz),
            ("lf", self.lf),
            ("lr", self.lr),
            ("t_max", self.t_max),
            ("wheel_radius", self.wheel_radius),
            ("vx_eps", self.vx_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::range(name, format!("must be strictly positive, got {v}")));
            }
        }
        for (name, v) in [("kf", self.kf), ("kr", self.kr), ("cr0", self.cr0), ("cr2", self.cr2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::range(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Throttle that balances the driving resistance at steady speed `vx`.
    pub fn equilibrium_throttle(&self, vx: f64) -> f64 {
        resistance(vx, self) * self.wheel_radius / self.t_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireForces<S> {
    pub fxf: S,
    pub fxr: S,
    pub fyf: S,
    pub fyr: S,
    pub fres: S,
}

/// Front and rear slip angles.
pub fn slip_angles<S: Real>(vx: S, vy: S, omega: S, delta: S, p: &VehicleParams) -> (S, S) {
    let denom = if vx.value() < p.vx_eps { S::constant(p.vx_eps) } else { vx };
    let alpha_f = delta - ((omega * p.lf + vy) / denom).atan();
    let alpha_r = ((omega * p.lr - vy) / denom).atan();
    (alpha_f, alpha_r)
}

/// Rolling resistance plus drag, signed with a smooth surrogate of `sign(vx)`.
pub fn resistance<S: Real>(vx: S, p: &VehicleParams) -> S {
    (vx / RESISTANCE_SIGN_WIDTH).tanh() * (vx * vx * p.cr2 + p.cr0)
}

pub fn tire_forces<S: Real>(x: &[S; NX], u: &[S; NU], p: &VehicleParams) -> TireForces<S> {
    let (alpha_f, alpha_r) = slip_angles(x[0], x[1], x[2], u[0], p);
    let drive = u[1] * (0.5 * p.t_max / p.wheel_radius);
    TireForces {
        fxf: drive,
        fxr: drive,
        fyf: alpha_f * p.kf,
        fyr: alpha_r * p.kr,
        fres: resistance(x[0], p),
    }
}

/// Time derivative of the state.
pub fn dynamics<S: Real>(x: &[S; NX], u: &[S; NU], p: &VehicleParams) -> [S; NX] {
    let [vx, vy, omega, _, _, psi] = *x;
    let delta = u[0];
    let f = tire_forces(x, u, p);
    let (sd, cd) = (delta.sin(), delta.cos());
    let (sp, cp) = (psi.sin(), psi.cos());
    let inv_m = 1.0 / p.mass;
    let vx_dot = (f.fxf * cd + f.fxr - f.fyf * sd - f.fres + omega * vy * p.mass) * inv_m;
    let vy_dot = (f.fxf * sd + f.fyr + f.fyf * cd - omega * vx * p.mass) * inv_m;
    let omega_dot = ((f.fyf * cd + f.fxf * sd) * p.lf - f.fyr * p.lr) / p.iz;
    let x_dot = vx * cp - vy * sp;
    let y_dot = vx * sp + vy * cp;
    [vx_dot, vy_dot, omega_dot, x_dot, y_dot, omega]
}

/// Classical RK4 over `dt` in `substeps` equal steps, inputs held constant.
pub fn rk4<S: Real>(x: &[S; NX], u: &[S; NU], p: &VehicleParams, dt: f64, substeps: usize) -> [S; NX] {
    let h = dt / substeps as f64;
    let mut s = *x;
    for _ in 0..substeps {
        let k1 = dynamics(&s, u, p);
        let k2 = dynamics(&axpy(&s, &k1, 0.5 * h), u, p);
        let k3 = dynamics(&axpy(&s, &k2, 0.5 * h), u, p);
        let k4 = dynamics(&axpy(&s, &k3, h), u, p);
        for i in 0..NX {
            s[i] = s[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
    s
}

#[inline]
fn axpy<S: Real>(x: &[S; NX], k: &[S; NX], a: f64) -> [S; NX] {
    let mut out = *x;
    for i in 0..NX {
        out[i] = x[i] + k[i] * a;
    }
    out
}

pub fn state_derivative(state: &VehicleState, input: &ControlInput, p: &VehicleParams) -> VehicleState {
    VehicleState::from_array(dynamics(&state.to_array(), &input.to_array(), p))
}

pub fn rk4_step(
    state: &VehicleState,
    input: &ControlInput,
    p: &VehicleParams,
    dt: f64,
    substeps: usize,
) -> VehicleState {
    assert!(dt > 0.0 && substeps >= 1, "rk4_step needs dt > 0 and at least one substep");
    VehicleState::from_array(rk4(&state.to_array(), &input.to_array(), p, dt, substeps))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn straight_line_has_no_slip() {
        assert_eq!(slip_angles(10.0, 0.0, 0.0, 0.0, &params()), (0.0, 0.0));
        let (af, ar) = slip_angles(10.0, 0.0, 0.0, 0.1, &params());
        assert_eq!((af, ar), (0.1, 0.0));
    }

    #[test]
    fn slip_angles_against_direct_atan() {
        let p = VehicleParams { lf: 1.2, lr: 1.4, ..params() };
        let (af, ar) = slip_angles(15.0, 0.4, 0.2, 0.05, &p);
        let af_ref = 0.05 - ((0.2f64 * 1.2 + 0.4) / 15.0).atan();
        let ar_ref = ((0.2f64 * 1.4 - 0.4) / 15.0).atan();
        assert!((af - af_ref).abs() < 1e-15);
        assert!((ar - ar_ref).abs() < 1e-15);
    }

    #[test]
    fn slip_denominator_is_floored() {
        let p = params();
        let (af, _) = slip_angles(0.0, 0.1, 0.0, 0.0, &p);
        assert!((af + (0.1f64 / p.vx_eps).atan()).abs() < 1e-15);
    }

    #[test]
    fn drive_forces() {
        let p = VehicleParams { t_max: 300.0, wheel_radius: 0.3, ..params() };
        let x = [10.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let f = tire_forces(&x, &[0.0, 0.0], &p);
        assert_eq!((f.fxf, f.fxr, f.fyf, f.fyr), (0.0, 0.0, 0.0, 0.0));
        let f = tire_forces(&x, &[0.0, 1.0], &p);
        assert!((f.fxf - 500.0).abs() < 1e-12 && f.fxf == f.fxr);
        let f = tire_forces(&x, &[0.0, -0.5], &p);
        assert!((f.fxf + 250.0).abs() < 1e-12 && f.fxf == f.fxr);
    }

    #[test]
    fn resistance_values() {
        let p = VehicleParams { cr0: 100.0, cr2: 0.5, ..params() };
        assert_eq!(resistance(20.0, &p), 300.0);
        assert_eq!(resistance(0.0, &p), 0.0);
        assert_eq!(resistance(-5.0, &p), -resistance(5.0, &p));
    }

    #[test]
    fn force_balance_keeps_straight_line() {
        let p = params();
        let vx = 20.0;
        let tr = p.equilibrium_throttle(vx);
        let d = state_derivative(&VehicleState::new(vx, 0.0, 0.0, 3.0, -2.0, 0.0), &ControlInput::new(0.0, tr), &p);
        assert!(d.vx.abs() < 1e-12);
        assert_eq!((d.vy, d.omega, d.x, d.y, d.psi), (0.0, 0.0, vx, 0.0, 0.0));
    }

    #[test]
    fn heading_rotates_kinematics() {
        let p = params();
        let s = VehicleState::new(12.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let d = state_derivative(&s, &ControlInput::new(0.0, 0.0), &p);
        assert!(d.x.abs() < 1e-12);
        assert!((d.y - 12.0).abs() < 1e-12);
    }

    /// Term-by-term restatement of the equations of motion, written without
    /// the shared helpers.
    fn dynamics_oracle(s: [f64; 6], u: [f64; 2], p: &VehicleParams) -> [f64; 6] {
        let (vx, vy, w, _, _, psi) = (s[0], s[1], s[2], s[3], s[4], s[5]);
        let (delta, tr) = (u[0], u[1]);
        let den = vx.max(p.vx_eps);
        let af = -((w * p.lf + vy) / den).atan() + delta;
        let ar = ((w * p.lr - vy) / den).atan();
        let fx = 0.5 * tr * p.t_max / p.wheel_radius;
        let fyf = p.kf * af;
        let fyr = p.kr * ar;
        let fres = (vx / 0.1).tanh() * (p.cr0 + p.cr2 * vx * vx);
        [
            (fx * delta.cos() + fx - fyf * delta.sin() - fres + p.mass * w * vy) / p.mass,
            (fx * delta.sin() + fyr + fyf * delta.cos() - p.mass * w * vx) / p.mass,
            (p.lf * (fyf * delta.cos() + fx * delta.sin()) - p.lr * fyr) / p.iz,
            vx * psi.cos() - vy * psi.sin(),
            vx * psi.sin() + vy * psi.cos(),
            w,
        ]
    }

    proptest! {
        #[test]
        fn dynamics_matches_oracle(
            vx in 1.0..35.0f64, vy in -2.0..2.0f64, w in -1.0..1.0f64,
            psi in -3.2..3.2f64, delta in -0.5..0.5f64, tr in -1.0..1.0f64,
        ) {
            let p = params();
            let s = [vx, vy, w, 10.0, -4.0, psi];
            let a = dynamics(&s, &[delta, tr], &p);
            let b = dynamics_oracle(s, [delta, tr], &p);
            for i in 0..6 {
                prop_assert!((a[i] - b[i]).abs() <= 1e-9 * (1.0 + b[i].abs()));
            }
        }

        #[test]
        fn slip_angles_are_odd(vx in 0.6..30.0f64, vy in -2.0..2.0f64, w in -1.0..1.0f64, d in -0.5..0.5f64) {
            let p = params();
            let (af, ar) = slip_angles(vx, vy, w, d, &p);
            let (bf, br) = slip_angles(vx, -vy, -w, -d, &p);
            prop_assert!((af + bf).abs() < 1e-15 && (ar + br).abs() < 1e-15);
        }

        #[test]
        fn no_lateral_excitation_when_aligned(vx in 0.0..35.0f64, tr in -1.0..1.0f64, psi in -3.0..3.0f64) {
            let d = dynamics(&[vx, 0.0, 0.0, 0.0, 0.0, psi], &[0.0, tr], &params());
            prop_assert_eq!(d[1] * params().mass, 0.0);
            prop_assert_eq!(d[2] * params().iz, 0.0);
        }

        #[test]
        fn heading_preserves_speed(vx in -30.0..30.0f64, vy in -3.0..3.0f64, psi in -7.0..7.0f64) {
            let d = dynamics(&[vx, vy, 0.1, 0.0, 0.0, psi], &[0.05, 0.2], &params());
            let lhs = d[3] * d[3] + d[4] * d[4];
            let rhs = vx * vx + vy * vy;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }
    }

    #[test]
    fn equilibrium_is_fixed_point_of_rk4() {
        let p = params();
        let s = VehicleState::new(0.0, 0.0, 0.0, 1.0, 2.0, 0.3);
        let next = rk4_step(&s, &ControlInput::new(0.0, 0.0), &p, 0.04, 4);
        assert_eq!(next, s);
    }

    #[test]
    fn rk4_step_halving_is_fourth_order() {
        let p = params();
        let s = VehicleState::new(15.0, 0.3, 0.2, 0.0, 0.0, 0.1);
        let u = ControlInput::new(0.08, 0.3);
        let dt = 0.5;
        let reference = rk4_step(&s, &u, &p, dt, 2048).to_array();
        let err = |n: usize| {
            let a = rk4_step(&s, &u, &p, dt, n).to_array();
            a.iter().zip(&reference).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let order = (err(16) / err(32)).log2();
        assert!((3.5..=4.5).contains(&order), "observed order {order}");
    }

    #[test]
    fn coasting_matches_dense_integration() {
        // Straight coast: vx' = -(cr0 + cr2 vx²)/M (sign surrogate = 1 at speed)
        let p = params();
        let s = VehicleState::new(20.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let next = rk4_step(&s, &ControlInput::new(0.0, 0.0), &p, 0.04, 4);
        // closed form: vx(t) = a tan(atan(v0/a) - b t) with a = sqrt(cr0/cr2), b = sqrt(cr0 cr2)/M
        let a = (p.cr0 / p.cr2).sqrt();
        let b = (p.cr0 * p.cr2).sqrt() / p.mass;
        let phi0 = (20.0 / a).atan();
        // X(t) = (a/b) ln(cos(phi0 - b t) / cos(phi0))
        let x_exact = a / b * ((phi0 - b * 0.04).cos() / phi0.cos()).ln();
        assert!((next.x - x_exact).abs() < 1e-6, "{} vs {}", next.x, x_exact);
    }
}
