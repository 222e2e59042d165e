//! Discrete-time motion models: a kinematic bicycle for the ego vehicle and
//! a constant-velocity point for the crossing pedestrian.

use core::f64::consts::PI;

use crate::geom::{Mat2, Vec2};

/// Finite-difference step used by [`vehicle_step_jacobian_u`].
pub const JACOBIAN_STEP: f64 = 1e-5;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = libm::fmod(angle + PI, 2.0 * PI);
    if a <= 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub pos: Vec2,
    /// Radians, wrapped to `(-pi, pi]`.
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
}

impl VehicleState {
    pub fn new(pos: Vec2, heading: f64, speed: f64) -> Self {
        Self { pos, heading: wrap_angle(heading), speed: speed.max(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// m/s^2
    pub accel: f64,
    /// Front wheel angle, radians.
    pub steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { accel: 0.0, steer: 0.0 };

    pub const fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.accel, self.steer]
    }

    pub fn from_array(u: [f64; 2]) -> Self {
        Self::new(u[0], u[1])
    }
}

/// Admissible input box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBounds {
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_min: f64,
    pub steer_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self { accel_min: -6.0, accel_max: 3.0, steer_min: -0.5, steer_max: 0.5 }
    }
}

impl InputBounds {
    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.accel.clamp(self.accel_min, self.accel_max),
            u.steer.clamp(self.steer_min, self.steer_max),
        )
    }

    pub fn contains(&self, u: ControlInput) -> bool {
        u.accel >= self.accel_min
            && u.accel <= self.accel_max
            && u.steer >= self.steer_min
            && u.steer <= self.steer_max
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.accel_min, self.steer_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.accel_max, self.steer_max]
    }

    /// Maximal braking with straight wheels.
    pub fn braking(&self) -> ControlInput {
        ControlInput::new(self.accel_min, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObstacleState {
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Kinematic bicycle parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleModel {
    /// Axle-to-axle distance, m.
    pub wheelbase: f64,
}

impl Default for BicycleModel {
    fn default() -> Self {
        Self { wheelbase: 2.9 }
    }
}

#[derive(Clone, Copy)]
struct Deriv {
    dx: f64,
    dy: f64,
    dh: f64,
}

impl BicycleModel {
    fn deriv(&self, heading: f64, speed: f64, tan_steer: f64) -> Deriv {
        let (s, c) = libm::sincos(heading);
        Deriv { dx: speed * c, dy: speed * s, dh: speed / self.wheelbase * tan_steer }
    }

    /// RK4 over `[0, h]` with constant input. Speed is linear in time, so the
    /// integration of the speed channel is exact.
    fn rk4(&self, s: &VehicleState, u: ControlInput, h: f64) -> VehicleState {
        let ts = libm::tan(u.steer);
        let v0 = s.speed;
        let vm = v0 + 0.5 * h * u.accel;
        let v1 = v0 + h * u.accel;
        let k1 = self.deriv(s.heading, v0, ts);
        let k2 = self.deriv(s.heading + 0.5 * h * k1.dh, vm, ts);
        let k3 = self.deriv(s.heading + 0.5 * h * k2.dh, vm, ts);
        let k4 = self.deriv(s.heading + h * k3.dh, v1, ts);
        let x = s.pos.x + h * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx) / 6.0;
        let y = s.pos.y + h * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy) / 6.0;
        let heading = s.heading + h * (k1.dh + 2.0 * k2.dh + 2.0 * k3.dh + k4.dh) / 6.0;
        VehicleState { pos: Vec2::new(x, y), heading: wrap_angle(heading), speed: v1.max(0.0) }
    }

    /// One control period of the kinematic bicycle.
    ///
    /// When braking would reverse the vehicle inside the period, integration
    /// stops at the instant the speed reaches zero and the vehicle stays put.
    pub fn step(&self, s: &VehicleState, u: ControlInput, dt: f64) -> VehicleState {
        if u.accel < 0.0 && s.speed + u.accel * dt < 0.0 {
            let t_stop = s.speed / -u.accel;
            let mut out = self.rk4(s, u, t_stop);
            out.speed = 0.0;
            return out;
        }
        self.rk4(s, u, dt)
    }

    /// `d next.pos / d (accel, steer)` by central differences around `u0`.
    pub fn step_jacobian_u(&self, s: &VehicleState, u0: ControlInput, dt: f64) -> Mat2 {
        self.step_jacobian_u_with(s, u0, dt, JACOBIAN_STEP)
    }

    pub fn step_jacobian_u_with(&self, s: &VehicleState, u0: ControlInput, dt: f64, step: f64) -> Mat2 {
        let col = |da: f64, ds: f64| {
            let plus = self.step(s, ControlInput::new(u0.accel + da, u0.steer + ds), dt).pos;
            let minus = self.step(s, ControlInput::new(u0.accel - da, u0.steer - ds), dt).pos;
            (plus - minus) * (0.5 / step)
        };
        Mat2::from_columns(col(step, 0.0), col(0.0, step))
    }
}

pub fn vehicle_step(model: &BicycleModel, s: &VehicleState, u: ControlInput, dt: f64) -> VehicleState {
    model.step(s, u, dt)
}

pub fn vehicle_step_jacobian_u(model: &BicycleModel, s: &VehicleState, u0: ControlInput, dt: f64) -> Mat2 {
    model.step_jacobian_u(s, u0, dt)
}

/// Constant-velocity propagation.
pub fn obstacle_step(o: &ObstacleState, dt: f64) -> ObstacleState {
    ObstacleState { pos: o.pos + o.vel * dt, vel: o.vel }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euler_oracle(model: &BicycleModel, s: &VehicleState, u: ControlInput, dt: f64, n: usize) -> VehicleState {
        let h = dt / n as f64;
        let (mut x, mut y, mut th, mut v) = (s.pos.x, s.pos.y, s.heading, s.speed);
        for _ in 0..n {
            let nx = x + h * v * th.cos();
            let ny = y + h * v * th.sin();
            let nth = th + h * v / model.wheelbase * u.steer.tan();
            v = (v + h * u.accel).max(0.0);
            x = nx;
            y = ny;
            th = nth;
        }
        VehicleState::new(Vec2::new(x, y), th, v)
    }

    #[test]
    fn rest_is_fixed_point() {
        let m = BicycleModel::default();
        let s = VehicleState::new(Vec2::new(3.0, 4.0), 0.3, 0.0);
        assert_eq!(m.step(&s, ControlInput::ZERO, 0.1), s);
    }

    #[test]
    fn straight_line_is_exact() {
        let m = BicycleModel::default();
        let s = VehicleState::new(Vec2::ZERO, 0.0, 10.0);
        let n = m.step(&s, ControlInput::ZERO, 0.1);
        assert_eq!(n.pos.x, 1.0);
        assert_eq!(n.pos.y, 0.0);
        assert_eq!(n.heading, 0.0);
        assert_eq!(n.speed, 10.0);
    }

    #[test]
    fn turning_matches_fine_euler() {
        let m = BicycleModel { wheelbase: 2.9 };
        let s = VehicleState::new(Vec2::ZERO, 0.0, 5.0);
        let u = ControlInput::new(0.0, 0.1);
        let n = m.step(&s, u, 0.1);
        let expected_dh = 5.0 / 2.9 * 0.1f64.tan() * 0.1;
        assert!((n.heading - expected_dh).abs() < 1e-12);
        let o = euler_oracle(&m, &s, u, 0.1, 1000);
        // first-order oracle error is O(h) = O(1e-4 * curvature terms)
        assert!((n.heading - o.heading).abs() < 1e-6);
        assert!((n.pos - o.pos).norm() < 1e-4);
    }

    #[test]
    fn braking_to_stop_never_reverses() {
        let m = BicycleModel::default();
        let s = VehicleState::new(Vec2::ZERO, 0.0, 0.3);
        let n = m.step(&s, ControlInput::new(-6.0, 0.2), 0.1);
        assert_eq!(n.speed, 0.0);
        // stops after 0.05 s having travelled v^2 / (2|a|)
        assert!((n.pos.norm() - 0.3 * 0.3 / 12.0).abs() < 1e-4);
        assert!(n.pos.x > 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(7.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
    }

    #[test]
    fn jacobian_degenerate_cases() {
        let m = BicycleModel::default();
        let s = VehicleState::new(Vec2::ZERO, 0.4, 0.0);
        let j = m.step_jacobian_u(&s, ControlInput::ZERO, 0.1);
        assert_eq!(j.column(1).norm(), 0.0);
        // with throttle, steering only acts through higher-order accel coupling
        let j = m.step_jacobian_u(&s, ControlInput::new(1.0, 0.0), 0.1);
        assert!(j.column(1).norm() < 1e-4 * j.column(0).norm() * 10.0);
        assert!(j.column(0).norm() > 1e-3);
        let s = VehicleState::new(Vec2::ZERO, 0.4, 7.0);
        let j = m.step_jacobian_u(&s, ControlInput::new(0.5, 0.1), 1e-6);
        assert!(j.max_abs() < 1e-9);
    }

    #[test]
    fn jacobian_straight_line_closed_form() {
        // d x / d accel = dt^2 / 2 along the heading
        let m = BicycleModel::default();
        let s = VehicleState::new(Vec2::ZERO, 0.0, 8.0);
        let j = m.step_jacobian_u(&s, ControlInput::ZERO, 0.1);
        assert!((j.m00 - 0.005).abs() < 1e-9);
        assert!(j.m10.abs() < 1e-9);
        assert!(j.m11 > 0.0, "left steer moves the car north");
    }

    #[test]
    fn obstacle_constant_velocity() {
        let o = ObstacleState { pos: Vec2::new(1.0, 2.0), vel: Vec2::ZERO };
        assert_eq!(obstacle_step(&o, 0.1), o);
        let o = ObstacleState { pos: Vec2::ZERO, vel: Vec2::new(4.5, 0.0) };
        assert_eq!(obstacle_step(&o, 1.0).pos, Vec2::new(4.5, 0.0));
        let mut p = ObstacleState { pos: Vec2::new(0.3, -2.0), vel: Vec2::new(1.1, 4.5) };
        for _ in 0..10 {
            p = obstacle_step(&p, 0.1);
        }
        let q = obstacle_step(&ObstacleState { pos: Vec2::new(0.3, -2.0), vel: Vec2::new(1.1, 4.5) }, 1.0);
        assert!((p.pos - q.pos).norm() < 1e-12);
    }
}
