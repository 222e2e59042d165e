//! Condensed linear time-varying MPC for path tracking.
//!
//! The bicycle model is linearized by central differences along the
//! trajectory obtained from a guess input sequence; the predicted states are
//! eliminated so the QP is over the input sequence alone.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::path::ReferencePath;
use crate::dynamics::{wrap_angle, BicycleModel, ControlInput, InputBounds, VehicleState};
use crate::geom::Vec2;
use crate::qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpStatus};

const NX: usize = 4;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub vehicle: BicycleModel,
    pub w_pos: f64,
    pub w_heading: f64,
    pub w_speed: f64,
    pub w_accel: f64,
    pub w_steer: f64,
    pub bounds: InputBounds,
    /// Max |d accel / dt| between consecutive inputs, m/s^3.
    pub accel_rate: f64,
    /// Max |d steer / dt| between consecutive inputs, rad/s.
    pub steer_rate: f64,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            vehicle: BicycleModel::default(),
            w_pos: 10.0,
            w_heading: 1.0,
            w_speed: 1.0,
            w_accel: 0.1,
            w_steer: 1.0,
            bounds: InputBounds::default(),
            accel_rate: 20.0,
            steer_rate: 2.0,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn is_valid(&self) -> bool {
        let weights = [self.w_pos, self.w_heading, self.w_speed, self.w_accel, self.w_steer];
        self.horizon >= 1
            && self.dt > 0.0
            && weights.iter().all(|w| *w >= 0.0)
            && self.accel_rate > 0.0
            && self.steer_rate > 0.0
            && self.bounds.accel_min <= self.bounds.accel_max
            && self.bounds.steer_min <= self.bounds.steer_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutput {
    pub u: ControlInput,
    pub status: QpStatus,
    /// Residuals of the solve, when it was optimal.
    pub kkt: Option<KktResiduals>,
    /// Whole optimal input sequence; empty after a fallback.
    pub sequence: Vec<ControlInput>,
}

impl MpcOutput {
    pub fn fell_back(&self) -> bool {
        self.status != QpStatus::Optimal
    }
}

fn to_vec(s: &VehicleState) -> [f64; NX] {
    [s.pos.x, s.pos.y, s.heading, s.speed]
}

fn from_vec(x: [f64; NX]) -> VehicleState {
    VehicleState { pos: Vec2::new(x[0], x[1]), heading: x[2], speed: x[3] }
}

fn diff(a: &VehicleState, b: &VehicleState) -> [f64; NX] {
    [a.pos.x - b.pos.x, a.pos.y - b.pos.y, wrap_angle(a.heading - b.heading), a.speed - b.speed]
}

/// `(d next / d x, d next / d u)` by central differences.
fn linearize(model: &BicycleModel, s: &VehicleState, u: ControlInput, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(NX, NX);
    let mut b = DMatrix::zeros(NX, 2);
    let x0 = to_vec(s);
    for j in 0..NX {
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        let d = diff(&model.step(&from_vec(xp), u, dt), &model.step(&from_vec(xm), u, dt));
        for i in 0..NX {
            a[(i, j)] = d[i] / (2.0 * FD_STEP);
        }
    }
    let u0 = u.as_array();
    for j in 0..2 {
        let mut up = u0;
        let mut um = u0;
        up[j] += FD_STEP;
        um[j] -= FD_STEP;
        let d = diff(
            &model.step(s, ControlInput::from_array(up), dt),
            &model.step(s, ControlInput::from_array(um), dt),
        );
        for i in 0..NX {
            b[(i, j)] = d[i] / (2.0 * FD_STEP);
        }
    }
    (a, b)
}

/// One MPC solve. `u_prev` is the input applied in the previous period; it
/// adds a rate limit on the first input.
pub fn mpc_solve(
    s: &VehicleState,
    path: &ReferencePath,
    cfg: &MpcConfig,
    u_prev: Option<ControlInput>,
) -> MpcOutput {
    let h = cfg.horizon;
    let nu = 2 * h;
    let guess = vec![ControlInput::ZERO; h];

    // nominal rollout and reference
    let mut states = Vec::with_capacity(h + 1);
    states.push(*s);
    for k in 0..h {
        states.push(cfg.vehicle.step(&states[k], guess[k], cfg.dt));
    }
    let (s0, _) = path.project(s.pos);
    let v_ref = path.at(s0).speed;

    let q = [cfg.w_pos, cfg.w_pos, cfg.w_heading, cfg.w_speed];
    let mut hess = DMatrix::zeros(nu, nu);
    let mut grad = DVector::zeros(nu);
    let mut g = DMatrix::<f64>::zeros(NX, nu);
    for k in 0..h {
        let (a, b) = linearize(&cfg.vehicle, &states[k], guess[k], cfg.dt);
        g = &a * &g;
        for i in 0..NX {
            g[(i, 2 * k)] += b[(i, 0)];
            g[(i, 2 * k + 1)] += b[(i, 1)];
        }
        let r = path.at(s0 + v_ref * cfg.dt * (k + 1) as f64);
        let target = VehicleState { pos: r.pos, heading: r.heading, speed: r.speed };
        let e = diff(&states[k + 1], &target);
        for i in 0..NX {
            let row = g.row(i);
            hess += row.transpose() * row * (2.0 * q[i]);
            grad += row.transpose() * (2.0 * q[i] * e[i]);
        }
    }
    for k in 0..h {
        let u = guess[k].as_array();
        let w = [cfg.w_accel, cfg.w_steer];
        for j in 0..2 {
            hess[(2 * k + j, 2 * k + j)] += 2.0 * w[j];
            grad[2 * k + j] += 2.0 * w[j] * u[j];
        }
    }

    // decision variable is the deviation from the guess
    let lo = cfg.bounds.lower();
    let hi = cfg.bounds.upper();
    let mut lb = DVector::zeros(nu);
    let mut ub = DVector::zeros(nu);
    for k in 0..h {
        let u = guess[k].as_array();
        for j in 0..2 {
            lb[2 * k + j] = lo[j] - u[j];
            ub[2 * k + j] = hi[j] - u[j];
        }
    }
    let rate = [cfg.accel_rate * cfg.dt, cfg.steer_rate * cfg.dt];
    let first = usize::from(u_prev.is_some());
    let n_rows = 4 * (h - 1 + first);
    let mut a = DMatrix::zeros(n_rows, nu);
    let mut bvec = DVector::zeros(n_rows);
    let mut r = 0;
    if let Some(p) = u_prev {
        let p = p.as_array();
        for j in 0..2 {
            let u0 = guess[0].as_array()[j];
            // -rate <= u_0 - u_prev <= rate
            a[(r, j)] = 1.0;
            bvec[r] = p[j] - rate[j] - u0;
            a[(r + 1, j)] = -1.0;
            bvec[r + 1] = -(p[j] + rate[j] - u0);
            r += 2;
        }
    }
    for k in 1..h {
        let (cur, prev) = (guess[k].as_array(), guess[k - 1].as_array());
        for j in 0..2 {
            let offset = cur[j] - prev[j];
            a[(r, 2 * k + j)] = 1.0;
            a[(r, 2 * (k - 1) + j)] = -1.0;
            bvec[r] = -rate[j] - offset;
            a[(r + 1, 2 * k + j)] = -1.0;
            a[(r + 1, 2 * (k - 1) + j)] = 1.0;
            bvec[r + 1] = -rate[j] + offset;
            r += 2;
        }
    }

    let problem = QpProblem { h: hess, f: grad, a, b: bvec, lb, ub };
    let sol = solve_qp(&problem, &cfg.qp);
    if sol.status != QpStatus::Optimal {
        return MpcOutput { u: cfg.bounds.braking(), status: sol.status, kkt: None, sequence: Vec::new() };
    }
    let sequence: Vec<ControlInput> = (0..h)
        .map(|k| {
            let u = guess[k];
            cfg.bounds.clamp(ControlInput::new(u.accel + sol.x[2 * k], u.steer + sol.x[2 * k + 1]))
        })
        .collect();
    MpcOutput { u: sequence[0], status: sol.status, kkt: Some(sol.kkt), sequence }
}

/// First input of the horizon-optimal sequence, or full braking when the
/// QP fails.
pub fn mpc_nominal(s: &VehicleState, path: &ReferencePath, cfg: &MpcConfig) -> ControlInput {
    mpc_solve(s, path, cfg, None).u
}

#[cfg(test)]
mod tests {
    use super::*;

    fn east_path() -> ReferencePath {
        ReferencePath::straight(Vec2::new(-100.0, 0.0), Vec2::new(100.0, 0.0), 8.0).unwrap()
    }

    #[test]
    fn equilibrium_gives_zero_input() {
        let s = VehicleState::new(Vec2::new(-50.0, 0.0), 0.0, 8.0);
        let u = mpc_nominal(&s, &east_path(), &MpcConfig::default());
        assert!(u.accel.abs() < 0.05 && u.steer.abs() < 0.01, "{u:?}");
    }

    #[test]
    fn steers_back_toward_path() {
        let cfg = MpcConfig::default();
        let left = mpc_nominal(&VehicleState::new(Vec2::new(-50.0, 1.0), 0.0, 8.0), &east_path(), &cfg);
        assert!(left.steer < 0.0, "{left:?}");
        let right = mpc_nominal(&VehicleState::new(Vec2::new(-50.0, -1.0), 0.0, 8.0), &east_path(), &cfg);
        assert!(right.steer > 0.0, "{right:?}");
    }

    #[test]
    fn accelerates_when_slow() {
        let u = mpc_nominal(&VehicleState::new(Vec2::new(-50.0, 0.0), 0.0, 5.0), &east_path(), &MpcConfig::default());
        assert!(u.accel > 0.0, "{u:?}");
        let u = mpc_nominal(&VehicleState::new(Vec2::new(-50.0, 0.0), 0.0, 0.0), &east_path(), &MpcConfig::default());
        assert!(u.accel > 0.0, "{u:?}");
    }

    #[test]
    fn respects_bounds_and_rates() {
        let cfg = MpcConfig::default();
        let s = VehicleState::new(Vec2::new(-50.0, 6.0), 1.0, 2.0);
        let out = mpc_solve(&s, &east_path(), &cfg, Some(ControlInput::ZERO));
        assert_eq!(out.status, QpStatus::Optimal);
        for w in out.sequence.windows(2) {
            assert!((w[1].accel - w[0].accel).abs() <= cfg.accel_rate * cfg.dt + 1e-5);
            assert!((w[1].steer - w[0].steer).abs() <= cfg.steer_rate * cfg.dt + 1e-5);
        }
        for u in &out.sequence {
            assert!(cfg.bounds.contains(*u));
        }
        assert!(out.u.accel.abs() <= cfg.accel_rate * cfg.dt + 1e-5);
        assert!(out.u.steer.abs() <= cfg.steer_rate * cfg.dt + 1e-5);
    }

    #[test]
    fn closed_loop_converges_to_path() {
        let cfg = MpcConfig::default();
        let path = east_path();
        let mut s = VehicleState::new(Vec2::new(-90.0, 2.0), 0.2, 4.0);
        let mut prev = None;
        for _ in 0..150 {
            let out = mpc_solve(&s, &path, &cfg, prev);
            assert_eq!(out.status, QpStatus::Optimal);
            prev = Some(out.u);
            s = cfg.vehicle.step(&s, out.u, cfg.dt);
        }
        assert!(s.pos.y.abs() < 0.1, "{s:?}");
        assert!(s.heading.abs() < 0.02, "{s:?}");
        assert!((s.speed - 8.0).abs() < 0.1, "{s:?}");
    }

    #[test]
    fn linearization_matches_step() {
        let model = BicycleModel::default();
        let s = VehicleState::new(Vec2::new(1.0, 2.0), 0.3, 6.0);
        let u = ControlInput::new(0.5, 0.1);
        let (a, b) = linearize(&model, &s, u, 0.1);
        let dx = [0.01, -0.02, 0.005, 0.1];
        let du = [0.2, -0.01];
        let mut xs = to_vec(&s);
        for i in 0..NX {
            xs[i] += dx[i];
        }
        let pert = model.step(&from_vec(xs), ControlInput::new(u.accel + du[0], u.steer + du[1]), 0.1);
        let base = model.step(&s, u, 0.1);
        let actual = diff(&pert, &base);
        let pred = &a * DVector::from_row_slice(&dx) + &b * DVector::from_row_slice(&du);
        for i in 0..NX {
            assert!((actual[i] - pred[i]).abs() < 1e-3, "{i}: {} vs {}", actual[i], pred[i]);
        }
    }
}
