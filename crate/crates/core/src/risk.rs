//! Sampled control-barrier constraints and their tail risk.
//!
//! Safety is "large barrier values", so the risk tail is the lower tail of
//! the constraint distribution: VaR is a low quantile and CVaR is the mean of
//! the samples at or below it.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{BicycleModel, ControlInput, VehicleState};
use crate::geom::{Gaussian2, Mat2, Vec2};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierParams {
    /// m
    pub vehicle_radius: f64,
    /// m
    pub obstacle_radius: f64,
    /// Extra buffer on top of the two radii, m.
    pub safety_dist: f64,
    /// Slope of the linear class-K function, 1/s.
    pub alpha_gain: f64,
    /// Risk level in (0, 1).
    pub epsilon: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { vehicle_radius: 1.8, obstacle_radius: 1.0, safety_dist: 3.0, alpha_gain: 1.0, epsilon: 0.05 }
    }
}

impl BarrierParams {
    /// Total keep-out distance between centers.
    pub fn keep_out(&self) -> f64 {
        self.vehicle_radius + self.obstacle_radius + self.safety_dist
    }
}

/// `|z_v - z_o| - D`.
pub fn barrier(z_v: Vec2, z_o: Vec2, p: &BarrierParams) -> f64 {
    (z_v - z_o).norm() - p.keep_out()
}

/// One sampled constraint, affine in the input around the linearization
/// point: `cbc(u) = const_term + grad_u . (u - u_lin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbcSample {
    pub const_term: f64,
    pub grad_u: [f64; 2],
}

impl CbcSample {
    pub fn value_at(&self, u: ControlInput, u_lin: ControlInput) -> f64 {
        self.const_term + self.grad_u[0] * (u.accel - u_lin.accel) + self.grad_u[1] * (u.steer - u_lin.steer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbcSampleSet {
    /// Ego-major: index `i * j_count + j`.
    pub samples: Vec<CbcSample>,
    pub i_count: usize,
    pub j_count: usize,
    /// Input the samples were linearized around.
    pub u_lin: ControlInput,
}

impl CbcSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Whether `N * epsilon >= 1`, i.e. the tail holds at least one sample.
    pub fn tail_well_defined(&self, epsilon: f64) -> bool {
        tail_mass(self.len(), epsilon) >= 1.0
    }

    pub fn values_at(&self, u: ControlInput) -> Vec<f64> {
        self.samples.iter().map(|s| s.value_at(u, self.u_lin)).collect()
    }
}

/// Everything the sampled constraint needs besides the two distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbcModel {
    pub vehicle: BicycleModel,
    pub dt: f64,
    pub barrier: BarrierParams,
}

impl Default for CbcModel {
    fn default() -> Self {
        Self { vehicle: BicycleModel::default(), dt: 0.1, barrier: BarrierParams::default() }
    }
}

impl CbcModel {
    /// Draws `i_count` ego positions and `j_count` obstacle positions and
    /// forms the discrete-time constraint
    /// `h(next_i(u), o_j + v dt) - (1 - alpha dt) h(p_i, o_j)` for every pair,
    /// linearized in `u` at `u_nom`.
    ///
    /// The sampled ego error is shared by the current and predicted vehicle
    /// position, and `state.pos` is taken as the center of `ego`.
    #[allow(clippy::too_many_arguments)]
    pub fn build_samples(
        &self,
        ego: &Gaussian2,
        obstacle: &Gaussian2,
        state: &VehicleState,
        u_nom: ControlInput,
        obstacle_vel: Vec2,
        i_count: usize,
        j_count: usize,
        rng: &mut RngStream,
    ) -> CbcSampleSet {
        assert!(i_count >= 1 && j_count >= 1, "sample counts must be positive");
        let ego_pts: Vec<Vec2> = (0..i_count).map(|_| ego.sample(rng)).collect();
        let obs_pts: Vec<Vec2> = (0..j_count).map(|_| obstacle.sample(rng)).collect();
        self.samples_from_points(&ego_pts, &obs_pts, ego.mean, state, u_nom, obstacle_vel)
    }

    /// The single constraint at known ego and obstacle positions.
    pub fn deterministic(
        &self,
        ego_pos: Vec2,
        obstacle_pos: Vec2,
        state: &VehicleState,
        u_nom: ControlInput,
        obstacle_vel: Vec2,
    ) -> CbcSampleSet {
        self.samples_from_points(&[ego_pos], &[obstacle_pos], ego_pos, state, u_nom, obstacle_vel)
    }

    /// Pairs every ego point with every obstacle point, ego-major.
    pub fn samples_from_points(
        &self,
        ego_pts: &[Vec2],
        obs_pts: &[Vec2],
        ego_center: Vec2,
        state: &VehicleState,
        u_nom: ControlInput,
        obstacle_vel: Vec2,
    ) -> CbcSampleSet {
        let reference = VehicleState { pos: ego_center, ..*state };
        let displacement = self.vehicle.step(&reference, u_nom, self.dt).pos - reference.pos;
        let jac = self.vehicle.step_jacobian_u(&reference, u_nom, self.dt);
        let decay = 1.0 - self.barrier.alpha_gain * self.dt;
        let obs_shift = obstacle_vel * self.dt;

        let mut samples = Vec::with_capacity(ego_pts.len() * obs_pts.len());
        for p in ego_pts {
            let next = *p + displacement;
            for o in obs_pts {
                samples.push(self.sample_at(*p, next, *o, *o + obs_shift, decay, &jac));
            }
        }
        CbcSampleSet { samples, i_count: ego_pts.len(), j_count: obs_pts.len(), u_lin: u_nom }
    }

    fn sample_at(&self, ego: Vec2, ego_next: Vec2, obs: Vec2, obs_next: Vec2, decay: f64, jac: &Mat2) -> CbcSample {
        let h_now = barrier(ego, obs, &self.barrier);
        let rel = ego_next - obs_next;
        let dist = rel.norm();
        let h_next = dist - self.barrier.keep_out();
        let normal = if dist > 0.0 { rel * (1.0 / dist) } else { Vec2::ZERO };
        let g = jac.tr_mul_vec(normal);
        CbcSample { const_term: h_next - decay * h_now, grad_u: [g.x, g.y] }
    }
}

/// `N * epsilon`, snapped to the nearest integer when within round-off.
fn tail_mass(n: usize, epsilon: f64) -> f64 {
    let t = n as f64 * epsilon.min(1.0);
    let r = libm::round(t);
    if (t - r).abs() <= 1e-9 * t.max(1.0) {
        r
    } else {
        t
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Lower-tail value at risk: the `ceil(N eps)`-th smallest value.
pub fn empirical_var(values: &[f64], epsilon: f64) -> f64 {
    assert!(!values.is_empty(), "empirical_var of an empty list");
    let v = sorted(values);
    let k = (libm::ceil(tail_mass(v.len(), epsilon)) as usize).clamp(1, v.len());
    v[k - 1]
}

/// Lower-tail conditional value at risk.
///
/// Mean of the `N eps` smallest values, where the boundary sample enters
/// with its fractional weight when `N eps` is not an integer. This is the
/// exact maximum of [`ru_function`] over `gamma`; for integral `N eps` it is
/// the plain mean of the `N eps` smallest values.
pub fn empirical_cvar(values: &[f64], epsilon: f64) -> f64 {
    assert!(!values.is_empty(), "empirical_cvar of an empty list");
    let v = sorted(values);
    let t = tail_mass(v.len(), epsilon).max(f64::MIN_POSITIVE);
    let k = (libm::ceil(t) as usize).clamp(1, v.len());
    let head: f64 = v[..k - 1].iter().sum();
    let boundary_weight = t - (k - 1) as f64;
    (head + boundary_weight * v[k - 1]) / t
}

/// `gamma - 1/(N eps) * sum_i max(gamma - v_i, 0)`.
pub fn ru_function(values: &[f64], epsilon: f64, gamma: f64) -> f64 {
    assert!(!values.is_empty(), "ru_function of an empty list");
    let hinge: f64 = values.iter().map(|v| (gamma - v).max(0.0)).sum();
    gamma - hinge / (values.len() as f64 * epsilon)
}

/// Column of `u_accel` in the epigraph variable vector.
pub const VAR_ACCEL: usize = 0;
pub const VAR_STEER: usize = 1;
pub const VAR_GAMMA: usize = 2;
/// First slack column.
pub const VAR_SLACK0: usize = 3;

/// Inequality rows `a x >= b` over `x = (u_accel, u_steer, gamma, slack_1..N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphRows {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl EpigraphRows {
    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    /// Max row violation `max(b - a x, 0)`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.b - &self.a * x).iter().fold(0.0, |m, r| m.max(*r))
    }
}

/// Linear rows equivalent to `max_gamma F(cbc(u), gamma) >= 0`:
///
/// * `slack_i >= 0`
/// * `slack_i >= gamma - cbc_i(u)`
/// * `gamma - 1/(N eps) sum_i slack_i >= 0`
///
/// Any feasible point stays feasible when each slack drops to
/// `max(gamma - cbc_i(u), 0)`, so projecting out the slacks recovers the
/// hinge constraint exactly.
pub fn epigraph_rows(set: &CbcSampleSet, epsilon: f64) -> EpigraphRows {
    let n = set.len();
    let n_vars = VAR_SLACK0 + n;
    let mut a = DMatrix::zeros(2 * n + 1, n_vars);
    let mut b = DVector::zeros(2 * n + 1);
    let u0 = set.u_lin;
    for (i, s) in set.samples.iter().enumerate() {
        a[(i, VAR_SLACK0 + i)] = 1.0;

        let r = n + i;
        a[(r, VAR_SLACK0 + i)] = 1.0;
        a[(r, VAR_GAMMA)] = -1.0;
        a[(r, VAR_ACCEL)] = s.grad_u[0];
        a[(r, VAR_STEER)] = s.grad_u[1];
        b[r] = s.grad_u[0] * u0.accel + s.grad_u[1] * u0.steer - s.const_term;
    }
    let last = 2 * n;
    a[(last, VAR_GAMMA)] = 1.0;
    let coef = 1.0 / (n as f64 * epsilon);
    for i in 0..n {
        a[(last, VAR_SLACK0 + i)] = -coef;
    }
    EpigraphRows { a, b }
}
