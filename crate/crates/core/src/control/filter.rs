//! Safety filters acting on the first MPC input.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlInput, InputBounds, VehicleState};
use crate::geom::{Gaussian2, Vec2};
use crate::qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpStatus};
use crate::risk::{
    empirical_cvar, empirical_var, epigraph_rows, CbcModel, CbcSampleSet, VAR_ACCEL, VAR_GAMMA, VAR_STEER,
};
use crate::sensing::ObstacleMeasurements;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterStatus {
    /// `u_nom` already met the constraint; no QP was solved.
    Inactive,
    Solved,
    /// The QP did not reach optimality and full braking was applied.
    Fallback(QpStatus),
    /// Obstacle fusion failed and full braking was applied.
    FusionFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterDecision {
    pub u_safe: ControlInput,
    pub u_nom: ControlInput,
    /// Value-at-risk level of the sampled constraint, m.
    pub gamma: Option<f64>,
    pub active: bool,
    pub status: FilterStatus,
    pub kkt: Option<KktResiduals>,
}

impl FilterDecision {
    pub fn passthrough(u_nom: ControlInput, gamma: Option<f64>) -> Self {
        Self { u_safe: u_nom, u_nom, gamma, active: false, status: FilterStatus::Inactive, kkt: None }
    }

    pub fn braking(u_nom: ControlInput, bounds: &InputBounds, status: FilterStatus) -> Self {
        Self { u_safe: bounds.braking(), u_nom, gamma: None, active: true, status, kkt: None }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.status, FilterStatus::Fallback(_) | FilterStatus::FusionFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyFilter {
    pub cbc: CbcModel,
    pub bounds: InputBounds,
    pub qp: QpSettings,
}

impl Default for SafetyFilter {
    fn default() -> Self {
        Self { cbc: CbcModel::default(), bounds: InputBounds::default(), qp: QpSettings::default() }
    }
}

/// Unweighted mean of the sensor means.
pub fn mean_fused_position(obstacle_meas: &ObstacleMeasurements) -> Vec2 {
    let mut sum = Vec2::ZERO;
    for (_, g) in obstacle_meas {
        sum += g.mean;
    }
    sum * (1.0 / obstacle_meas.len() as f64)
}

impl SafetyFilter {
    /// Mean-position CBF-QP: `min |u - u_nom|^2` s.t. the single constraint
    /// at the measured ego mean and the averaged obstacle position.
    pub fn baseline(
        &self,
        u_nom: ControlInput,
        s: &VehicleState,
        ego_meas: &Gaussian2,
        obstacle_meas: &ObstacleMeasurements,
        obstacle_vel: Vec2,
    ) -> FilterDecision {
        let obstacle = mean_fused_position(obstacle_meas);
        let set = self.cbc.deterministic(ego_meas.mean, obstacle, s, u_nom, obstacle_vel);
        let c = set.samples[0];
        if c.const_term >= 0.0 {
            return FilterDecision::passthrough(u_nom, None);
        }
        let u0 = u_nom.as_array();
        let problem = QpProblem {
            h: DMatrix::identity(2, 2),
            f: DVector::from_row_slice(&[-u0[0], -u0[1]]),
            a: DMatrix::from_row_slice(1, 2, &c.grad_u),
            b: DVector::from_element(1, c.grad_u[0] * u0[0] + c.grad_u[1] * u0[1] - c.const_term),
            lb: DVector::from_row_slice(&self.bounds.lower()),
            ub: DVector::from_row_slice(&self.bounds.upper()),
        };
        let sol = solve_qp(&problem, &self.qp);
        if sol.status != QpStatus::Optimal {
            return FilterDecision::braking(u_nom, &self.bounds, FilterStatus::Fallback(sol.status));
        }
        FilterDecision {
            u_safe: self.bounds.clamp(ControlInput::new(sol.x[0], sol.x[1])),
            u_nom,
            gamma: None,
            active: true,
            status: FilterStatus::Solved,
            kkt: Some(sol.kkt),
        }
    }

    /// CVaR filter over `i_count * j_count` sampled constraints drawn from
    /// the ego measurement and the fused obstacle distribution.
    #[allow(clippy::too_many_arguments)]
    pub fn wb_cvar(
        &self,
        u_nom: ControlInput,
        s: &VehicleState,
        ego_meas: &Gaussian2,
        wb: &Gaussian2,
        obstacle_vel: Vec2,
        i_count: usize,
        j_count: usize,
        rng: &mut crate::rng::RngStream,
    ) -> FilterDecision {
        let set = self.cbc.build_samples(ego_meas, wb, s, u_nom, obstacle_vel, i_count, j_count, rng);
        self.wb_cvar_on(u_nom, &set)
    }

    /// CVaR filter on an explicit sample set linearized at `u_nom`.
    pub fn wb_cvar_on(&self, u_nom: ControlInput, set: &CbcSampleSet) -> FilterDecision {
        let eps = self.cbc.barrier.epsilon;
        let values = set.values_at(u_nom);
        if empirical_cvar(&values, eps) >= 0.0 {
            return FilterDecision::passthrough(u_nom, Some(empirical_var(&values, eps)));
        }
        let mut rows = epigraph_rows(set, eps);
        // gamma and the slacks are solved for in units of the largest
        // gradient entry so that all columns respond at a similar rate
        let unit = set
            .samples
            .iter()
            .fold(0.0f64, |m, c| m.max(c.grad_u[0].abs()).max(c.grad_u[1].abs()));
        let unit = if unit > 1e-9 { unit } else { 1.0 };
        for j in VAR_GAMMA..rows.n_vars() {
            for i in 0..rows.n_rows() {
                rows.a[(i, j)] *= unit;
            }
        }
        let n = rows.n_vars();
        let mut h = DMatrix::zeros(n, n);
        h[(VAR_ACCEL, VAR_ACCEL)] = 1.0;
        h[(VAR_STEER, VAR_STEER)] = 1.0;
        let mut f = DVector::zeros(n);
        f[VAR_ACCEL] = -u_nom.accel;
        f[VAR_STEER] = -u_nom.steer;
        let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
        let mut ub = DVector::from_element(n, f64::INFINITY);
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        lb[VAR_ACCEL] = lo[0];
        ub[VAR_ACCEL] = hi[0];
        lb[VAR_STEER] = lo[1];
        ub[VAR_STEER] = hi[1];
        let problem = QpProblem { h, f, a: rows.a, b: rows.b, lb, ub };
        let sol = solve_qp(&problem, &self.qp);
        if sol.status != QpStatus::Optimal {
            return FilterDecision::braking(u_nom, &self.bounds, FilterStatus::Fallback(sol.status));
        }
        FilterDecision {
            u_safe: self.bounds.clamp(ControlInput::new(sol.x[VAR_ACCEL], sol.x[VAR_STEER])),
            u_nom,
            gamma: Some(sol.x[VAR_GAMMA] * unit),
            active: true,
            status: FilterStatus::Solved,
            kkt: Some(sol.kkt),
        }
    }
}

pub fn filter_cbf_baseline(
    filter: &SafetyFilter,
    u_nom: ControlInput,
    s: &VehicleState,
    ego_meas: &Gaussian2,
    obstacle_meas: &ObstacleMeasurements,
    obstacle_vel: Vec2,
) -> FilterDecision {
    filter.baseline(u_nom, s, ego_meas, obstacle_meas, obstacle_vel)
}

#[allow(clippy::too_many_arguments)]
pub fn filter_wb_cvar_cbf(
    filter: &SafetyFilter,
    u_nom: ControlInput,
    s: &VehicleState,
    ego_meas: &Gaussian2,
    wb: &Gaussian2,
    obstacle_vel: Vec2,
    i_count: usize,
    j_count: usize,
    rng: &mut crate::rng::RngStream,
) -> FilterDecision {
    filter.wb_cvar(u_nom, s, ego_meas, wb, obstacle_vel, i_count, j_count, rng)
}
