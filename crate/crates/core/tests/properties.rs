use std::f64::consts::PI;

use proptest::prelude::*;
use wbcvar_core::control::SafetyFilter;
use wbcvar_core::dynamics::{wrap_angle, BicycleModel, ControlInput, InputBounds, ObstacleState, VehicleState};
use wbcvar_core::geom::{gaussian_sample, spd_sqrt, Gaussian2, Mat2, SpdMat2, Vec2};
use wbcvar_core::nalgebra::{DMatrix, DVector};
use wbcvar_core::qp::{solve_qp, solve_qp_warm, QpProblem, QpSettings, QpStatus};
use wbcvar_core::risk::{
    barrier, empirical_cvar, empirical_var, ru_function, BarrierParams, CbcSample, CbcSampleSet,
};
use wbcvar_core::rng::RngStream;
use wbcvar_core::sensing::{measure_obstacle, SensorKind, SensorModel};
use wbcvar_core::wasserstein::{fixed_point_defect, gaussian_barycenter, gaussian_w2_distance, BarycenterOptions};

/// PSD matrix `L L^T` from a lower factor, rank-deficient cases included.
fn psd() -> impl Strategy<Value = SpdMat2> {
    (0.0..3.0f64, -3.0..3.0f64, 0.0..3.0f64).prop_map(|(l00, l10, l11)| {
        SpdMat2::new(l00 * l00, l00 * l10, l10 * l10 + l11 * l11)
    })
}

/// Well-conditioned SPD matrix, variances in sensor range.
fn spd() -> impl Strategy<Value = SpdMat2> {
    (0.1..1.5f64, -1.0..1.0f64, 0.1..1.5f64).prop_map(|(l00, l10, l11)| {
        SpdMat2::new(l00 * l00, l00 * l10, l10 * l10 + l11 * l11)
    })
}

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn gaussian() -> impl Strategy<Value = Gaussian2> {
    (vec2(5.0), spd()).prop_map(|(m, c)| Gaussian2::new(m, c))
}

fn weights3() -> impl Strategy<Value = [f64; 3]> {
    (0.05..1.0f64, 0.05..1.0f64, 0.05..1.0f64).prop_map(|(a, b, c)| {
        let s = a + b + c;
        let (a, b) = (a / s, b / s);
        [a, b, 1.0 - a - b]
    })
}

fn square(s: &SpdMat2) -> SpdMat2 {
    SpdMat2::congruence(s, &SpdMat2::IDENTITY)
}

/// `R^T M R`.
fn conj(r: Mat2, m: &SpdMat2) -> SpdMat2 {
    SpdMat2::symmetrize(&(r.transpose() * m.to_mat() * r))
}

fn w2_sq_sum(cov: &SpdMat2, mean: Vec2, inputs: &[(f64, Gaussian2)]) -> f64 {
    let g = Gaussian2::new(mean, *cov);
    inputs.iter().map(|(w, h)| w * gaussian_w2_distance(&g, h).unwrap().powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn spd_sqrt_squares_back(m in psd()) {
        let r = spd_sqrt(&m).unwrap();
        prop_assert!(r.is_psd());
        prop_assert!(square(&r).max_abs_diff(&m) <= 1e-12, "{m:?}");
    }

    #[test]
    fn spd_sqrt_commutes_with_rotation(m in psd(), angle in -PI..PI) {
        let r = Mat2::rotation(angle);
        let lhs = spd_sqrt(&conj(r, &m)).unwrap();
        let rhs = conj(r, &spd_sqrt(&m).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    fn gaussian_sample_is_deterministic(g in gaussian(), seed in any::<u64>(), stream in 0u64..1000) {
        let mut a = RngStream::new(seed, stream);
        let mut b = RngStream::new(seed, stream);
        for _ in 0..20 {
            prop_assert_eq!(gaussian_sample(&g, &mut a), gaussian_sample(&g, &mut b));
        }
    }

    #[test]
    fn w2_metric_axioms(a in gaussian(), b in gaussian(), c in gaussian()) {
        let ab = gaussian_w2_distance(&a, &b).unwrap();
        let ba = gaussian_w2_distance(&b, &a).unwrap();
        let bc = gaussian_w2_distance(&b, &c).unwrap();
        let ac = gaussian_w2_distance(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn barycenter_defect_within_tol(w in weights3(), g in prop::array::uniform3(gaussian())) {
        let inputs: Vec<(f64, Gaussian2)> = w.iter().copied().zip(g).collect();
        let r = gaussian_barycenter(&inputs, BarycenterOptions::default()).unwrap();
        prop_assert!(r.residual <= 1e-10);
        let covs: Vec<(f64, SpdMat2)> = inputs.iter().map(|(w, g)| (*w, g.cov)).collect();
        prop_assert!(fixed_point_defect(&r.fused.cov, &covs).unwrap() <= 1e-10);
    }

    #[test]
    fn barycenter_mean_is_linear_and_order_free(
        w in weights3(),
        g in prop::array::uniform3(gaussian()),
        shift in prop::array::uniform3(vec2(5.0)),
        k in -3.0..3.0f64,
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let opts = BarycenterOptions::default();
        let base: Vec<(f64, Gaussian2)> = w.iter().copied().zip(g).collect();
        let moved: Vec<(f64, Gaussian2)> = base
            .iter()
            .zip(shift)
            .map(|((w, g), s)| (*w, Gaussian2::new(g.mean * k + s, g.cov)))
            .collect();
        let r0 = gaussian_barycenter(&base, opts).unwrap();
        let r1 = gaussian_barycenter(&moved, opts).unwrap();
        let shift_mean = shift.iter().zip(&w).fold(Vec2::ZERO, |acc, (s, w)| acc + *s * *w);
        let expect = r0.fused.mean * k + shift_mean;
        prop_assert!((r1.fused.mean - expect).norm() <= 1e-12 * (1.0 + expect.norm()) * 10.0);

        let permuted: Vec<(f64, Gaussian2)> = perm.iter().map(|&i| base[i]).collect();
        let rp = gaussian_barycenter(&permuted, opts).unwrap();
        prop_assert!((rp.fused.mean - r0.fused.mean).norm() <= 1e-12 * (1.0 + r0.fused.mean.norm()) * 10.0);
        prop_assert!(rp.fused.cov.max_abs_diff(&r0.fused.cov) <= 1e-9);
    }

    #[test]
    fn cvar_below_var_and_mean(values in prop::collection::vec(-10.0..10.0f64, 1..80), eps in 0.001..1.0f64) {
        let cvar = empirical_cvar(&values, eps);
        let var = empirical_var(&values, eps);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!(cvar <= var + 1e-12);
        prop_assert!(cvar <= mean + 1e-12);
    }

    #[test]
    fn ru_concave_and_maximized_at_cvar(values in prop::collection::vec(-10.0..10.0f64, 1..60), eps in 0.01..1.0f64) {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        let grid: Vec<f64> = (0..=400).map(|i| ru_function(&values, eps, lo + (hi - lo) * i as f64 / 400.0)).collect();
        for w in grid.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9);
        }

        // piecewise linear with kinks at the samples, so the max is at one of them
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let (best, arg) = sorted
            .iter()
            .map(|&g| (ru_function(&values, eps, g), g))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        let cvar = empirical_cvar(&values, eps);
        prop_assert!((best - cvar).abs() <= 1e-9, "{best} vs {cvar}");

        let var = empirical_var(&values, eps);
        let k = sorted.iter().position(|v| *v == var).unwrap();
        let gap = (sorted.get(k + 1).copied().unwrap_or(var) - var).max(var - sorted[k.saturating_sub(1)]);
        prop_assert!((arg - var).abs() <= gap + 1e-12);
    }

    #[test]
    fn barrier_is_translation_equivariant(zv in vec2(100.0), zo in vec2(100.0), t in vec2(1000.0)) {
        let p = BarrierParams::default();
        prop_assert!((barrier(zv + t, zo + t, &p) - barrier(zv, zo, &p)).abs() <= 1e-9);
    }
}

/// Scalar toy instance: `cbc_k(u) = c_k + g_k (u - 0)` acting on acceleration only.
fn scalar_set(consts: &[f64], grads: &[f64]) -> CbcSampleSet {
    let samples: Vec<CbcSample> = consts.iter().zip(grads).map(|(c, g)| CbcSample { const_term: *c, grad_u: [*g, 0.0] }).collect();
    let n = samples.len();
    CbcSampleSet { samples, i_count: n, j_count: 1, u_lin: ControlInput::ZERO }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn enlarging_samples_never_shrinks_feasible_set(
        pairs in prop::collection::vec((-3.0..1.0f64, -1.0..1.0f64), 1..10),
        delta in 1e-3..2.0f64,
        eps in 0.05..1.0f64,
    ) {
        let (consts, grads): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let set = scalar_set(&consts, &grads);
        let bigger = scalar_set(&consts.iter().map(|c| c + delta).collect::<Vec<_>>(), &grads);
        for i in 0..=300 {
            let u = ControlInput::new(-6.0 + 9.0 * i as f64 / 300.0, 0.0);
            if empirical_cvar(&set.values_at(u), eps) >= 0.0 {
                prop_assert!(empirical_cvar(&bigger.values_at(u), eps) >= 0.0);
            }
        }

        // the filter sees the same inclusion: a solvable instance stays
        // solvable and the minimal correction cannot grow
        let mut f = SafetyFilter::default();
        f.cbc.barrier.epsilon = eps;
        let u_nom = ControlInput::new(1.0, 0.0);
        let d0 = f.wb_cvar_on(u_nom, &set);
        let d1 = f.wb_cvar_on(u_nom, &bigger);
        if !d0.is_fallback() {
            prop_assert!(!d1.is_fallback());
            let cost = |u: ControlInput| (u.accel - u_nom.accel).abs();
            prop_assert!(cost(d1.u_safe) <= cost(d0.u_safe) + 1e-5);
        }
    }
}

fn admissible_state() -> impl Strategy<Value = VehicleState> {
    (vec2(100.0), -PI..PI, 0.0..20.0f64).prop_map(|(p, h, v)| VehicleState::new(p, wrap_angle(h), v))
}

fn admissible_input() -> impl Strategy<Value = ControlInput> {
    let b = InputBounds::default();
    (b.accel_min..=b.accel_max, b.steer_min..=b.steer_max).prop_map(|(a, s)| ControlInput::new(a, s))
}

/// Fourth-order five-point stencil.
fn reference_jacobian(m: &BicycleModel, s: &VehicleState, u: ControlInput, dt: f64) -> Mat2 {
    let h = 1e-3;
    let col = |da: f64, ds: f64| {
        let at = |k: f64| m.step(s, ControlInput::new(u.accel + k * da, u.steer + k * ds), dt).pos;
        (at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) * (1.0 / (12.0 * h))
    };
    Mat2::from_columns(col(h, 0.0), col(0.0, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn jacobian_matches_finite_differences(
        pos in vec2(100.0),
        heading in -PI..PI,
        speed in 0.5..15.0f64,
        accel in -3.0..3.0f64,
        steer in -0.5..0.5f64,
    ) {
        // speed stays positive over the period, away from the stop kink
        let m = BicycleModel::default();
        let s = VehicleState::new(pos, heading, speed);
        let u = ControlInput::new(accel, steer);
        let j = m.step_jacobian_u(&s, u, 0.1);
        let r = reference_jacobian(&m, &s, u, 0.1);
        let diff = Mat2::new(j.m00 - r.m00, j.m01 - r.m01, j.m10 - r.m10, j.m11 - r.m11);
        prop_assert!(diff.max_abs() <= 1e-4 * r.max_abs(), "{j:?} vs {r:?}");
    }

    #[test]
    fn step_keeps_speed_and_heading_valid(s in admissible_state(), u in admissible_input(), dt in 0.01..0.5f64) {
        let n = BicycleModel::default().step(&s, u, dt);
        prop_assert!(n.speed >= 0.0);
        prop_assert!(n.heading > -PI && n.heading <= PI);
        prop_assert!(n.pos.is_finite());
    }

    #[test]
    fn zero_steer_keeps_heading(s in admissible_state(), accel in -6.0..3.0f64) {
        let n = BicycleModel::default().step(&s, ControlInput::new(accel, 0.0), 0.1);
        prop_assert_eq!(n.heading, s.heading);
    }

    #[test]
    fn reported_covariance_is_the_model(std in prop::array::uniform3(0.0..2.0f64), bias in vec2(2.0), seed in any::<u64>()) {
        let suite = [
            SensorModel::new(SensorKind::Lidar, Vec2::ZERO, std[0], 0.4),
            SensorModel::new(SensorKind::Camera, Vec2::ZERO, std[1], 0.4),
            SensorModel::new(SensorKind::V2x, bias, std[2], 0.2),
        ];
        let mut rngs: Vec<RngStream> = (1..=3).map(|k| RngStream::new(seed, k)).collect();
        let truth = ObstacleState { pos: Vec2::new(3.0, -1.0), vel: Vec2::ZERO };
        let meas = measure_obstacle(&truth, &suite, &mut rngs).unwrap();
        for ((kind, g), sensor) in meas.iter().zip(&suite) {
            prop_assert_eq!(*kind, sensor.kind);
            prop_assert_eq!(g.cov, SpdMat2::isotropic(sensor.std * sensor.std));
        }
    }
}

#[test]
fn sensor_draws_match_configured_spread() {
    let bias = Vec2::new(1.5, -0.5);
    let std = 0.7;
    let suite = [
        SensorModel::new(SensorKind::Lidar, Vec2::ZERO, 0.1, 0.4),
        SensorModel::new(SensorKind::Camera, Vec2::ZERO, 0.2, 0.4),
        SensorModel::new(SensorKind::V2x, bias, std, 0.2),
    ];
    let mut rngs: Vec<RngStream> = (1..=3).map(|k| RngStream::new(99, k)).collect();
    let truth = ObstacleState { pos: Vec2::new(-4.0, 2.0), vel: Vec2::ZERO };
    let n = 10_000;
    let pts: Vec<Vec2> = (0..n).map(|_| measure_obstacle(&truth, &suite, &mut rngs).unwrap()[2].1.mean).collect();
    let mean = pts.iter().fold(Vec2::ZERO, |a, p| a + *p) * (1.0 / n as f64);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let d = *p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let var = std * std;
    let k = 1.0 / (n - 1) as f64;
    assert!((sxx * k / var - 1.0).abs() <= 0.05);
    assert!((syy * k / var - 1.0).abs() <= 0.05);
    assert!((sxy * k).abs() <= 0.05 * var);
    // bias moves the mean and nothing else
    assert!((mean - (truth.pos + bias)).norm() <= 4.0 * std / (n as f64).sqrt() * 2.0);
}

#[test]
fn barycenter_is_a_local_minimum() {
    let mut rng = RngStream::new(2024, 0);
    let mut u = move |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    for _ in 0..200 {
        let mut inputs = Vec::new();
        let mut w = [u(0.05, 1.0), u(0.05, 1.0), u(0.05, 1.0)];
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        for wk in w {
            let (l00, l10, l11) = (u(0.1, 1.5), u(-1.0, 1.0), u(0.1, 1.5));
            let cov = SpdMat2::new(l00 * l00, l00 * l10, l10 * l10 + l11 * l11);
            inputs.push((wk, Gaussian2::new(Vec2::new(u(-5.0, 5.0), u(-5.0, 5.0)), cov)));
        }
        let r = gaussian_barycenter(&inputs, BarycenterOptions::default()).unwrap();
        let best = w2_sq_sum(&r.fused.cov, r.fused.mean, &inputs);
        let scale = 0.05 * r.fused.cov.trace();
        for _ in 0..50 {
            let e = SpdMat2::new(u(-scale, scale), u(-scale, scale), u(-scale, scale));
            let cov = r.fused.cov + e;
            if !cov.is_psd() {
                continue;
            }
            let mean = r.fused.mean + Vec2::new(u(-0.1, 0.1), u(-0.1, 0.1));
            assert!(best <= w2_sq_sum(&cov, mean, &inputs) + 1e-12);
        }
    }
}

#[test]
fn var_can_exceed_mean_for_heavy_lower_tails() {
    // the lower tail ordering only guarantees CVaR below both
    let v = [-100.0, 0.0, 0.0, 0.0, 0.0];
    assert!(empirical_var(&v, 0.5) > v.iter().sum::<f64>() / 5.0);
    assert!(empirical_cvar(&v, 0.5) <= empirical_var(&v, 0.5));
}

/// Random strictly convex QP with a known feasible point.
fn random_qp(rng: &mut RngStream) -> QpProblem {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    let n = 2 + (u(0.0, 7.0) as usize);
    let m = u(0.0, 12.0) as usize;
    let l = DMatrix::from_fn(n, n, |_, _| u(-1.0, 1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| u(-5.0, 5.0));
    let x0 = DVector::from_fn(n, |_, _| u(-1.0, 1.0));
    let a = DMatrix::from_fn(m, n, |_, _| u(-1.0, 1.0));
    let b = &a * &x0 - DVector::from_fn(m, |_, _| u(0.0, 0.5));
    let lb = DVector::from_fn(n, |i, _| if i % 2 == 0 { x0[i] - u(0.1, 1.0) } else { f64::NEG_INFINITY });
    let ub = DVector::from_fn(n, |i, _| if i % 3 == 0 { x0[i] + u(0.1, 1.0) } else { f64::INFINITY });
    QpProblem { h, f, a, b, lb, ub }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn qp_optimal_points_satisfy_kkt(seed in any::<u64>()) {
        let p = random_qp(&mut RngStream::new(seed, 0));
        let settings = QpSettings::default();
        let sol = solve_qp(&p, &settings);
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.kkt.max() <= settings.tol);
        prop_assert!(p.max_violation(&sol.x) <= settings.tol);
        prop_assert!(sol.row_duals.iter().all(|y| *y >= -settings.tol));
    }

    #[test]
    fn qp_argmin_is_scale_invariant(seed in any::<u64>(), c in 0.01..100.0f64) {
        let p = random_qp(&mut RngStream::new(seed, 0));
        let settings = QpSettings::default();
        let scaled = QpProblem { h: &p.h * c, f: &p.f * c, ..p.clone() };
        let x0 = solve_qp(&p, &settings).x;
        let x1 = solve_qp(&scaled, &settings).x;
        prop_assert!((&x0 - &x1).amax() <= 1e-8, "{}", (&x0 - &x1).amax());
    }

    #[test]
    fn qp_warm_start_is_consistent(seed in any::<u64>()) {
        let p = random_qp(&mut RngStream::new(seed, 0));
        let settings = QpSettings::default();
        let cold = solve_qp(&p, &settings);
        let warm = solve_qp_warm(&p, &settings, &cold);
        prop_assert_eq!(warm.status, QpStatus::Optimal);
        prop_assert!(warm.iterations <= 5);
        prop_assert!((&warm.x - &cold.x).amax() <= settings.tol);
    }
}
