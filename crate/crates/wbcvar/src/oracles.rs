//! Independent reference computations for the solver and risk code.
//!
//! Each oracle draws its random instances from a fixed seed, so a report is
//! reproducible. Residuals are normalized so that `max_residual <= 1` means
//! every case met its tolerance.

use wbcvar_core::nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use wbcvar_core::control::SafetyFilter;
use wbcvar_core::dynamics::ControlInput;
use wbcvar_core::geom::{Gaussian2, Mat2, SpdMat2, Vec2};
use wbcvar_core::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use wbcvar_core::risk::{empirical_cvar, empirical_var, ru_function, CbcSample, CbcSampleSet};
use wbcvar_core::rng::RngStream;
use wbcvar_core::wasserstein::{fixed_point_defect, gaussian_barycenter, BarycenterOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest raw residual seen.
    pub max_residual: f64,
    /// Tolerance the raw residual is compared against.
    pub tolerance: String,
    pub note: Option<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<28} cases={:<5} failures={:<3} max_residual={:.3e} tol={}{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.failures,
            self.max_residual,
            self.tolerance,
            self.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
        )
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

fn index(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize
}

fn random_weights(rng: &mut RngStream, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.05, 1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| r / sum).collect();
    // exact unit sum for the barycenter's weight check
    let rest: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - rest;
    w
}

fn rotated(angle: f64, a: f64, d: f64) -> SpdMat2 {
    let r = Mat2::rotation(angle);
    let c0 = r.column(0);
    let c1 = r.column(1);
    SpdMat2::checked(
        a * c0.x * c0.x + d * c1.x * c1.x,
        a * c0.x * c0.y + d * c1.x * c1.y,
        a * c0.y * c0.y + d * c1.y * c1.y,
    )
    .expect("positive eigenvalues")
}

/// Commuting inputs `R diag(a_s, d_s) R'` have the closed-form barycenter
/// `R diag((sum w sqrt a)^2, (sum w sqrt d)^2) R'`. The first case is the
/// nominal three-sensor suite, whose fused standard deviation is 0.32 m.
pub fn barycenter_commuting(cases: usize, seed: u64) -> OracleReport {
    let mut rng = RngStream::new(seed, 101);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let tol = 1e-9;
    for k in 0..cases {
        let (weights, stds, angle, aniso): (Vec<f64>, Vec<f64>, f64, Vec<f64>) = if k == 0 {
            (vec![0.4, 0.4, 0.2], vec![0.1, 0.2, 1.0], 0.0, vec![1.0; 3])
        } else {
            let m = index(&mut rng, 1, 5);
            let w = random_weights(&mut rng, m);
            let s = (0..m).map(|_| uniform(&mut rng, 0.01, 3.0)).collect();
            let r = (0..m).map(|_| uniform(&mut rng, 0.2, 5.0)).collect();
            (w, s, uniform(&mut rng, -3.0, 3.0), r)
        };
        let inputs: Vec<(f64, Gaussian2)> = weights
            .iter()
            .zip(&stds)
            .zip(&aniso)
            .map(|((w, s), r)| {
                let cov = rotated(angle, s * s, s * s * r);
                (*w, Gaussian2::new(Vec2::new(normal(&mut rng), normal(&mut rng)), cov))
            })
            .collect();
        let sa: f64 = weights.iter().zip(&stds).map(|(w, s)| w * s).sum();
        let sd: f64 = weights.iter().zip(&stds).zip(&aniso).map(|((w, s), r)| w * s * r.sqrt()).sum();
        let expected = rotated(angle, sa * sa, sd * sd);
        let residual = match gaussian_barycenter(&inputs, BarycenterOptions::default()) {
            Ok(r) => {
                let mut e = r.fused.cov.max_abs_diff(&expected);
                if k == 0 {
                    e = e.max((r.fused.cov.a.sqrt() - 0.32).abs()).max((r.fused.cov.d.sqrt() - 0.32).abs());
                }
                e
            }
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(residual);
        if !(residual <= tol) {
            failures += 1;
        }
    }
    OracleReport {
        name: "barycenter commuting",
        cases,
        failures,
        max_residual: worst,
        tolerance: format!("{tol:e}"),
        note: None,
    }
}

/// Fixed-point defect of the computed barycenter of random SPD triples.
pub fn barycenter_fixed_point(cases: usize, seed: u64) -> OracleReport {
    let mut rng = RngStream::new(seed, 102);
    let tol = 1e-10;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..cases {
        let w = random_weights(&mut rng, 3);
        let inputs: Vec<(f64, Gaussian2)> = w
            .iter()
            .map(|w| {
                let cov = rotated(uniform(&mut rng, -3.2, 3.2), uniform(&mut rng, 1e-3, 4.0), uniform(&mut rng, 1e-3, 4.0));
                (*w, Gaussian2::new(Vec2::ZERO, cov))
            })
            .collect();
        let covs: Vec<(f64, SpdMat2)> = inputs.iter().map(|(w, g)| (*w, g.cov)).collect();
        let defect = gaussian_barycenter(&inputs, BarycenterOptions::default())
            .and_then(|r| fixed_point_defect(&r.fused.cov, &covs))
            .unwrap_or(f64::INFINITY);
        worst = worst.max(defect);
        if !(defect <= tol) {
            failures += 1;
        }
    }
    OracleReport {
        name: "barycenter fixed point",
        cases,
        failures,
        max_residual: worst,
        tolerance: format!("{tol:e}"),
        note: None,
    }
}

pub type RuFn = fn(&[f64], f64, f64) -> f64;
pub type CvarFn = fn(&[f64], f64) -> f64;

/// The hinge of the auxiliary function with its sign flipped; used to check
/// that the CVaR oracle notices a broken implementation.
pub fn ru_function_flipped(values: &[f64], epsilon: f64, gamma: f64) -> f64 {
    let hinge: f64 = values.iter().map(|v| (v - gamma).max(0.0)).sum();
    gamma - hinge / (values.len() as f64 * epsilon)
}

/// Max of `ru` over a 10^4-point grid on `[min, max]` against `cvar`, plus
/// the ordering `CVaR <= VaR <= mean`. The residual is the gap measured in
/// units of the worst-case grid error `step * max(1, 1/eps - 1)`.
pub fn cvar_grid(cases: usize, seed: u64, ru: RuFn, cvar: CvarFn) -> OracleReport {
    const GRID: usize = 10_000;
    let mut rng = RngStream::new(seed, 103);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut order_failures = 0;
    for _ in 0..cases {
        let n = index(&mut rng, 1, 200);
        let eps = uniform(&mut rng, 0.01, 0.2);
        let mu = uniform(&mut rng, -5.0, 5.0);
        let sigma = uniform(&mut rng, 0.01, 3.0);
        let values: Vec<f64> = (0..n).map(|_| mu + sigma * normal(&mut rng)).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (GRID - 1) as f64;
        let grid_max = (0..GRID)
            .map(|k| ru(&values, eps, if k == GRID - 1 { hi } else { lo + step * k as f64 }))
            .fold(f64::NEG_INFINITY, f64::max);
        let c = cvar(&values, eps);
        let slack = 1e-12 * (1.0 + c.abs());
        let bound = step * 1f64.max(1.0 / eps - 1.0) + slack;
        let gap = c - grid_max;
        let residual = if gap < -slack { f64::INFINITY } else { gap.max(0.0) / bound };
        worst = worst.max(residual);
        if !(residual <= 1.0) {
            failures += 1;
        }
        let var = empirical_var(&values, eps);
        let mean = values.iter().sum::<f64>() / n as f64;
        if !(c <= var + slack && var <= mean + slack) {
            order_failures += 1;
        }
    }
    OracleReport {
        name: "cvar grid",
        cases,
        failures: failures + order_failures,
        max_residual: worst,
        tolerance: "1 grid-error bound".into(),
        note: (order_failures > 0).then(|| format!("{order_failures} ordering violations")),
    }
}

/// Runs the CVaR oracle against the flipped hinge; the report passes when
/// the oracle rejects the mutant.
pub fn cvar_mutation(cases: usize, seed: u64) -> OracleReport {
    let r = cvar_grid(cases, seed, ru_function_flipped, empirical_cvar);
    OracleReport {
        name: "cvar mutation detected",
        cases,
        failures: if r.failures > 0 { 0 } else { 1 },
        max_residual: r.max_residual,
        tolerance: "oracle must fail".into(),
        note: Some(format!("{} of {} mutant cases rejected", r.failures, cases)),
    }
}

/// Default CVaR oracle against the library functions.
pub fn cvar_grid_default(cases: usize, seed: u64) -> OracleReport {
    cvar_grid(cases, seed, ru_function, empirical_cvar)
}

/// Random strictly feasible, strictly convex QP with `n <= 12` variables and
/// `m <= 30` general rows; some variables carry box bounds.
pub fn random_qp(rng: &mut RngStream) -> QpProblem {
    let n = index(rng, 1, 12);
    let m = index(rng, 1, 30);
    let r = index(rng, 1, n);
    let mm = DMatrix::from_fn(r, n, |_, _| normal(rng));
    let h = mm.transpose() * &mm / n as f64 + DMatrix::identity(n, n) * 1e-2;
    let xf = DVector::from_fn(n, |_, _| uniform(rng, -2.0, 2.0));
    let a = DMatrix::from_fn(m, n, |_, _| normal(rng));
    let b = &a * &xf - DVector::from_fn(m, |_, _| uniform(rng, 0.05, 1.0));
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    for j in 0..n {
        if rng.next_f64() < 0.3 {
            lb[j] = xf[j] - uniform(rng, 0.2, 2.0);
            ub[j] = xf[j] + uniform(rng, 0.2, 2.0);
        }
    }
    let dir = DVector::from_fn(n, |_, _| normal(rng));
    let dir = &dir / dir.norm().max(1e-12);
    let target = &xf + dir * uniform(rng, 0.0, 2.5);
    let f = -(&h * target);
    QpProblem { h, f, a, b, lb, ub }
}

/// Exact optimum by active-set enumeration: all rows (general and bound) are
/// written as `g x >= c`, and the equality-constrained KKT system of every
/// candidate active set is solved in order of increasing size. With a
/// positive definite Hessian the first candidate that is primal feasible
/// with nonnegative multipliers is the unique optimum. Returns `None` when
/// `budget` candidate sets are exhausted first.
pub fn active_set_optimum(p: &QpProblem, budget: usize) -> Option<DVector<f64>> {
    let n = p.n_vars();
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut c: Vec<f64> = Vec::new();
    for i in 0..p.n_rows() {
        g_rows.push(p.a.row(i).transpose());
        c.push(p.b[i]);
    }
    for j in 0..n {
        if p.lb[j].is_finite() {
            g_rows.push(DVector::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 }));
            c.push(p.lb[j]);
        }
        if p.ub[j].is_finite() {
            g_rows.push(DVector::from_fn(n, |k, _| if k == j { -1.0 } else { 0.0 }));
            c.push(-p.ub[j]);
        }
    }
    let m = g_rows.len();
    let feas_tol = 1e-9;
    let mut tried = 0;
    for k in 0..=m.min(n) {
        let mut set: Vec<usize> = (0..k).collect();
        loop {
            tried += 1;
            if tried > budget {
                return None;
            }
            let dim = n + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&p.f));
            for (r, &i) in set.iter().enumerate() {
                for j in 0..n {
                    kkt[(j, n + r)] = -g_rows[i][j];
                    kkt[(n + r, j)] = g_rows[i][j];
                }
                rhs[n + r] = c[i];
            }
            let lu = kkt.lu();
            if lu.determinant().abs() > 1e-12 {
                if let Some(sol) = lu.solve(&rhs) {
                    let x = sol.rows(0, n).into_owned();
                    let duals_ok = (0..k).all(|r| sol[n + r] >= -feas_tol);
                    let primal_ok = (0..m).all(|i| g_rows[i].dot(&x) >= c[i] - feas_tol);
                    if duals_ok && primal_ok {
                        return Some(x);
                    }
                }
            }
            // next k-combination of 0..m
            let mut pos = k;
            while pos > 0 && set[pos - 1] == m - k + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            set[pos - 1] += 1;
            for q in pos..k {
                set[q] = set[q - 1] + 1;
            }
        }
    }
    None
}

/// Solver objective against the enumeration oracle on random QPs; every
/// solve must also be optimal with KKT residuals within the solver tolerance.
pub fn qp_active_set(cases: usize, seed: u64) -> OracleReport {
    let mut rng = RngStream::new(seed, 104);
    let settings = QpSettings::default();
    let tol = 1e-5;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut done = 0;
    let mut skipped = 0;
    while done < cases {
        let p = random_qp(&mut rng);
        let Some(x_ref) = active_set_optimum(&p, 300_000) else {
            skipped += 1;
            continue;
        };
        done += 1;
        let sol = solve_qp(&p, &settings);
        let gap = (p.objective(&sol.x) - p.objective(&x_ref)).abs();
        let ok = sol.status == QpStatus::Optimal && sol.kkt.max() <= settings.tol && gap <= tol;
        worst = worst.max(gap);
        if !ok {
            failures += 1;
        }
    }
    OracleReport {
        name: "qp active-set enumeration",
        cases,
        failures,
        max_residual: worst,
        tolerance: format!("{tol:e}"),
        note: (skipped > 0).then(|| format!("{skipped} instances over the enumeration budget redrawn")),
    }
}

/// Lower-tail CVaR of `values`, taken as the best value of the auxiliary
/// function over its breakpoints.
fn cvar_by_breakpoints(values: &[f64], eps: f64) -> f64 {
    let scale = 1.0 / (values.len() as f64 * eps);
    values
        .iter()
        .map(|&g| g - scale * values.iter().map(|v| (g - v).max(0.0)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Half-planes `a . u >= b` whose intersection is `{u : CVaR(u) >= 0}`.
///
/// The lower-tail CVaR is the minimum of `sum w_i cbc_i(u) / (N eps)` over
/// tail weights `w in [0, 1]^N` with `sum w = N eps`; the minimum is reached
/// at a vertex (`floor(N eps)` unit weights plus one fractional weight), and
/// each vertex contributes one affine constraint.
pub fn cvar_half_planes(set: &CbcSampleSet, eps: f64) -> Vec<([f64; 2], f64)> {
    let n = set.len();
    let mut t = n as f64 * eps.min(1.0);
    if (t - t.round()).abs() <= 1e-9 * t.max(1.0) {
        t = t.round();
    }
    let k = (t.floor() as usize).min(n);
    let frac = t - k as f64;
    let u0 = set.u_lin;
    let affine = |i: usize| {
        let s = set.samples[i];
        (s.grad_u, s.const_term - s.grad_u[0] * u0.accel - s.grad_u[1] * u0.steer)
    };
    let mut planes = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let mut a = [0.0; 2];
        let mut c = 0.0;
        for &i in &subset {
            let (g, c0) = affine(i);
            a = [a[0] + g[0], a[1] + g[1]];
            c += c0;
        }
        if frac > 0.0 {
            for j in (0..n).filter(|j| !subset.contains(j)) {
                let (g, c0) = affine(j);
                planes.push(([a[0] + frac * g[0], a[1] + frac * g[1]], -(c + frac * c0)));
            }
        } else {
            planes.push((a, -c));
        }
        let mut pos = k;
        while pos > 0 && subset[pos - 1] == n - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        subset[pos - 1] += 1;
        for q in pos..k {
            subset[q] = subset[q - 1] + 1;
        }
    }
    planes
}

/// Exact closest point to `u_nom` in the box with nonnegative sampled CVaR,
/// by enumerating the candidates of a projection onto a polygon: `u_nom`
/// itself, its projection onto every edge line, and every pairwise line
/// intersection. `None` when the polygon is empty.
pub fn exact_cvar_projection(set: &CbcSampleSet, eps: f64, u_nom: ControlInput, lo: [f64; 2], hi: [f64; 2]) -> Option<ControlInput> {
    let mut planes = cvar_half_planes(set, eps);
    planes.push(([1.0, 0.0], lo[0]));
    planes.push(([-1.0, 0.0], -hi[0]));
    planes.push(([0.0, 1.0], lo[1]));
    planes.push(([0.0, -1.0], -hi[1]));
    let feasible = |u: [f64; 2]| {
        planes.iter().all(|(a, b)| a[0] * u[0] + a[1] * u[1] >= b - 1e-9 * (1.0 + b.abs()))
    };
    let target = [u_nom.accel, u_nom.steer];
    let cost = |u: [f64; 2]| (u[0] - target[0]).powi(2) + (u[1] - target[1]).powi(2);
    let mut best: Option<[f64; 2]> = None;
    let mut offer = |u: [f64; 2]| {
        if feasible(u) && best.map_or(true, |b| cost(u) < cost(b)) {
            best = Some(u);
        }
    };
    offer(target);
    let lines: Vec<&([f64; 2], f64)> = planes.iter().filter(|(a, _)| a[0].hypot(a[1]) > 1e-12).collect();
    for (a, b) in &lines {
        let nn = a[0] * a[0] + a[1] * a[1];
        let r = (b - a[0] * target[0] - a[1] * target[1]) / nn;
        offer([target[0] + r * a[0], target[1] + r * a[1]]);
    }
    for (i, (a1, b1)) in lines.iter().enumerate() {
        for (a2, b2) in &lines[i + 1..] {
            let det = a1[0] * a2[1] - a1[1] * a2[0];
            if det.abs() > 1e-12 {
                offer([(b1 * a2[1] - b2 * a1[1]) / det, (a1[0] * b2 - a2[0] * b1) / det]);
            }
        }
    }
    best.map(|u| ControlInput::new(u[0], u[1]))
}

/// Lowest-cost point of a `pts x pts` grid over the box with nonnegative
/// sampled CVaR, where CVaR is the best value of the auxiliary function over
/// its breakpoints.
pub fn grid_cvar_projection(set: &CbcSampleSet, eps: f64, u_nom: ControlInput, lo: [f64; 2], hi: [f64; 2], pts: usize) -> Option<(f64, ControlInput)> {
    let mut best: Option<(f64, ControlInput)> = None;
    for i in 0..pts {
        for j in 0..pts {
            let u = ControlInput::new(
                lo[0] + (hi[0] - lo[0]) * i as f64 / (pts - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (pts - 1) as f64,
            );
            if cvar_by_breakpoints(&set.values_at(u), eps) >= 0.0 {
                let c = (u.accel - u_nom.accel).powi(2) + (u.steer - u_nom.steer).powi(2);
                if best.map_or(true, |(b, _)| c < b) {
                    best = Some((c, u));
                }
            }
        }
    }
    best
}

/// Random CBC sample set with `N <= 8`; in scalar instances only the
/// acceleration enters the constraint.
pub fn random_cbc_instance(rng: &mut RngStream, scalar: bool) -> (CbcSampleSet, f64, ControlInput) {
    let n = index(rng, 1, 8);
    let eps = uniform(rng, 0.05, 1.0);
    let u_lin = ControlInput::new(uniform(rng, -4.0, 2.0), uniform(rng, -0.3, 0.3));
    let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
    let samples = (0..n)
        .map(|_| CbcSample {
            const_term: uniform(rng, -1.0, 0.5),
            grad_u: [
                sign * uniform(rng, 0.05, 1.0),
                if scalar { 0.0 } else { uniform(rng, -1.0, 1.0) },
            ],
        })
        .collect();
    (CbcSampleSet { samples, i_count: 1, j_count: n, u_lin }, eps, u_lin)
}

/// The epigraph QP of the CVaR filter against the exact projection onto the
/// un-reformulated CVaR constraint; half the instances are scalar. A grid
/// search over the box must never find a feasible point cheaper than the
/// exact answer, and infeasible instances must make the filter fall back.
pub fn epigraph_brute_force(cases: usize, seed: u64) -> OracleReport {
    let mut rng = RngStream::new(seed, 105);
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut done = 0;
    let mut infeasible = 0;
    while done < cases {
        let scalar = done % 2 == 0;
        let (set, eps, u_nom) = random_cbc_instance(&mut rng, scalar);
        let mut filter = SafetyFilter::default();
        filter.cbc.barrier.epsilon = eps;
        let (lo, hi) = (filter.bounds.lower(), filter.bounds.upper());
        let d = filter.wb_cvar_on(u_nom, &set);
        let Some(u_ref) = exact_cvar_projection(&set, eps, u_nom, lo, hi) else {
            infeasible += 1;
            if !d.is_fallback() {
                failures += 1;
            }
            continue;
        };
        done += 1;
        let cost = |u: ControlInput| (u.accel - u_nom.accel).powi(2) + (u.steer - u_nom.steer).powi(2);
        let grid_beats_ref = grid_cvar_projection(&set, eps, u_nom, lo, hi, 301)
            .is_some_and(|(c, _)| c < cost(u_ref) - 1e-9);
        let err = if d.is_fallback() {
            f64::INFINITY
        } else {
            (d.u_safe.accel - u_ref.accel).abs().max((d.u_safe.steer - u_ref.steer).abs())
        };
        worst = worst.max(err);
        if !(err <= tol) || grid_beats_ref {
            failures += 1;
        }
    }
    OracleReport {
        name: "epigraph brute force",
        cases,
        failures,
        max_residual: worst,
        tolerance: format!("{tol:e}"),
        note: (infeasible > 0).then(|| format!("plus {infeasible} infeasible instances checked for fallback")),
    }
}

/// Every oracle with the case counts used by `selftest`.
pub fn all(seed: u64) -> Vec<OracleReport> {
    vec![
        barycenter_commuting(1000, seed),
        barycenter_fixed_point(1000, seed),
        cvar_grid_default(500, seed),
        cvar_mutation(500, seed),
        qp_active_set(100, seed),
        epigraph_brute_force(100, seed),
    ]
}
