//! Dense convex QP solver.
//!
//! Solves `min 1/2 x'Hx + f'x  s.t.  A x >= b,  lb <= x <= ub` with an
//! operator-splitting (ADMM) iteration: over-relaxed alternating projections
//! on the stacked constraint set, adaptive step size, and an infeasibility
//! certificate taken from the dual iterates. Once the iterates settle, the
//! guessed active set is polished by solving its KKT system, which usually
//! brings all residuals down to round-off.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD cost matrix, n x n.
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    /// Inequality rows with sense `a x >= b`, m x n.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Variable bounds; infinite entries are allowed.
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with `n` free variables.
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.f.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn dims_consistent(&self) -> bool {
        let n = self.n_vars();
        self.h.nrows() == n
            && self.h.ncols() == n
            && self.a.ncols() == n
            && self.a.nrows() == self.b.len()
            && self.lb.len() == n
            && self.ub.len() == n
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        let ax = &self.a * x;
        for i in 0..self.n_rows() {
            v = v.max(self.b[i] - ax[i]);
        }
        for j in 0..self.n_vars() {
            v = v.max(self.lb[j] - x[j]).max(x[j] - self.ub[j]);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Infinity-norm KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    /// Multipliers of the `a x >= b` rows (nonnegative at optimality).
    pub row_duals: DVector<f64>,
    /// Bound multipliers: positive when the upper bound binds, negative for the lower.
    pub bound_duals: DVector<f64>,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Absolute tolerance on every KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub check_every: usize,
    pub polish: bool,
    pub adaptive_rho: bool,
    /// Tolerance of the primal infeasibility certificate.
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_every: 5,
            polish: true,
            adaptive_rho: true,
            infeasibility_tol: 1e-5,
        }
    }
}

/// Sparse row-major copy of the stacked constraint matrix `C = [A; I_bounded]`
/// with two-sided limits `l <= C x <= u`.
#[derive(Clone)]
struct Stacked {
    rows: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Variable index of each bound row; `None` for rows of `A`.
    bound_var: Vec<Option<usize>>,
    n: usize,
}

impl Stacked {
    fn new(p: &QpProblem) -> Self {
        let n = p.n_vars();
        let mut rows = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut bound_var = Vec::new();
        for i in 0..p.n_rows() {
            let row: Vec<(usize, f64)> = (0..n).filter(|&j| p.a[(i, j)] != 0.0).map(|j| (j, p.a[(i, j)])).collect();
            rows.push(row);
            lo.push(p.b[i]);
            hi.push(f64::INFINITY);
            bound_var.push(None);
        }
        for j in 0..n {
            if p.lb[j].is_finite() || p.ub[j].is_finite() {
                rows.push(alloc::vec![(j, 1.0)]);
                lo.push(p.lb[j]);
                hi.push(p.ub[j]);
                bound_var.push(Some(j));
            }
        }
        Self { rows, lo, hi, bound_var, n }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum::<f64>()))
    }

    fn mul_t(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (i, r) in self.rows.iter().enumerate() {
            if y[i] != 0.0 {
                for &(j, v) in r {
                    out[j] += v * y[i];
                }
            }
        }
        out
    }

    fn is_equality(&self, i: usize) -> bool {
        self.lo[i] == self.hi[i]
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Clips duals that push against an infinite limit.
fn project_duals(c: &Stacked, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        c.m(),
        (0..c.m()).map(|i| {
            let mut v = y[i];
            if c.hi[i] == f64::INFINITY {
                v = v.min(0.0);
            }
            if c.lo[i] == f64::NEG_INFINITY {
                v = v.max(0.0);
            }
            v
        }),
    )
}

fn kkt_residuals(p: &QpProblem, c: &Stacked, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let y = project_duals(c, y);
    let stationarity = inf_norm(&(&p.h * x + &p.f + c.mul_t(&y)));
    let cx = c.mul(x);
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..c.m() {
        primal = primal.max(c.lo[i] - cx[i]).max(cx[i] - c.hi[i]);
        if c.is_equality(i) {
            continue;
        }
        if c.lo[i].is_finite() {
            complementarity = complementarity.max(y[i].min(0.0).abs() * (cx[i] - c.lo[i]).abs());
        }
        if c.hi[i].is_finite() {
            complementarity = complementarity.max(y[i].max(0.0) * (c.hi[i] - cx[i]).abs());
        }
    }
    KktResiduals { stationarity, primal, complementarity }
}

const RUIZ_PASSES: usize = 15;
/// Iterations between attempts to polish a changed active-set guess.
const POLISH_EVERY: usize = 25;

fn ruiz_factor(norm: f64) -> f64 {
    if norm < 1e-4 {
        1.0
    } else {
        1.0 / libm::sqrt(norm.min(1e4))
    }
}

/// Equilibration `x = D x_s`, rows scaled by `E`, cost scaled by `cost`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

/// Ruiz equilibration of the KKT matrix `[H C'; C 0]` followed by a cost
/// scaling. Returns the scaling with the scaled `H`, `f` and `C`.
fn equilibrate(p: &QpProblem, c: &Stacked) -> (Scaling, DMatrix<f64>, DVector<f64>, Stacked) {
    let n = c.n;
    let m = c.m();
    let mut h = p.h.clone();
    let mut cs = c.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    for _ in 0..RUIZ_PASSES {
        let mut col: Vec<f64> = (0..n).map(|j| h.column(j).amax()).collect();
        let mut row = alloc::vec![0.0f64; m];
        for (i, r) in cs.rows.iter().enumerate() {
            for &(j, v) in r {
                col[j] = col[j].max(v.abs());
                row[i] = row[i].max(v.abs());
            }
        }
        let dj: Vec<f64> = col.iter().map(|v| ruiz_factor(*v)).collect();
        let ei: Vec<f64> = row.iter().map(|v| ruiz_factor(*v)).collect();
        for a in 0..n {
            for b in 0..n {
                h[(a, b)] *= dj[a] * dj[b];
            }
            d[a] *= dj[a];
        }
        for (i, r) in cs.rows.iter_mut().enumerate() {
            for (j, v) in r.iter_mut() {
                *v *= ei[i] * dj[*j];
            }
            e[i] *= ei[i];
        }
    }
    let mut f = p.f.component_mul(&d);
    let mean_col = if n > 0 { (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64 } else { 0.0 };
    let scale_ref = mean_col.max(inf_norm(&f));
    let cost = if scale_ref < 1e-4 { 1.0 } else { 1.0 / scale_ref.min(1e4) };
    h *= cost;
    f *= cost;
    for i in 0..m {
        cs.lo[i] *= e[i];
        cs.hi[i] *= e[i];
    }
    (Scaling { d, e, cost }, h, f, cs)
}

struct Admm<'a> {
    p: &'a QpProblem,
    /// Constraints in the original units.
    orig: Stacked,
    /// Scaled problem data.
    c: Stacked,
    h: DMatrix<f64>,
    f: DVector<f64>,
    scaling: Scaling,
    s: QpSettings,
    rho: DVector<f64>,
    rho_base: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl<'a> Admm<'a> {
    fn new(p: &'a QpProblem, s: QpSettings) -> Self {
        let orig = Stacked::new(p);
        let (scaling, h, f, c) = equilibrate(p, &orig);
        let mut me = Self { p, orig, c, h, f, scaling, s, rho: DVector::zeros(0), rho_base: s.rho, factor: None };
        me.set_rho(s.rho);
        me
    }

    fn unscale(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (x.component_mul(&self.scaling.d), y.component_mul(&self.scaling.e) / self.scaling.cost)
    }

    fn scale(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (x.component_div(&self.scaling.d), y.component_div(&self.scaling.e) * self.scaling.cost)
    }

    fn residuals(&self, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
        let (xo, yo) = self.unscale(x, y);
        kkt_residuals(self.p, &self.orig, &xo, &yo)
    }

    fn set_rho(&mut self, rho: f64) {
        self.rho_base = rho.clamp(1e-6, 1e6);
        let c = &self.c;
        self.rho = DVector::from_iterator(
            c.m(),
            (0..c.m()).map(|i| if c.is_equality(i) { 1e3 * self.rho_base } else { self.rho_base }),
        );
        let n = self.c.n;
        let mut k = self.h.clone();
        for j in 0..n {
            k[(j, j)] += self.s.sigma;
        }
        for (i, r) in self.c.rows.iter().enumerate() {
            let w = self.rho[i];
            for &(j1, v1) in r {
                for &(j2, v2) in r {
                    k[(j1, j2)] += w * v1 * v2;
                }
            }
        }
        self.factor = Cholesky::new(k);
    }

    fn solve(&mut self, x0: Option<&DVector<f64>>, y0: Option<&DVector<f64>>) -> QpSolution {
        let n = self.c.n;
        let m = self.c.m();
        let (mut x, mut y) = match (x0, y0) {
            (Some(x0), Some(y0)) => self.scale(x0, y0),
            _ => (DVector::zeros(n), DVector::zeros(m)),
        };
        let clamp = |c: &Stacked, v: &DVector<f64>| {
            DVector::from_iterator(c.m(), (0..c.m()).map(|i| v[i].clamp(c.lo[i], c.hi[i])))
        };
        let mut z = clamp(&self.c, &self.c.mul(&x));

        if x0.is_some() {
            let kkt = self.residuals(&x, &y);
            if kkt.max() <= self.s.tol {
                return self.finish(x, y, QpStatus::Optimal, kkt, 0, false);
            }
        }

        let mut best = (f64::INFINITY, x.clone(), y.clone());
        let mut last_polish_set: Option<Vec<i8>> = None;
        for iter in 1..=self.s.max_iter {
            let Some(factor) = self.factor.as_ref() else {
                // H + sigma I + C' R C is positive definite for sigma > 0; only
                // non-finite data ends up here.
                break;
            };
            let rz = DVector::from_iterator(m, (0..m).map(|i| self.rho[i] * z[i] - y[i]));
            let rhs = &x * self.s.sigma - &self.f + self.c.mul_t(&rz);
            let x_tilde = factor.solve(&rhs);
            let z_tilde = self.c.mul(&x_tilde);
            let a = self.s.alpha;
            let x_new = &x_tilde * a + &x * (1.0 - a);
            let z_relax = &z_tilde * a + &z * (1.0 - a);
            let z_new = clamp(
                &self.c,
                &DVector::from_iterator(m, (0..m).map(|i| z_relax[i] + y[i] / self.rho[i])),
            );
            let y_new = DVector::from_iterator(m, (0..m).map(|i| y[i] + self.rho[i] * (z_relax[i] - z_new[i])));
            let dy = &y_new - &y;
            x = x_new;
            z = z_new;
            y = y_new;

            if iter % self.s.check_every != 0 && iter != self.s.max_iter {
                continue;
            }

            let kkt = self.residuals(&x, &y);
            if kkt.max() < best.0 {
                best = (kkt.max(), x.clone(), y.clone());
            }
            if kkt.max() <= self.s.tol {
                return self.finish(x, y, QpStatus::Optimal, kkt, iter, false);
            }
            if self.primal_infeasible(&dy) {
                return self.finish(x, y, QpStatus::Infeasible, kkt, iter, false);
            }

            let cx = self.c.mul(&x);
            let r_prim = inf_norm(&(&cx - &z));
            let aty = self.c.mul_t(&y);
            let hx = &self.h * &x;
            let r_dual = inf_norm(&(&hx + &self.f + &aty));

            if self.s.polish && iter % POLISH_EVERY == 0 {
                let set = self.active_set(&z, &y);
                if last_polish_set.as_ref() != Some(&set) {
                    if let Some((xp, yp)) = self.polish(&set, &x, &y) {
                        let kp = self.residuals(&xp, &yp);
                        if kp.max() <= self.s.tol {
                            return self.finish(xp, yp, QpStatus::Optimal, kp, iter, true);
                        }
                    }
                    last_polish_set = Some(set);
                }
            }

            let prim_scale = inf_norm(&cx).max(inf_norm(&z)).max(1e-10);
            let dual_scale = inf_norm(&hx).max(inf_norm(&aty)).max(inf_norm(&self.f)).max(1e-10);
            let ratio = (r_prim / prim_scale) / (r_dual / dual_scale).max(1e-30);
            let rho_new = self.rho_base * libm::sqrt(ratio.max(1e-30));
            if self.s.adaptive_rho && rho_new.is_finite() && (rho_new > 5.0 * self.rho_base || rho_new < 0.2 * self.rho_base)
            {
                self.set_rho(rho_new);
            }
        }
        let (_, x, y) = best;
        let kkt = self.residuals(&x, &y);
        self.finish(x, y, QpStatus::MaxIter, kkt, self.s.max_iter, false)
    }

    /// `C' dy ~ 0` with `u' dy+ + l' dy- < 0`, tested in original units.
    fn primal_infeasible(&self, dy_scaled: &DVector<f64>) -> bool {
        let dy = dy_scaled.component_mul(&self.scaling.e);
        let norm = inf_norm(&dy);
        if norm < 1e-12 {
            return false;
        }
        let c = &self.orig;
        let eps = self.s.infeasibility_tol * norm;
        if inf_norm(&c.mul_t(&dy)) > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..c.m() {
            let d = dy[i];
            if d > eps {
                if !c.hi[i].is_finite() {
                    return false;
                }
                support += c.hi[i] * d;
            } else if d < -eps {
                if !c.lo[i].is_finite() {
                    return false;
                }
                support += c.lo[i] * d;
            }
        }
        support < -eps
    }

    /// -1 lower active, +1 upper active, 0 inactive.
    fn active_set(&self, z: &DVector<f64>, y: &DVector<f64>) -> Vec<i8> {
        (0..self.c.m())
            .map(|i| {
                let lower = self.c.lo[i].is_finite() && z[i] - self.c.lo[i] < -y[i];
                let upper = self.c.hi[i].is_finite() && self.c.hi[i] - z[i] < y[i];
                match (lower, upper) {
                    (true, true) => {
                        if y[i] < 0.0 {
                            -1
                        } else {
                            1
                        }
                    }
                    (true, false) => -1,
                    (false, true) => 1,
                    _ => 0,
                }
            })
            .collect()
    }

    /// Solves the equality-constrained problem on the guessed active set with
    /// proximal-point refinement, which tolerates singular `H`.
    fn polish(&self, set: &[i8], x0: &DVector<f64>, y0: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.c.n;
        let active: Vec<usize> = (0..self.c.m()).filter(|&i| set[i] != 0).collect();
        let k = active.len();
        let delta = 1e-9;
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.h);
        for j in 0..n {
            kkt[(j, j)] += delta;
        }
        for (r, &i) in active.iter().enumerate() {
            for &(j, v) in &self.c.rows[i] {
                kkt[(n + r, j)] = v;
                kkt[(j, n + r)] = v;
            }
            kkt[(n + r, n + r)] = -delta;
        }
        let lu = kkt.lu();
        let targets: Vec<f64> = active
            .iter()
            .map(|&i| if set[i] < 0 { self.c.lo[i] } else { self.c.hi[i] })
            .collect();

        let mut x = x0.clone();
        let mut ya = DVector::from_iterator(k, active.iter().map(|&i| y0[i]));
        for _ in 0..25 {
            let mut rhs = DVector::zeros(n + k);
            for j in 0..n {
                rhs[j] = -self.f[j] + delta * x[j];
            }
            for r in 0..k {
                rhs[n + r] = targets[r] - delta * ya[r];
            }
            let sol = lu.solve(&rhs)?;
            let xn = sol.rows(0, n).into_owned();
            let yn = sol.rows(n, k).into_owned();
            let change = inf_norm(&(&xn - &x)).max(inf_norm(&(&yn - &ya)));
            x = xn;
            ya = yn;
            if change < 1e-13 {
                break;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut y = DVector::zeros(self.c.m());
        for (r, &i) in active.iter().enumerate() {
            y[i] = ya[r];
        }
        Some((x, y))
    }

    fn finish(
        &self,
        x: DVector<f64>,
        y: DVector<f64>,
        status: QpStatus,
        kkt: KktResiduals,
        iterations: usize,
        polished: bool,
    ) -> QpSolution {
        let (x, y) = self.unscale(&x, &y);
        let y = project_duals(&self.orig, &y);
        let m_rows = self.p.n_rows();
        let row_duals = DVector::from_iterator(m_rows, (0..m_rows).map(|i| -y[i]));
        let mut bound_duals = DVector::zeros(self.c.n);
        for (i, bv) in self.orig.bound_var.iter().enumerate() {
            if let Some(j) = bv {
                bound_duals[*j] = y[i];
            }
        }
        QpSolution { x, status, kkt, row_duals, bound_duals, iterations, polished }
    }
}

/// Stacked duals in original units from a solution's row and bound duals.
fn stacked_duals(c: &Stacked, n_rows: usize, row_duals: &DVector<f64>, bound_duals: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(c.m());
    for i in 0..n_rows {
        y[i] = -row_duals[i];
    }
    for (i, bv) in c.bound_var.iter().enumerate() {
        if let Some(j) = bv {
            y[i] = bound_duals[*j];
        }
    }
    y
}

/// Solves `p` from a cold start.
pub fn solve_qp(p: &QpProblem, settings: &QpSettings) -> QpSolution {
    assert!(p.dims_consistent(), "inconsistent QP dimensions");
    Admm::new(p, *settings).solve(None, None)
}

/// Solves `p` starting from a previous solution (primal and dual).
pub fn solve_qp_warm(p: &QpProblem, settings: &QpSettings, previous: &QpSolution) -> QpSolution {
    assert!(p.dims_consistent(), "inconsistent QP dimensions");
    let mut admm = Admm::new(p, *settings);
    let y0 = stacked_duals(&admm.orig, p.n_rows(), &previous.row_duals, &previous.bound_duals);
    admm.solve(Some(&previous.x), Some(&y0))
}

/// KKT residuals of an arbitrary primal-dual pair, using the same
/// conventions as [`QpSolution`].
pub fn kkt_of(p: &QpProblem, x: &DVector<f64>, row_duals: &DVector<f64>, bound_duals: &DVector<f64>) -> KktResiduals {
    let c = Stacked::new(p);
    let y = stacked_duals(&c, p.n_rows(), row_duals, bound_duals);
    kkt_residuals(p, &c, x, &y)
}
