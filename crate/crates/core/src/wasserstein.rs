//! 2-Wasserstein geometry of planar Gaussians.
//!
//! The barycenter of `N(m_s, S_s)` with weights `w_s` is Gaussian with mean
//! `sum w_s m_s` and the covariance `S` solving
//! `S = sum_s w_s (S^1/2 S_s S^1/2)^1/2`. It is found with the contraction
//! `S <- S^-1/2 (sum_s w_s (S^1/2 S_s S^1/2)^1/2)^2 S^-1/2`.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::geom::{spd_sqrt, Gaussian2, SpdMat2, Vec2};
use crate::sensing::{ObstacleMeasurements, SensorKind};

/// Diagonal loading applied to singular input covariances, m^2.
pub const EPS_REG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycenterOptions {
    /// Entrywise fixed-point defect accepted at convergence, m^2.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycenterResult {
    pub fused: Gaussian2,
    pub iterations: usize,
    /// Entrywise max of `S - sum w_s (S^1/2 S_s S^1/2)^1/2` at `fused.cov`.
    pub residual: f64,
}

/// Closed-form W2 distance between Gaussians.
pub fn gaussian_w2_distance(g1: &Gaussian2, g2: &Gaussian2) -> Result<f64, CoreError> {
    let root2 = spd_sqrt(&g2.cov)?;
    let cross = spd_sqrt(&SpdMat2::congruence(&root2, &g1.cov))?;
    let bures = g1.cov.trace() + g2.cov.trace() - 2.0 * cross.trace();
    let d2 = (g1.mean - g2.mean).norm_sq() + bures.max(0.0);
    Ok(libm::sqrt(d2))
}

/// `sum w_s (S^1/2 S_s S^1/2)^1/2` together with `S^1/2`.
fn barycentric_map(cov: &SpdMat2, inputs: &[(f64, SpdMat2)]) -> Result<(SpdMat2, SpdMat2), CoreError> {
    let root = spd_sqrt(cov)?;
    let mut acc = SpdMat2::ZERO;
    for (w, c) in inputs {
        acc = acc + spd_sqrt(&SpdMat2::congruence(&root, c))?.scale(*w);
    }
    Ok((acc, root))
}

/// Fixed-point defect of `cov` against the barycenter equation.
pub fn fixed_point_defect(cov: &SpdMat2, inputs: &[(f64, SpdMat2)]) -> Result<f64, CoreError> {
    let (image, _) = barycentric_map(cov, inputs)?;
    Ok(image.max_abs_diff(cov))
}

/// Weighted 2-Wasserstein barycenter of Gaussians.
pub fn gaussian_barycenter(
    inputs: &[(f64, Gaussian2)],
    opts: BarycenterOptions,
) -> Result<BarycenterResult, CoreError> {
    if inputs.is_empty() {
        return Err(CoreError::EmptyBarycenter);
    }
    let sum: f64 = inputs.iter().map(|(w, _)| *w).sum();
    if inputs.iter().any(|(w, _)| !(*w > 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(CoreError::BadWeights { sum });
    }
    let mut mean = Vec2::ZERO;
    for (w, g) in inputs {
        if !g.is_valid() {
            return Err(CoreError::NotPsd { a: g.cov.a, b: g.cov.b, d: g.cov.d });
        }
        mean += g.mean * *w;
    }

    let covs: Vec<(f64, SpdMat2)> = inputs
        .iter()
        .map(|(w, g)| {
            let singular = g.cov.eigenvalues().0 < EPS_REG;
            (*w, if singular { g.cov.add_diag(EPS_REG) } else { g.cov })
        })
        .collect();
    let covs = &covs[..];

    let mut cov = covs.iter().fold(SpdMat2::ZERO, |acc, (w, c)| acc + c.scale(*w));
    let mut residual = fixed_point_defect(&cov, covs)?;
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations == opts.max_iter {
            return Err(CoreError::BarycenterNotConverged { iterations, residual });
        }
        let (image, root) = barycentric_map(&cov, covs)?;
        let inv_root = root.inverse().ok_or(CoreError::NotPsd { a: cov.a, b: cov.b, d: cov.d })?;
        let squared = SpdMat2::congruence(&image, &SpdMat2::IDENTITY);
        cov = SpdMat2::congruence(&inv_root, &squared);
        iterations += 1;
        residual = fixed_point_defect(&cov, covs)?;
    }
    Ok(BarycenterResult { fused: Gaussian2::new(mean, cov), iterations, residual })
}

/// Per-sensor fusion weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub lidar: f64,
    pub camera: f64,
    pub v2x: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { lidar: 0.4, camera: 0.4, v2x: 0.2 }
    }
}

impl FusionWeights {
    pub fn get(&self, kind: SensorKind) -> f64 {
        match kind {
            SensorKind::Lidar => self.lidar,
            SensorKind::Camera => self.camera,
            SensorKind::V2x => self.v2x,
            SensorKind::Gps => 0.0,
        }
    }
}

/// Fuses the obstacle readings into their Wasserstein barycenter.
pub fn fuse_obstacle(meas: &ObstacleMeasurements, weights: &FusionWeights) -> Result<BarycenterResult, CoreError> {
    let mut inputs = [(0.0, Gaussian2::default()); 3];
    if meas.len() != 3 {
        return Err(CoreError::BadSensorSuite);
    }
    for (slot, (kind, g)) in inputs.iter_mut().zip(meas) {
        *slot = (weights.get(*kind), *g);
    }
    gaussian_barycenter(&inputs, BarycenterOptions::default())
}
