//! Simulated measurement channels.
//!
//! Every channel reports a full Gaussian: the drawn fix as the mean and the
//! modeled covariance `std^2 I`. The bias shifts the draw but is not part of
//! what the filter is told.

use alloc::vec::Vec;

use crate::dynamics::{ObstacleState, VehicleState};
use crate::error::CoreError;
use crate::geom::{Gaussian2, SpdMat2, Vec2};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorKind {
    Gps,
    Lidar,
    Camera,
    V2x,
}

impl SensorKind {
    pub const OBSTACLE_SENSORS: [SensorKind; 3] = [SensorKind::Lidar, SensorKind::Camera, SensorKind::V2x];

    pub fn name(&self) -> &'static str {
        match self {
            SensorKind::Gps => "gps",
            SensorKind::Lidar => "lidar",
            SensorKind::Camera => "camera",
            SensorKind::V2x => "v2x",
        }
    }

    /// Child-stream index used by the episode runner.
    pub fn stream_index(&self) -> u64 {
        match self {
            SensorKind::Gps => 0,
            SensorKind::Lidar => 1,
            SensorKind::Camera => 2,
            SensorKind::V2x => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub kind: SensorKind,
    /// Unmodeled mean offset, m.
    pub bias: Vec2,
    /// Isotropic standard deviation per axis, m.
    pub std: f64,
    /// Fusion weight; ignored for GPS.
    pub weight: f64,
}

impl SensorModel {
    pub fn new(kind: SensorKind, bias: Vec2, std: f64, weight: f64) -> Self {
        Self { kind, bias, std, weight }
    }

    pub fn reported_cov(&self) -> SpdMat2 {
        SpdMat2::isotropic(self.std * self.std)
    }

    fn measure(&self, truth: Vec2, rng: &mut RngStream) -> Gaussian2 {
        let drawn = Gaussian2::new(truth + self.bias, self.reported_cov()).sample(rng);
        Gaussian2::new(drawn, self.reported_cov())
    }
}

/// One obstacle reading per configured sensor, in suite order.
pub type ObstacleMeasurements = Vec<(SensorKind, Gaussian2)>;

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub ego: Gaussian2,
    pub obstacle: ObstacleMeasurements,
}

/// Checks that the suite holds LiDAR, camera and V2X exactly once, with
/// nonnegative noise and positive weights summing to one.
pub fn validate_obstacle_suite(suite: &[SensorModel]) -> Result<(), CoreError> {
    if suite.len() != 3 {
        return Err(CoreError::BadSensorSuite);
    }
    for kind in SensorKind::OBSTACLE_SENSORS {
        if suite.iter().filter(|s| s.kind == kind).count() != 1 {
            return Err(CoreError::BadSensorSuite);
        }
    }
    if suite.iter().any(|s| !(s.std >= 0.0) || !(s.weight > 0.0)) {
        return Err(CoreError::BadSensorSuite);
    }
    let sum: f64 = suite.iter().map(|s| s.weight).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(CoreError::BadWeights { sum });
    }
    Ok(())
}

/// GPS fix of the ego position.
pub fn measure_ego(truth: &VehicleState, gps: &SensorModel, rng: &mut RngStream) -> Gaussian2 {
    debug_assert_eq!(gps.kind, SensorKind::Gps);
    gps.measure(truth.pos, rng)
}

/// Reads the obstacle with every sensor of the suite. `rngs[k]` is the
/// stream owned by `suite[k]`.
pub fn measure_obstacle(
    truth: &ObstacleState,
    suite: &[SensorModel],
    rngs: &mut [RngStream],
) -> Result<ObstacleMeasurements, CoreError> {
    validate_obstacle_suite(suite)?;
    assert_eq!(suite.len(), rngs.len(), "one stream per sensor");
    Ok(suite
        .iter()
        .zip(rngs.iter_mut())
        .map(|(sensor, rng)| (sensor.kind, sensor.measure(truth.pos, rng)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn suite(stds: [f64; 3], v2x_bias: Vec2) -> Vec<SensorModel> {
        vec![
            SensorModel::new(SensorKind::Lidar, Vec2::ZERO, stds[0], 0.4),
            SensorModel::new(SensorKind::Camera, Vec2::ZERO, stds[1], 0.4),
            SensorModel::new(SensorKind::V2x, v2x_bias, stds[2], 0.2),
        ]
    }

    fn streams() -> Vec<RngStream> {
        let root = RngStream::new(5, 0);
        (1..=3).map(|k| root.child(k)).collect()
    }

    #[test]
    fn noiseless_gps() {
        let truth = VehicleState::new(Vec2::new(3.0, 4.0), 0.0, 1.0);
        let gps = SensorModel::new(SensorKind::Gps, Vec2::ZERO, 0.0, 1.0);
        let m = measure_ego(&truth, &gps, &mut RngStream::new(1, 0));
        assert_eq!(m.mean, truth.pos);
        assert_eq!(m.cov, SpdMat2::ZERO);
        let gps = SensorModel::new(SensorKind::Gps, Vec2::new(1.0, 0.0), 0.0, 1.0);
        let m = measure_ego(&truth, &gps, &mut RngStream::new(1, 0));
        assert_eq!(m.mean, Vec2::new(4.0, 4.0));
    }

    #[test]
    fn gps_rms_error() {
        let truth = VehicleState::new(Vec2::new(-10.0, 2.0), 0.0, 1.0);
        let gps = SensorModel::new(SensorKind::Gps, Vec2::ZERO, 0.5, 1.0);
        let mut rng = RngStream::new(11, 0);
        let n = 10_000;
        let (mut ex, mut ey) = (0.0, 0.0);
        for _ in 0..n {
            let m = measure_ego(&truth, &gps, &mut rng);
            assert_eq!(m.cov, SpdMat2::isotropic(0.25));
            let e = m.mean - truth.pos;
            ex += e.x * e.x;
            ey += e.y * e.y;
        }
        assert!(((ex / n as f64).sqrt() - 0.5).abs() < 0.02);
        assert!(((ey / n as f64).sqrt() - 0.5).abs() < 0.02);
    }

    #[test]
    fn noiseless_obstacle_sensors_agree() {
        let truth = ObstacleState { pos: Vec2::new(1.0, -3.0), vel: Vec2::ZERO };
        let m = measure_obstacle(&truth, &suite([0.0; 3], Vec2::ZERO), &mut streams()).unwrap();
        assert_eq!(m.len(), 3);
        for (_, g) in &m {
            assert_eq!(g.mean, truth.pos);
        }
    }

    #[test]
    fn v2x_bias_offsets_mean() {
        let truth = ObstacleState { pos: Vec2::ZERO, vel: Vec2::ZERO };
        let s = suite([0.1, 0.2, 1.0], Vec2::new(-1.0, 0.0));
        let mut rngs = streams();
        let n = 10_000;
        let mut mean_v2x = Vec2::ZERO;
        let mut mean_lidar = Vec2::ZERO;
        for _ in 0..n {
            let m = measure_obstacle(&truth, &s, &mut rngs).unwrap();
            mean_lidar += m[0].1.mean;
            mean_v2x += m[2].1.mean;
            // bias is not reported
            assert_eq!(m[2].1.cov, SpdMat2::isotropic(1.0));
        }
        let mean_v2x = mean_v2x * (1.0 / n as f64);
        let mean_lidar = mean_lidar * (1.0 / n as f64);
        assert!((mean_v2x.x + 1.0).abs() < 0.05);
        assert!(mean_v2x.y.abs() < 0.05);
        assert!(mean_lidar.norm() < 0.01);
    }

    #[test]
    fn sensor_draws_are_independent() {
        let truth = ObstacleState { pos: Vec2::ZERO, vel: Vec2::ZERO };
        let s = suite([1.0, 1.0, 1.0], Vec2::ZERO);
        let mut rngs = streams();
        let n = 10_000;
        let mut xs: Vec<[f64; 3]> = Vec::with_capacity(n);
        for _ in 0..n {
            let m = measure_obstacle(&truth, &s, &mut rngs).unwrap();
            xs.push([m[0].1.mean.x, m[1].1.mean.x, m[2].1.mean.x]);
        }
        let corr = |a: usize, b: usize| {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for r in &xs {
                sab += r[a] * r[b];
                saa += r[a] * r[a];
                sbb += r[b] * r[b];
            }
            sab / libm::sqrt(saa * sbb)
        };
        assert!(corr(0, 1).abs() < 0.05);
        assert!(corr(0, 2).abs() < 0.05);
        assert!(corr(1, 2).abs() < 0.05);
    }

    #[test]
    fn empirical_covariance_matches_model() {
        let truth = ObstacleState { pos: Vec2::new(2.0, 2.0), vel: Vec2::ZERO };
        let s = suite([0.1, 0.2, 1.0], Vec2::ZERO);
        let mut rngs = streams();
        let n = 10_000;
        let mut var = [0.0; 3];
        for _ in 0..n {
            let m = measure_obstacle(&truth, &s, &mut rngs).unwrap();
            for k in 0..3 {
                var[k] += (m[k].1.mean - truth.pos).norm_sq() / 2.0;
            }
        }
        for (k, std) in [0.1, 0.2, 1.0].iter().enumerate() {
            let v = var[k] / n as f64;
            assert!((v / (std * std) - 1.0).abs() < 0.05, "sensor {k}: {v}");
        }
    }

    #[test]
    fn suite_validation() {
        let mut s = suite([0.1, 0.2, 1.0], Vec2::ZERO);
        assert!(validate_obstacle_suite(&s).is_ok());
        s[2].weight = 0.3;
        assert!(matches!(validate_obstacle_suite(&s), Err(CoreError::BadWeights { .. })));
        s[2].weight = 0.2;
        s[1].kind = SensorKind::Lidar;
        assert_eq!(validate_obstacle_suite(&s), Err(CoreError::BadSensorSuite));
    }
}
