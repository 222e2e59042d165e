use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("matrix [[{a}, {b}], [{b}, {d}]] is not positive semidefinite")]
    NotPsd { a: f64, b: f64, d: f64 },
    #[error("barycenter weights must be positive and sum to one (sum = {sum})")]
    BadWeights { sum: f64 },
    #[error("barycenter needs at least one input")]
    EmptyBarycenter,
    #[error("barycenter fixed point did not converge in {iterations} iterations (residual {residual:e})")]
    BarycenterNotConverged { iterations: usize, residual: f64 },
    #[error("sensor suite must contain LiDAR, camera and V2X exactly once each")]
    BadSensorSuite,
    #[error("reference path needs at least two distinct waypoints")]
    BadPath,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
