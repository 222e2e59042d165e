//! Closed-loop crossing scenario and Monte Carlo campaigns.

use alloc::string::String;
use alloc::vec::Vec;

use crate::control::{mpc_solve, FilterDecision, FilterStatus, MpcConfig, ReferencePath, SafetyFilter};
use crate::dynamics::{obstacle_step, BicycleModel, ControlInput, InputBounds, ObstacleState, VehicleState};
use crate::error::CoreError;
use crate::geom::Vec2;
use crate::qp::QpSettings;
use crate::risk::{barrier, BarrierParams, CbcModel};
use crate::rng::RngStream;
use crate::sensing::{measure_ego, measure_obstacle, validate_obstacle_suite, SensorKind, SensorModel};
use crate::wasserstein::{fuse_obstacle, FusionWeights};

/// Child stream ids inside one episode.
pub const STREAM_GPS: u64 = 0;
pub const STREAM_LIDAR: u64 = 1;
pub const STREAM_CAMERA: u64 = 2;
pub const STREAM_V2X: u64 = 3;
pub const STREAM_CBC: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    /// Mean-position CBF-QP.
    BaselineCbf,
    /// Barycenter-fused CVaR CBF.
    WbCvarCbf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 2] = [ControllerKind::BaselineCbf, ControllerKind::WbCvarCbf];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::BaselineCbf => "cbf",
            ControllerKind::WbCvarCbf => "wbcvar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Perpendicular crossing: the AV drives East towards the conflict point and
/// the VRU walks North across it, both arriving at the same instant if the AV
/// keeps its reference speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingGeometry {
    pub conflict_point: Vec2,
    /// AV start distance before the conflict point, m.
    pub approach: f64,
    pub av_speed: f64,
    pub vru_speed: f64,
    /// Path length past the conflict point, m.
    pub path_beyond: f64,
}

impl Default for CrossingGeometry {
    fn default() -> Self {
        Self { conflict_point: Vec2::ZERO, approach: 50.0, av_speed: 8.0, vru_speed: 4.5, path_beyond: 100.0 }
    }
}

impl CrossingGeometry {
    pub fn path(&self) -> Result<ReferencePath, CoreError> {
        let c = self.conflict_point;
        ReferencePath::straight(
            Vec2::new(c.x - self.approach, c.y),
            Vec2::new(c.x + self.path_beyond, c.y),
            self.av_speed,
        )
    }

    pub fn av_start(&self) -> VehicleState {
        VehicleState::new(Vec2::new(self.conflict_point.x - self.approach, self.conflict_point.y), 0.0, self.av_speed)
    }

    pub fn vru_start(&self) -> ObstacleState {
        let t_meet = self.approach / self.av_speed;
        ObstacleState {
            pos: Vec2::new(self.conflict_point.x, self.conflict_point.y - self.vru_speed * t_meet),
            vel: Vec2::new(0.0, self.vru_speed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub controller: ControllerKind,
    pub path: ReferencePath,
    pub av_start: VehicleState,
    pub vru_start: ObstacleState,
    /// The episode ends once the AV's arc length passes this point plus
    /// `exit_margin`.
    pub conflict_point: Vec2,
    pub exit_margin: f64,
    pub gps: SensorModel,
    /// LiDAR, camera and V2X, in that order.
    pub obstacle_sensors: [SensorModel; 3],
    pub barrier: BarrierParams,
    pub vehicle: BicycleModel,
    pub bounds: InputBounds,
    pub mpc: MpcConfig,
    pub filter_qp: QpSettings,
    pub i_count: usize,
    pub j_count: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub dt: f64,
    pub max_time: f64,
    /// Center distance that counts as a collision, m.
    pub clearance: f64,
}

/// Noise levels of one preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePreset {
    pub gps_std: f64,
    pub lidar_std: f64,
    pub camera_std: f64,
    pub v2x_std: f64,
    pub v2x_bias: Vec2,
}

impl ScenarioConfig {
    pub fn crossing(name: &str, geometry: &CrossingGeometry, noise: &NoisePreset) -> Result<Self, CoreError> {
        let weights = FusionWeights::default();
        Ok(Self {
            name: name.into(),
            controller: ControllerKind::WbCvarCbf,
            path: geometry.path()?,
            av_start: geometry.av_start(),
            vru_start: geometry.vru_start(),
            conflict_point: geometry.conflict_point,
            exit_margin: 20.0,
            gps: SensorModel::new(SensorKind::Gps, Vec2::ZERO, noise.gps_std, 0.0),
            obstacle_sensors: [
                SensorModel::new(SensorKind::Lidar, Vec2::ZERO, noise.lidar_std, weights.lidar),
                SensorModel::new(SensorKind::Camera, Vec2::ZERO, noise.camera_std, weights.camera),
                SensorModel::new(SensorKind::V2x, noise.v2x_bias, noise.v2x_std, weights.v2x),
            ],
            barrier: BarrierParams::default(),
            vehicle: BicycleModel::default(),
            bounds: InputBounds::default(),
            mpc: MpcConfig::default(),
            filter_qp: QpSettings::default(),
            i_count: 10,
            j_count: 10,
            runs: 100,
            base_seed: 42,
            dt: 0.1,
            max_time: 30.0,
            clearance: 2.8,
        })
    }

    pub fn with_controller(mut self, controller: ControllerKind) -> Self {
        self.controller = controller;
        self
    }

    /// Same scenario with every sensor noiseless and unbiased.
    pub fn noiseless(mut self) -> Self {
        self.gps.std = 0.0;
        self.gps.bias = Vec2::ZERO;
        for s in &mut self.obstacle_sensors {
            s.std = 0.0;
            s.bias = Vec2::ZERO;
        }
        self
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        FusionWeights {
            lidar: self.obstacle_sensors[0].weight,
            camera: self.obstacle_sensors[1].weight,
            v2x: self.obstacle_sensors[2].weight,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        validate_obstacle_suite(&self.obstacle_sensors)?;
        let kinds = self.obstacle_sensors.map(|s| s.kind);
        if kinds != SensorKind::OBSTACLE_SENSORS || self.gps.kind != SensorKind::Gps || !(self.gps.std >= 0.0) {
            return Err(CoreError::BadSensorSuite);
        }
        if self.runs == 0 {
            return Err(CoreError::InvalidConfig("runs must be at least 1"));
        }
        if self.i_count == 0 || self.j_count == 0 {
            return Err(CoreError::InvalidConfig("sample counts must be at least 1"));
        }
        if !(self.dt > 0.0) || !(self.max_time > 0.0) {
            return Err(CoreError::InvalidConfig("dt and max_time must be positive"));
        }
        if !(self.barrier.epsilon > 0.0 && self.barrier.epsilon <= 1.0) {
            return Err(CoreError::InvalidConfig("epsilon must be in (0, 1]"));
        }
        if !self.mpc.is_valid() {
            return Err(CoreError::InvalidConfig("invalid MPC settings"));
        }
        Ok(())
    }

    fn safety_filter(&self) -> SafetyFilter {
        SafetyFilter {
            cbc: CbcModel { vehicle: self.vehicle, dt: self.dt, barrier: self.barrier },
            bounds: self.bounds,
            qp: self.filter_qp,
        }
    }

    fn mpc_config(&self) -> MpcConfig {
        MpcConfig { vehicle: self.vehicle, dt: self.dt, bounds: self.bounds, ..self.mpc }
    }
}

/// The three scenarios, with Scenario 3 in both V2X noise variants.
pub fn scenario_presets() -> Vec<ScenarioConfig> {
    let geometry = CrossingGeometry::default();
    let s1 = NoisePreset { gps_std: 0.1, lidar_std: 0.1, camera_std: 0.2, v2x_std: 1.0, v2x_bias: Vec2::ZERO };
    let s2 = NoisePreset { gps_std: 0.5, ..s1 };
    let s3_text = NoisePreset { v2x_std: 0.5, v2x_bias: Vec2::new(-1.0, 0.0), ..s2 };
    let s3_table = NoisePreset { v2x_std: 1.0, ..s3_text };
    [("s1", s1), ("s2", s2), ("s3-text", s3_text), ("s3-table", s3_table)]
        .iter()
        .map(|(name, noise)| ScenarioConfig::crossing(name, &geometry, noise).expect("preset geometry is valid"))
        .collect()
}

pub fn scenario_preset(name: &str) -> Option<ScenarioConfig> {
    let name = if name == "s3" { "s3-text" } else { name };
    scenario_presets().into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub av: VehicleState,
    pub vru: ObstacleState,
    /// Decision applied over `[t, t + dt)`; `None` on the final record.
    pub decision: Option<FilterDecision>,
    /// The nominal MPC solve failed.
    pub mpc_fallback: bool,
}

impl StepRecord {
    pub fn distance(&self) -> f64 {
        (self.av.pos - self.vru.pos).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub success: bool,
    /// Minimum AV-VRU center distance over the recorded states, m.
    pub min_distance: f64,
    /// Control periods simulated.
    pub steps: usize,
    pub filter_active_steps: usize,
    /// Periods in which the MPC or the filter fell back to braking.
    pub solver_fallbacks: usize,
    /// Largest KKT residual of any optimal MPC or filter solve.
    pub max_kkt: f64,
    pub trajectory: Vec<StepRecord>,
}

impl RunMetrics {
    pub fn min_distance_from_log(&self) -> f64 {
        self.trajectory.iter().map(StepRecord::distance).fold(f64::INFINITY, f64::min)
    }

    /// Smallest true barrier value over the log.
    pub fn min_barrier(&self, p: &BarrierParams) -> f64 {
        self.trajectory.iter().map(|r| barrier(r.av.pos, r.vru.pos, p)).fold(f64::INFINITY, f64::min)
    }
}

/// Root stream of an episode: seed `base_seed + k` uses stream id `k`.
pub fn episode_stream(cfg: &ScenarioConfig, seed: u64) -> RngStream {
    RngStream::new(seed, seed.wrapping_sub(cfg.base_seed))
}

/// Simulates one episode. Solver failures brake and are counted, they never
/// abort the run.
pub fn run_episode(cfg: &ScenarioConfig, seed: u64) -> Result<RunMetrics, CoreError> {
    cfg.validate()?;
    let root = episode_stream(cfg, seed);
    let mut gps_rng = root.child(STREAM_GPS);
    let mut sensor_rngs = [root.child(STREAM_LIDAR), root.child(STREAM_CAMERA), root.child(STREAM_V2X)];
    let mut cbc_rng = root.child(STREAM_CBC);

    let filter = cfg.safety_filter();
    let mpc = cfg.mpc_config();
    let weights = cfg.fusion_weights();
    let (s_exit, _) = cfg.path.project(cfg.conflict_point);
    let s_exit = s_exit + cfg.exit_margin;
    let max_steps = libm::ceil(cfg.max_time / cfg.dt - 1e-9) as usize;

    let mut av = cfg.av_start;
    let mut vru = cfg.vru_start;
    let mut u_prev: Option<ControlInput> = None;
    let mut trajectory = Vec::with_capacity(max_steps + 1);
    let mut active_steps = 0;
    let mut fallbacks = 0;
    let mut max_kkt: f64 = 0.0;

    let mut step = 0;
    loop {
        let t = step as f64 * cfg.dt;
        if step == max_steps || cfg.path.project(av.pos).0 > s_exit {
            trajectory.push(StepRecord { t, av, vru, decision: None, mpc_fallback: false });
            break;
        }
        let ego_meas = measure_ego(&av, &cfg.gps, &mut gps_rng);
        let obstacle_meas = measure_obstacle(&vru, &cfg.obstacle_sensors, &mut sensor_rngs)?;
        let estimate = VehicleState { pos: ego_meas.mean, ..av };

        let nominal = mpc_solve(&estimate, &cfg.path, &mpc, u_prev);
        let u_nom = cfg.bounds.clamp(nominal.u);
        let decision = match cfg.controller {
            ControllerKind::BaselineCbf => filter.baseline(u_nom, &estimate, &ego_meas, &obstacle_meas, vru.vel),
            ControllerKind::WbCvarCbf => match fuse_obstacle(&obstacle_meas, &weights) {
                Ok(wb) => filter.wb_cvar(
                    u_nom,
                    &estimate,
                    &ego_meas,
                    &wb.fused,
                    vru.vel,
                    cfg.i_count,
                    cfg.j_count,
                    &mut cbc_rng,
                ),
                Err(_) => FilterDecision::braking(u_nom, &cfg.bounds, FilterStatus::FusionFailed),
            },
        };
        if decision.active {
            active_steps += 1;
        }
        if decision.is_fallback() || nominal.fell_back() {
            fallbacks += 1;
        }
        for k in decision.kkt.iter().chain(nominal.kkt.iter()) {
            max_kkt = max_kkt.max(k.max());
        }
        trajectory.push(StepRecord { t, av, vru, decision: Some(decision), mpc_fallback: nominal.fell_back() });

        av = cfg.vehicle.step(&av, decision.u_safe, cfg.dt);
        vru = obstacle_step(&vru, cfg.dt);
        u_prev = Some(decision.u_safe);
        step += 1;
    }

    let min_distance = trajectory.iter().map(StepRecord::distance).fold(f64::INFINITY, f64::min);
    Ok(RunMetrics {
        seed,
        success: min_distance > cfg.clearance,
        min_distance,
        steps: step,
        filter_active_steps: active_steps,
        solver_fallbacks: fallbacks,
        max_kkt,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub scenario: String,
    pub controller: ControllerKind,
    pub runs: usize,
    pub successes: usize,
    /// Mean minimum distance over successful runs; `None` without successes.
    pub mdp: Option<f64>,
}

impl CampaignSummary {
    /// Success rate as a fraction.
    pub fn sr(&self) -> f64 {
        self.successes as f64 / self.runs as f64
    }

    pub fn sr_percent(&self) -> f64 {
        100.0 * self.successes as f64 / self.runs as f64
    }
}

pub fn campaign_seeds(cfg: &ScenarioConfig) -> impl Iterator<Item = u64> {
    let base = cfg.base_seed;
    (0..cfg.runs as u64).map(move |k| base.wrapping_add(k))
}

/// Aggregates episodes in seed order, so the result does not depend on the
/// order in which they were produced.
pub fn summarize(cfg: &ScenarioConfig, runs: &[RunMetrics]) -> CampaignSummary {
    let mut sorted: Vec<&RunMetrics> = runs.iter().collect();
    sorted.sort_by_key(|r| r.seed.wrapping_sub(cfg.base_seed));
    let successes = sorted.iter().filter(|r| r.success).count();
    let mdp = if successes == 0 {
        None
    } else {
        Some(sorted.iter().filter(|r| r.success).map(|r| r.min_distance).sum::<f64>() / successes as f64)
    };
    CampaignSummary { scenario: cfg.name.clone(), controller: cfg.controller, runs: runs.len(), successes, mdp }
}

/// Runs every episode of the campaign sequentially.
pub fn run_campaign(cfg: &ScenarioConfig) -> Result<CampaignSummary, CoreError> {
    let runs = campaign_seeds(cfg).map(|seed| run_episode(cfg, seed)).collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(cfg, &runs))
}
