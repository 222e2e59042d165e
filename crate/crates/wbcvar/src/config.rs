//! Flat `section.key = value` settings file.
//!
//! The syntax is the dotted-key subset of TOML: one assignment per line,
//! `#` comments, numbers and quoted strings. `configs/default.toml` lists
//! every key with its default value.

use std::path::Path;

use thiserror::Error;
use wbcvar_core::control::MpcConfig;
use wbcvar_core::dynamics::{BicycleModel, InputBounds};
use wbcvar_core::geom::Vec2;
use wbcvar_core::qp::QpSettings;
use wbcvar_core::risk::BarrierParams;
use wbcvar_core::sim::{CrossingGeometry, NoisePreset, ScenarioConfig};
use wbcvar_core::wasserstein::FusionWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.into(), message: message.into() }
}

/// Everything a campaign needs, shared by all presets except the noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub runs: usize,
    pub seed: u64,
    pub dt: f64,
    pub max_time: f64,
    pub exit_margin: f64,
    pub clearance: f64,
    pub geometry: CrossingGeometry,
    pub vehicle: BicycleModel,
    pub bounds: InputBounds,
    pub barrier: BarrierParams,
    pub ego_samples: usize,
    pub obstacle_samples: usize,
    pub weights: FusionWeights,
    pub mpc: MpcConfig,
    pub qp: QpSettings,
    /// Named noise presets in file order.
    pub presets: Vec<(String, NoisePreset)>,
}

impl Default for Settings {
    fn default() -> Self {
        let presets = wbcvar_core::sim::scenario_presets()
            .into_iter()
            .map(|s| {
                let noise = NoisePreset {
                    gps_std: s.gps.std,
                    lidar_std: s.obstacle_sensors[0].std,
                    camera_std: s.obstacle_sensors[1].std,
                    v2x_std: s.obstacle_sensors[2].std,
                    v2x_bias: s.obstacle_sensors[2].bias,
                };
                (s.name, noise)
            })
            .collect();
        let mpc = MpcConfig::default();
        Self {
            runs: 100,
            seed: 42,
            dt: 0.1,
            max_time: 30.0,
            exit_margin: 20.0,
            clearance: 2.8,
            geometry: CrossingGeometry::default(),
            vehicle: BicycleModel::default(),
            bounds: InputBounds::default(),
            barrier: BarrierParams::default(),
            ego_samples: 10,
            obstacle_samples: 10,
            weights: FusionWeights::default(),
            mpc,
            qp: QpSettings::default(),
            presets,
        }
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Defaults overridden by every key present in `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut s = Self::default();
        for (key, value) in &entries {
            s.apply(key, value)?;
        }
        s.check()?;
        Ok(s)
    }

    fn apply(&mut self, key: &str, v: &toml::Value) -> Result<(), ConfigError> {
        if let Some(rest) = key.strip_prefix("preset.") {
            return self.apply_preset(key, rest, v);
        }
        match key {
            "run.runs" => self.runs = count(key, v, 1)?,
            "run.seed" => self.seed = integer(key, v)?,
            "sim.dt_s" => self.dt = positive(key, v)?,
            "sim.max_time_s" => self.max_time = positive(key, v)?,
            "sim.exit_margin_m" => self.exit_margin = non_negative(key, v)?,
            "sim.clearance_m" => self.clearance = non_negative(key, v)?,
            "geometry.conflict_x_m" => self.geometry.conflict_point.x = number(key, v)?,
            "geometry.conflict_y_m" => self.geometry.conflict_point.y = number(key, v)?,
            "geometry.approach_m" => self.geometry.approach = positive(key, v)?,
            "geometry.av_speed_mps" => self.geometry.av_speed = positive(key, v)?,
            "geometry.vru_speed_mps" => self.geometry.vru_speed = non_negative(key, v)?,
            "geometry.path_beyond_m" => self.geometry.path_beyond = positive(key, v)?,
            "vehicle.wheelbase_m" => self.vehicle.wheelbase = positive(key, v)?,
            "vehicle.accel_min" => self.bounds.accel_min = number(key, v)?,
            "vehicle.accel_max" => self.bounds.accel_max = number(key, v)?,
            "vehicle.steer_min" => self.bounds.steer_min = number(key, v)?,
            "vehicle.steer_max" => self.bounds.steer_max = number(key, v)?,
            "barrier.vehicle_radius_m" => self.barrier.vehicle_radius = non_negative(key, v)?,
            "barrier.obstacle_radius_m" => self.barrier.obstacle_radius = non_negative(key, v)?,
            "barrier.safety_dist_m" => self.barrier.safety_dist = non_negative(key, v)?,
            "barrier.alpha_gain" => self.barrier.alpha_gain = positive(key, v)?,
            "barrier.epsilon" => {
                let e = positive(key, v)?;
                if e > 1.0 {
                    return Err(bad(key, "must lie in (0, 1]"));
                }
                self.barrier.epsilon = e;
            }
            "sampling.ego_samples" => self.ego_samples = count(key, v, 1)?,
            "sampling.obstacle_samples" => self.obstacle_samples = count(key, v, 1)?,
            "fusion.weight_lidar" => self.weights.lidar = positive(key, v)?,
            "fusion.weight_camera" => self.weights.camera = positive(key, v)?,
            "fusion.weight_v2x" => self.weights.v2x = positive(key, v)?,
            "mpc.horizon" => self.mpc.horizon = count(key, v, 1)?,
            "mpc.w_pos" => self.mpc.w_pos = non_negative(key, v)?,
            "mpc.w_heading" => self.mpc.w_heading = non_negative(key, v)?,
            "mpc.w_speed" => self.mpc.w_speed = non_negative(key, v)?,
            "mpc.w_accel" => self.mpc.w_accel = non_negative(key, v)?,
            "mpc.w_steer" => self.mpc.w_steer = non_negative(key, v)?,
            "mpc.accel_rate" => self.mpc.accel_rate = positive(key, v)?,
            "mpc.steer_rate" => self.mpc.steer_rate = positive(key, v)?,
            "qp.tol" => self.qp.tol = positive(key, v)?,
            "qp.max_iter" => self.qp.max_iter = count(key, v, 1)?,
            "qp.rho" => self.qp.rho = positive(key, v)?,
            "qp.sigma" => self.qp.sigma = positive(key, v)?,
            "qp.alpha" => {
                let a = positive(key, v)?;
                if a >= 2.0 {
                    return Err(bad(key, "must lie in (0, 2)"));
                }
                self.qp.alpha = a;
            }
            "qp.check_every" => self.qp.check_every = count(key, v, 1)?,
            "qp.polish" => self.qp.polish = boolean(key, v)?,
            "qp.adaptive_rho" => self.qp.adaptive_rho = boolean(key, v)?,
            "qp.infeasibility_tol" => self.qp.infeasibility_tol = positive(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn apply_preset(&mut self, key: &str, rest: &str, v: &toml::Value) -> Result<(), ConfigError> {
        let Some((name, field)) = rest.rsplit_once('.') else {
            return Err(ConfigError::UnknownKey(key.into()));
        };
        let idx = match self.presets.iter().position(|(n, _)| n == name) {
            Some(i) => i,
            None => {
                // new presets start noiseless
                let zero =
                    NoisePreset { gps_std: 0.0, lidar_std: 0.0, camera_std: 0.0, v2x_std: 0.0, v2x_bias: Vec2::ZERO };
                self.presets.push((name.into(), zero));
                self.presets.len() - 1
            }
        };
        let p = &mut self.presets[idx].1;
        match field {
            "gps_std" => p.gps_std = non_negative(key, v)?,
            "lidar_std" => p.lidar_std = non_negative(key, v)?,
            "camera_std" => p.camera_std = non_negative(key, v)?,
            "v2x_std" => p.v2x_std = non_negative(key, v)?,
            "v2x_bias_x" => p.v2x_bias.x = number(key, v)?,
            "v2x_bias_y" => p.v2x_bias.y = number(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn check(&self) -> Result<(), ConfigError> {
        let w = self.weights;
        if ((w.lidar + w.camera + w.v2x) - 1.0).abs() > 1e-9 {
            return Err(bad("fusion.weight_lidar", "fusion weights must sum to 1"));
        }
        if self.bounds.accel_min > 0.0 || self.bounds.accel_max < self.bounds.accel_min {
            return Err(bad("vehicle.accel_min", "need accel_min <= 0 and accel_min <= accel_max"));
        }
        if self.bounds.steer_max < self.bounds.steer_min {
            return Err(bad("vehicle.steer_min", "need steer_min <= steer_max"));
        }
        Ok(())
    }

    pub fn preset_names(&self) -> Vec<&str> {
        self.presets.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Scenario for a named preset; `s3` is accepted for `s3-text`.
    pub fn scenario(&self, name: &str) -> Option<ScenarioConfig> {
        let name = if name == "s3" && !self.presets.iter().any(|(n, _)| n == "s3") { "s3-text" } else { name };
        let (name, noise) = self.presets.iter().find(|(n, _)| n == name)?;
        let mut cfg = ScenarioConfig::crossing(name, &self.geometry, noise).ok()?;
        cfg.exit_margin = self.exit_margin;
        cfg.clearance = self.clearance;
        cfg.dt = self.dt;
        cfg.max_time = self.max_time;
        cfg.runs = self.runs;
        cfg.base_seed = self.seed;
        cfg.i_count = self.ego_samples;
        cfg.j_count = self.obstacle_samples;
        cfg.vehicle = self.vehicle;
        cfg.bounds = self.bounds;
        cfg.barrier = self.barrier;
        cfg.mpc = MpcConfig { qp: self.qp, ..self.mpc };
        cfg.filter_qp = self.qp;
        cfg.obstacle_sensors[0].weight = self.weights.lidar;
        cfg.obstacle_sensors[1].weight = self.weights.camera;
        cfg.obstacle_sensors[2].weight = self.weights.v2x;
        Some(cfg)
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            _ => out.push((key, v.clone())),
        }
    }
}

fn number(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let x = match v {
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as f64,
        _ => return Err(bad(key, "expected a number")),
    };
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

fn positive(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let x = number(key, v)?;
    if x <= 0.0 {
        return Err(bad(key, "must be positive"));
    }
    Ok(x)
}

fn non_negative(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    let x = number(key, v)?;
    if x < 0.0 {
        return Err(bad(key, "must not be negative"));
    }
    Ok(x)
}

fn integer(key: &str, v: &toml::Value) -> Result<u64, ConfigError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(bad(key, "expected a non-negative integer")),
    }
}

fn count(key: &str, v: &toml::Value, min: usize) -> Result<usize, ConfigError> {
    let n = integer(key, v)? as usize;
    if n < min {
        return Err(bad(key, format!("must be at least {min}")));
    }
    Ok(n)
}

fn boolean(key: &str, v: &toml::Value) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| bad(key, "expected true or false"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_FILE: &str = include_str!("../../../configs/default.toml");

    #[test]
    fn default_file_matches_defaults() {
        assert_eq!(Settings::parse(DEFAULT_FILE).unwrap(), Settings::default());
    }

    #[test]
    fn default_scenarios_match_core_presets() {
        let s = Settings::default();
        for p in wbcvar_core::sim::scenario_presets() {
            assert_eq!(s.scenario(&p.name).unwrap(), p);
        }
        assert_eq!(s.scenario("s3").unwrap().name, "s3-text");
    }

    #[test]
    fn overrides_apply() {
        let s = Settings::parse("run.runs = 7\nsim.dt_s = 0.05\npreset.s2.gps_std = 0.3\npreset.fog.lidar_std = 2\n")
            .unwrap();
        assert_eq!(s.runs, 7);
        assert_eq!(s.dt, 0.05);
        let s2 = s.scenario("s2").unwrap();
        assert_eq!(s2.gps.std, 0.3);
        assert_eq!(s2.dt, 0.05);
        let fog = s.scenario("fog").unwrap();
        assert_eq!(fog.obstacle_sensors[0].std, 2.0);
        assert_eq!(fog.gps.std, 0.0);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("sim.nope = 1", "sim.nope"),
            ("sim.dt_s = -1", "sim.dt_s"),
            ("run.runs = \"many\"", "run.runs"),
            ("barrier.epsilon = 2.0", "barrier.epsilon"),
            ("preset.s1.colour = 1", "preset.s1.colour"),
            ("fusion.weight_v2x = 0.5", "fusion.weight_lidar"),
        ];
        for (text, key) in cases {
            let msg = Settings::parse(text).unwrap_err().to_string();
            assert!(msg.contains(key), "{text}: {msg}");
        }
        assert!(matches!(Settings::parse("sim.dt_s = = 1"), Err(ConfigError::Syntax(_))));
    }
}
