//! Plain-text (TOML) configuration. Every section is optional; missing keys
//! take their defaults. Angles are in degrees here and radians everywhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{PlantConfig, SupplyLimits};
use crate::controller::KeyMap;
use crate::detector::DetectorConfig;
use crate::kinematics::{gripper_angle_valid, ArmGeometry, JointState};
use crate::signal::{SampleRate, ToneParams};
use crate::statics::{joint_load_torques, JointTorques, LinkMasses, StaticsConstants};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticsConfig {
    pub gravity: f64,
    pub link_masses: LinkMasses,
    /// Holding torque each joint motor can supply, N*m.
    pub motor_limits: JointTorques,
    /// Payload the arm is rated for, kg.
    pub rated_payload: f64,
}

impl StaticsConfig {
    pub fn constants(&self) -> StaticsConstants {
        StaticsConstants {
            gravity: self.gravity,
        }
    }
}

impl Default for StaticsConfig {
    fn default() -> Self {
        let constants = StaticsConstants::default();
        let link_masses = LinkMasses {
            shoulder: 0.3,
            arm: 0.3,
            gripper: 0.1,
        };
        let rated_payload = 10.0;
        // Full horizontal reach is the worst case for every joint; 5% headroom.
        let worst = joint_load_torques(
            &JointState::default(),
            &ArmGeometry::default(),
            &link_masses,
            rated_payload,
            &constants,
        )
        .expect("default masses are valid");
        StaticsConfig {
            gravity: constants.gravity,
            link_masses,
            motor_limits: JointTorques::from_array(worst.as_array().map(|t| t * 1.05)),
            rated_payload,
        }
    }
}

/// Home pose, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomePose {
    pub base_deg: f64,
    pub shoulder_deg: f64,
    pub elbow_deg: f64,
    pub gripper_deg: f64,
    pub aperture: f64,
}

impl Default for HomePose {
    fn default() -> Self {
        // Elbow raised, gripper pointing straight down, tip just above the floor.
        HomePose {
            base_deg: 0.0,
            shoulder_deg: 60.0,
            elbow_deg: -90.0,
            gripper_deg: -90.0,
            aperture: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    /// Vertical jog speed of the arm target, m/s.
    pub jog_speed: f64,
    /// Speed multiplier in the low speed level.
    pub low_speed_scale: f64,
    /// Lowest height the tip may be jogged to, m.
    pub floor_z: f64,
    pub home: HomePose,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        ControllerSettings {
            jog_speed: 0.05,
            low_speed_scale: 0.5,
            floor_z: 0.0,
            home: HomePose::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub mass: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub object: Option<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    /// Plant step, seconds.
    pub dt: f64,
    /// Run length; defaults to the last press plus `settle_s`.
    pub duration_s: Option<f64>,
    pub settle_s: f64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            dt: 0.01,
            duration_s: None,
            settle_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub snapshot_hz: u32,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings { snapshot_hz: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sample_rate: u32,
    pub tone: ToneParams,
    /// Thresholds; `block_size` is given for 8 kHz and scaled to `sample_rate`.
    pub detector: DetectorConfig,
    pub geometry: ArmGeometry,
    pub plant: PlantConfig,
    pub supply: SupplyLimits,
    pub statics: StaticsConfig,
    pub controller: ControllerSettings,
    pub keymap: KeyMap,
    pub scene: Scene,
    pub episode: EpisodeSettings,
    pub service: ServiceSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            sample_rate: 8000,
            tone: ToneParams::default(),
            detector: DetectorConfig::default(),
            geometry: ArmGeometry::default(),
            plant: PlantConfig::default(),
            supply: SupplyLimits::default(),
            statics: StaticsConfig::default(),
            controller: ControllerSettings::default(),
            keymap: KeyMap::default(),
            scene: Scene::default(),
            episode: EpisodeSettings::default(),
            service: ServiceSettings::default(),
        }
    }
}

fn invalid(e: impl ToString) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        Config::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sample rate; only valid after [`Config::validate`].
    pub fn sample_rate(&self) -> SampleRate {
        SampleRate::new(self.sample_rate).expect("validated sample rate")
    }

    pub fn home_joints(&self) -> JointState {
        let h = &self.controller.home;
        JointState {
            theta_base: h.base_deg.to_radians(),
            theta_shoulder: h.shoulder_deg.to_radians(),
            theta_elbow: h.elbow_deg.to_radians(),
            g: h.gripper_deg.to_radians(),
            aperture: h.aperture,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let rate = SampleRate::new(self.sample_rate).map_err(invalid)?;
        self.tone.validate().map_err(invalid)?;
        if self.tone.amplitude + self.tone.high_amplitude() > 1.0 {
            return Err(invalid("tone amplitude and twist exceed full scale"));
        }
        self.detector.scaled_to(rate).validate().map_err(invalid)?;
        self.geometry.validate().map_err(invalid)?;
        self.plant.validate().map_err(invalid)?;
        let s = &self.statics;
        if !(s.gravity > 0.0) {
            return Err(invalid("gravity must be positive"));
        }
        if s.motor_limits.as_array().iter().any(|l| !(*l > 0.0)) {
            return Err(invalid("motor limits must be positive"));
        }
        let m = &s.link_masses;
        if [m.shoulder, m.arm, m.gripper, s.rated_payload]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(invalid("masses must be non-negative"));
        }
        let c = &self.controller;
        if !(c.jog_speed > 0.0) {
            return Err(invalid("jog_speed must be positive"));
        }
        if !(c.low_speed_scale > 0.0 && c.low_speed_scale <= 1.0) {
            return Err(invalid("low_speed_scale must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&c.home.aperture) {
            return Err(invalid("home aperture must lie in [0, 1]"));
        }
        if !gripper_angle_valid(c.home.gripper_deg.to_radians()) {
            return Err(invalid("home gripper angle must lie in [-90, 90] degrees"));
        }
        if !(self.episode.dt > 0.0 && self.episode.dt <= 0.1) {
            return Err(invalid("episode dt must lie in (0, 0.1]"));
        }
        if !(self.episode.settle_s >= 0.0) {
            return Err(invalid("settle_s must be non-negative"));
        }
        if !(1..=60).contains(&self.service.snapshot_hz) {
            return Err(invalid("snapshot_hz must lie in 1..=60"));
        }
        if let Some(o) = &self.scene.object {
            if !(o.mass >= 0.0) {
                return Err(invalid("scene object mass must be non-negative"));
            }
        }
        Ok(())
    }
}
