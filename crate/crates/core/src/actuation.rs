//! L293-style H-bridge logic, kinematic motor models and the arm plant.
//!
//! Motors have no inertia: a DC motor moves at its rated speed while driven
//! and stops dead otherwise; a servo slews toward its target at a fixed rate.
//! Under those assumptions every step is integrated exactly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{planar_tip, ArmGeometry, JointState};

/// Per-channel output current limit of the bridge.
pub const CHANNEL_LIMIT_MA: f64 = 600.0;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ActuationError {
    #[error("expected a {expected:?} motor")]
    KindMismatch { expected: MotorKind },
    #[error("time step {0} s outside (0, 0.1]")]
    InvalidTimeStep(f64),
    #[error("demand must be non-negative")]
    NegativeDemand,
    #[error("invalid plant config: {0}")]
    InvalidConfig(&'static str),
}

/// Logic levels on one bridge channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HBridgeInput {
    pub enable: bool,
    pub in1: bool,
    pub in2: bool,
}

impl HBridgeInput {
    pub const FORWARD: HBridgeInput = HBridgeInput {
        enable: true,
        in1: true,
        in2: false,
    };
    pub const REVERSE: HBridgeInput = HBridgeInput {
        enable: true,
        in1: false,
        in2: true,
    };
    pub const BRAKE: HBridgeInput = HBridgeInput {
        enable: true,
        in1: false,
        in2: false,
    };
    pub const COAST: HBridgeInput = HBridgeInput {
        enable: false,
        in1: false,
        in2: false,
    };

    /// All eight input combinations.
    pub fn all() -> [HBridgeInput; 8] {
        std::array::from_fn(|i| HBridgeInput {
            enable: i & 4 != 0,
            in1: i & 2 != 0,
            in2: i & 1 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveMode {
    Forward,
    Reverse,
    Brake,
    Coast,
}

impl DriveMode {
    /// Direction of travel: +1, -1 or 0.
    pub fn sign(self) -> f64 {
        match self {
            DriveMode::Forward => 1.0,
            DriveMode::Reverse => -1.0,
            DriveMode::Brake | DriveMode::Coast => 0.0,
        }
    }

    pub fn is_driving(self) -> bool {
        matches!(self, DriveMode::Forward | DriveMode::Reverse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveState {
    pub mode: DriveMode,
    pub current_ma: f64,
    pub over_current: bool,
}

impl DriveState {
    pub const IDLE: DriveState = DriveState {
        mode: DriveMode::Coast,
        current_ma: 0.0,
        over_current: false,
    };
}

/// Bridge truth table with the per-channel current clamp.
pub fn hbridge_output(inp: HBridgeInput, demand_ma: f64) -> Result<DriveState, ActuationError> {
    if !(demand_ma >= 0.0) {
        return Err(ActuationError::NegativeDemand);
    }
    let mode = match (inp.enable, inp.in1, inp.in2) {
        (false, _, _) => DriveMode::Coast,
        (true, true, false) => DriveMode::Forward,
        (true, false, true) => DriveMode::Reverse,
        (true, _, _) => DriveMode::Brake,
    };
    if mode == DriveMode::Coast {
        return Ok(DriveState::IDLE);
    }
    Ok(DriveState {
        mode,
        current_ma: demand_ma.min(CHANNEL_LIMIT_MA),
        over_current: demand_ma > CHANNEL_LIMIT_MA,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotorKind {
    Dc,
    Servo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorModel {
    pub kind: MotorKind,
    /// Full-drive speed (DC) or slew limit (servo), units per second.
    pub rate: f64,
    /// Servo angle, or accumulated DC displacement.
    pub position: f64,
}

impl MotorModel {
    pub fn dc(rate: f64) -> MotorModel {
        MotorModel {
            kind: MotorKind::Dc,
            rate,
            position: 0.0,
        }
    }

    pub fn servo(rate: f64, position: f64) -> MotorModel {
        MotorModel {
            kind: MotorKind::Servo,
            rate,
            position,
        }
    }
}

fn check_dt(dt: f64) -> Result<(), ActuationError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(ActuationError::InvalidTimeStep(dt))
    }
}

pub fn step_dc_motor(m: &MotorModel, d: &DriveState, dt: f64) -> Result<MotorModel, ActuationError> {
    if m.kind != MotorKind::Dc {
        return Err(ActuationError::KindMismatch {
            expected: MotorKind::Dc,
        });
    }
    check_dt(dt)?;
    Ok(MotorModel {
        position: m.position + d.mode.sign() * m.rate * dt,
        ..*m
    })
}

/// Moves a servo toward `target` by at most `rate * dt`.
pub fn step_servo(m: &MotorModel, target: f64, dt: f64) -> Result<MotorModel, ActuationError> {
    if m.kind != MotorKind::Servo {
        return Err(ActuationError::KindMismatch {
            expected: MotorKind::Servo,
        });
    }
    check_dt(dt)?;
    let error = target - m.position;
    let max_step = m.rate * dt;
    let position = if error.abs() <= max_step {
        target
    } else {
        m.position + max_step.copysign(error)
    };
    Ok(MotorModel { position, ..*m })
}

/// Pose of the wheeled base on the floor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    /// Heading, radians from +x.
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplyLimits {
    pub volts: f64,
    pub amps: f64,
}

impl Default for SupplyLimits {
    fn default() -> Self {
        SupplyLimits {
            volts: 36.0,
            amps: 12.0,
        }
    }
}

/// An object the gripper can pick up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadObject {
    pub mass: f64,
    /// World position, metres.
    pub position: [f64; 3],
    pub held: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Wheel surface speed at full drive, m/s.
    pub wheel_speed: f64,
    /// Distance between the two drive wheels, m.
    pub track_width: f64,
    /// Shoulder and elbow servo slew, rad/s.
    pub arm_slew: f64,
    /// Gripper servo slew, rad/s.
    pub gripper_slew: f64,
    /// Gripper servo travel from closed to fully open, rad.
    pub gripper_travel: f64,
    /// Current a running drive motor asks of its bridge channel, mA.
    pub motor_demand_ma: f64,
    /// Largest tip-to-object distance at which a closing grip captures it, m.
    pub capture_radius: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            wheel_speed: 0.2,
            track_width: 0.2,
            arm_slew: PI / 2.0,
            gripper_slew: PI,
            gripper_travel: PI / 2.0,
            motor_demand_ma: 350.0,
            capture_radius: 0.02,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), ActuationError> {
        let positive = [
            self.wheel_speed,
            self.track_width,
            self.arm_slew,
            self.gripper_slew,
            self.gripper_travel,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ActuationError::InvalidConfig("rates and dimensions must be positive"));
        }
        if !(self.motor_demand_ma >= 0.0) || !(self.capture_radius >= 0.0) {
            return Err(ActuationError::InvalidConfig(
                "motor demand and capture radius must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Setpoints for the arm servos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoTargets {
    pub shoulder: f64,
    pub elbow: f64,
    /// Gripper opening fraction in [0, 1].
    pub aperture: f64,
}

/// Everything the controller drives in one plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantCommand {
    pub left: HBridgeInput,
    pub right: HBridgeInput,
    /// Scales wheel speed, e.g. for a low-speed mode.
    pub wheel_scale: f64,
    pub servos: ServoTargets,
}

impl PlantCommand {
    /// Bridges disabled and servos held where they are.
    pub fn hold(state: &ArmState) -> PlantCommand {
        PlantCommand {
            left: HBridgeInput::COAST,
            right: HBridgeInput::COAST,
            wheel_scale: 1.0,
            servos: state.servo_positions(),
        }
    }
}

/// Complete plant state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub joints: JointState,
    pub base: BasePose,
    /// Left and right drive motors.
    pub wheels: [MotorModel; 2],
    pub shoulder: MotorModel,
    pub elbow: MotorModel,
    pub gripper: MotorModel,
    /// Bridge outputs for the left and right drive motors.
    pub drives: [DriveState; 2],
    /// Steps in which a bridge channel hit its current clamp.
    pub over_current_events: u64,
    pub payload: Option<PayloadObject>,
    pub supply: SupplyLimits,
}

impl ArmState {
    pub fn new(joints: JointState, cfg: &PlantConfig) -> ArmState {
        ArmState {
            joints,
            base: BasePose::default(),
            wheels: [MotorModel::dc(cfg.wheel_speed); 2],
            shoulder: MotorModel::servo(cfg.arm_slew, joints.theta_shoulder),
            elbow: MotorModel::servo(cfg.arm_slew, joints.theta_elbow),
            gripper: MotorModel::servo(cfg.gripper_slew, joints.aperture * cfg.gripper_travel),
            drives: [DriveState::IDLE; 2],
            over_current_events: 0,
            payload: None,
            supply: SupplyLimits::default(),
        }
    }

    pub fn servo_positions(&self) -> ServoTargets {
        ServoTargets {
            shoulder: self.shoulder.position,
            elbow: self.elbow.position,
            aperture: self.joints.aperture,
        }
    }

    /// Gripper tip in world coordinates.
    pub fn tip_world(&self, geo: &ArmGeometry) -> [f64; 3] {
        tip_world(&self.joints, &self.base, geo)
    }

    /// True while any motor is commanded to move.
    pub fn any_drive_active(&self) -> bool {
        self.drives.iter().any(|d| d.mode.is_driving())
    }
}

/// Tip position in world coordinates for joints mounted on `base`.
pub fn tip_world(joints: &JointState, base: &BasePose, geo: &ArmGeometry) -> [f64; 3] {
    let tip = planar_tip(joints, geo);
    let yaw = base.heading + joints.theta_base;
    [
        base.x + tip.r * libm::cos(yaw),
        base.y + tip.r * libm::sin(yaw),
        tip.z_rel + geo.l1,
    ]
}

/// Exact differential-drive update for constant wheel speeds over `dt`.
fn integrate_base(base: &BasePose, v_left: f64, v_right: f64, track: f64, dt: f64) -> BasePose {
    let v = (v_left + v_right) / 2.0;
    let omega = (v_right - v_left) / track;
    let h0 = base.heading;
    if omega == 0.0 {
        BasePose {
            x: base.x + v * libm::cos(h0) * dt,
            y: base.y + v * libm::sin(h0) * dt,
            heading: h0,
        }
    } else {
        let h1 = h0 + omega * dt;
        let radius = v / omega;
        BasePose {
            x: base.x + radius * (libm::sin(h1) - libm::sin(h0)),
            y: base.y - radius * (libm::cos(h1) - libm::cos(h0)),
            heading: h1,
        }
    }
}

/// Advances the plant by `dt` seconds under `cmd`.
pub fn step_plant(
    s: &ArmState,
    cmd: &PlantCommand,
    dt: f64,
    cfg: &PlantConfig,
    geo: &ArmGeometry,
) -> Result<ArmState, ActuationError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(ActuationError::InvalidTimeStep(dt));
    }
    let mut next = s.clone();

    let mut wheel_speeds = [0.0; 2];
    for (i, inp) in [cmd.left, cmd.right].into_iter().enumerate() {
        let probe = hbridge_output(inp, 0.0)?;
        let demand = if probe.mode.is_driving() {
            cfg.motor_demand_ma
        } else {
            0.0
        };
        let drive = hbridge_output(inp, demand)?;
        if drive.over_current {
            next.over_current_events += 1;
        }
        let mut wheel = s.wheels[i];
        wheel.rate = cfg.wheel_speed * cmd.wheel_scale;
        next.wheels[i] = step_dc_motor(&wheel, &drive, dt)?;
        wheel_speeds[i] = drive.mode.sign() * wheel.rate;
        next.drives[i] = drive;
    }
    next.base = integrate_base(&s.base, wheel_speeds[0], wheel_speeds[1], cfg.track_width, dt);

    next.shoulder = step_servo(&s.shoulder, cmd.servos.shoulder, dt)?;
    next.elbow = step_servo(&s.elbow, cmd.servos.elbow, dt)?;
    let aperture_target = cmd.servos.aperture.clamp(0.0, 1.0) * cfg.gripper_travel;
    next.gripper = step_servo(&s.gripper, aperture_target, dt)?;
    next.joints.theta_shoulder = next.shoulder.position;
    next.joints.theta_elbow = next.elbow.position;
    next.joints.aperture = (next.gripper.position / cfg.gripper_travel).clamp(0.0, 1.0);

    if let Some(obj) = next.payload.as_mut() {
        let tip = tip_world(&next.joints, &next.base, geo);
        if obj.held {
            if next.joints.aperture > 0.0 {
                obj.held = false;
            }
            obj.position = tip;
        } else if next.joints.aperture == 0.0 && s.joints.aperture > 0.0 {
            let d2: f64 = tip
                .iter()
                .zip(&obj.position)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2.sqrt() <= cfg.capture_radius {
                obj.held = true;
                obj.position = tip;
            }
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    fn state() -> ArmState {
        ArmState::new(JointState::default(), &cfg())
    }

    #[test]
    fn truth_table() {
        let f = hbridge_output(HBridgeInput::FORWARD, 200.0).unwrap();
        assert_eq!((f.mode, f.current_ma, f.over_current), (DriveMode::Forward, 200.0, false));
        for inp in HBridgeInput::all() {
            let d = hbridge_output(inp, 100.0).unwrap();
            let expected = match (inp.enable, inp.in1, inp.in2) {
                (false, _, _) => DriveMode::Coast,
                (true, true, false) => DriveMode::Forward,
                (true, false, true) => DriveMode::Reverse,
                _ => DriveMode::Brake,
            };
            assert_eq!(d.mode, expected, "{inp:?}");
            if !inp.enable {
                assert_eq!(d.current_ma, 0.0);
            }
        }
    }

    #[test]
    fn current_clamp() {
        let d = hbridge_output(HBridgeInput::FORWARD, 900.0).unwrap();
        assert_eq!((d.mode, d.current_ma, d.over_current), (DriveMode::Forward, 600.0, true));
        assert!(hbridge_output(HBridgeInput::FORWARD, -1.0).is_err());
    }

    #[test]
    fn dc_motor_steps() {
        let m = MotorModel::dc(1.0);
        let fwd = hbridge_output(HBridgeInput::FORWARD, 100.0).unwrap();
        let rev = hbridge_output(HBridgeInput::REVERSE, 100.0).unwrap();
        let brake = hbridge_output(HBridgeInput::BRAKE, 100.0).unwrap();
        assert_eq!(step_dc_motor(&m, &fwd, 0.5).unwrap().position, 0.5);
        assert_eq!(step_dc_motor(&m, &brake, 0.5).unwrap().position, 0.0);
        let there = step_dc_motor(&m, &fwd, 0.25).unwrap();
        assert_eq!(step_dc_motor(&there, &rev, 0.25).unwrap().position, 0.0);
        let servo = MotorModel::servo(1.0, 0.0);
        assert!(step_dc_motor(&servo, &fwd, 0.1).is_err());
    }

    #[test]
    fn servo_slew() {
        let m = MotorModel::servo(2.0, 0.0);
        assert!((step_servo(&m, 1.0, 0.1).unwrap().position - 0.2).abs() < 1e-15);
        assert_eq!(step_servo(&m, 0.0, 0.1).unwrap(), m);
        assert!(step_servo(&MotorModel::dc(1.0), 1.0, 0.1).is_err());
    }

    #[test]
    fn servo_converges_in_expected_steps() {
        for (delta, rate, dt) in [(1.0, 2.0, 0.1), (0.35, 1.0, 0.03), (-2.0, 3.0, 0.07)] {
            // Loop oracle: count whole slew steps needed to cover |delta|.
            let mut remaining: f64 = f64::abs(delta);
            let mut expected = 0;
            while remaining > 1e-12 {
                remaining -= rate * dt;
                expected += 1;
            }
            let mut m = MotorModel::servo(rate, 0.0);
            let mut steps = 0;
            while m.position != delta {
                m = step_servo(&m, delta, dt).unwrap();
                steps += 1;
                assert!(steps < 1000);
            }
            assert_eq!(steps, expected, "delta {delta} rate {rate} dt {dt}");
        }
    }

    #[test]
    fn base_translation_and_rotation() {
        let s = state();
        let fwd = PlantCommand {
            left: HBridgeInput::FORWARD,
            right: HBridgeInput::FORWARD,
            ..PlantCommand::hold(&s)
        };
        let mut t = s.clone();
        for _ in 0..10 {
            t = step_plant(&t, &fwd, 0.1, &cfg(), &ArmGeometry::default()).unwrap();
        }
        assert!((t.base.x - 0.2).abs() < 1e-12 && t.base.y.abs() < 1e-12);
        assert_eq!(t.joints, s.joints);

        let spin = PlantCommand {
            left: HBridgeInput::FORWARD,
            right: HBridgeInput::REVERSE,
            ..PlantCommand::hold(&s)
        };
        let r = step_plant(&s, &spin, 0.1, &cfg(), &ArmGeometry::default()).unwrap();
        assert!(r.base.heading < 0.0);
        assert!(r.base.x.abs() < 1e-15 && r.base.y.abs() < 1e-15);
    }

    #[test]
    fn zero_command_is_identity() {
        let s = state();
        let next = step_plant(&s, &PlantCommand::hold(&s), 0.05, &cfg(), &ArmGeometry::default()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn rejects_bad_time_step() {
        let s = state();
        let cmd = PlantCommand::hold(&s);
        assert!(step_plant(&s, &cmd, 0.0, &cfg(), &ArmGeometry::default()).is_err());
        assert!(step_plant(&s, &cmd, 0.2, &cfg(), &ArmGeometry::default()).is_err());
    }

    #[test]
    fn over_current_is_counted() {
        let hungry = PlantConfig {
            motor_demand_ma: 900.0,
            ..cfg()
        };
        let s = ArmState::new(JointState::default(), &hungry);
        let cmd = PlantCommand {
            left: HBridgeInput::FORWARD,
            ..PlantCommand::hold(&s)
        };
        let next = step_plant(&s, &cmd, 0.1, &hungry, &ArmGeometry::default()).unwrap();
        assert_eq!(next.over_current_events, 1);
        assert_eq!(next.drives[0].current_ma, 600.0);
    }

    #[test]
    fn grip_captures_and_releases() {
        let geo = ArmGeometry::default();
        let mut s = state();
        let tip = s.tip_world(&geo);
        s.payload = Some(PayloadObject {
            mass: 1.0,
            position: [tip[0] + 0.01, tip[1], tip[2]],
            held: false,
        });
        let close = PlantCommand {
            servos: ServoTargets {
                aperture: 0.0,
                ..s.servo_positions()
            },
            ..PlantCommand::hold(&s)
        };
        for _ in 0..10 {
            s = step_plant(&s, &close, 0.1, &cfg(), &geo).unwrap();
        }
        let obj = s.payload.unwrap();
        assert!(obj.held);
        assert_eq!(obj.position, s.tip_world(&geo));

        let open = PlantCommand {
            servos: ServoTargets {
                aperture: 1.0,
                ..s.servo_positions()
            },
            ..PlantCommand::hold(&s)
        };
        s = step_plant(&s, &open, 0.01, &cfg(), &geo).unwrap();
        assert!(!s.payload.unwrap().held);
    }
}
