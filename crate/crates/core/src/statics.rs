//! Static torque balance and payload feasibility.
//!
//! Gravity loads are point masses: each link's mass sits at its midpoint and
//! the payload at the gripper tip. A joint's load torque is the sum over the
//! masses distal to it of `m * g * (horizontal distance from the joint)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{planar_chain, ArmGeometry, JointState};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum StaticsError {
    #[error("mass must be non-negative, got {0}")]
    NegativeMass(f64),
    #[error("inputs must be non-negative")]
    NegativeInput,
    #[error("cannot solve for force with a zero moment arm")]
    DivisionByZeroMomentArm,
    #[error("cannot solve for moment arm with zero force")]
    DivisionByZeroForce,
    #[error("exactly two of torque, force and moment arm must be given")]
    WrongKnownCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticsConstants {
    /// m/s^2
    pub gravity: f64,
}

impl Default for StaticsConstants {
    fn default() -> Self {
        StaticsConstants { gravity: 9.81 }
    }
}

/// A point mass at a perpendicular distance from a pivot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub mass: f64,
    pub arm_length: f64,
}

impl Load {
    pub fn torque(&self, c: &StaticsConstants) -> Result<f64, StaticsError> {
        holding_torque(self.mass, self.arm_length, c)
    }
}

/// Weight of a mass, `F = M g`.
pub fn force_from_mass(mass: f64, c: &StaticsConstants) -> Result<f64, StaticsError> {
    if !(mass >= 0.0) {
        return Err(StaticsError::NegativeMass(mass));
    }
    Ok(mass * c.gravity)
}

/// `T = F L`.
pub fn torque_from_force(force: f64, arm_length: f64) -> Result<f64, StaticsError> {
    if !(force >= 0.0 && arm_length >= 0.0) {
        return Err(StaticsError::NegativeInput);
    }
    Ok(force * arm_length)
}

/// Torque needed to hold `mass` at `arm_length` from the pivot, `T = (M g) L`.
pub fn holding_torque(mass: f64, arm_length: f64, c: &StaticsConstants) -> Result<f64, StaticsError> {
    if !(arm_length >= 0.0) {
        return Err(StaticsError::NegativeInput);
    }
    if !(mass >= 0.0) {
        return Err(StaticsError::NegativeInput);
    }
    torque_from_force(force_from_mass(mass, c)?, arm_length)
}

/// Two of the three quantities in `F L - T = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BalanceKnowns {
    pub torque: Option<f64>,
    pub force: Option<f64>,
    pub arm_length: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BalanceSolution {
    Torque(f64),
    Force(f64),
    ArmLength(f64),
}

impl BalanceSolution {
    pub fn value(self) -> f64 {
        match self {
            BalanceSolution::Torque(v) | BalanceSolution::Force(v) | BalanceSolution::ArmLength(v) => v,
        }
    }
}

/// Solves the torque balance for whichever quantity is missing.
pub fn balance_solve(k: BalanceKnowns) -> Result<BalanceSolution, StaticsError> {
    let non_negative = |v: Option<f64>| v.is_none_or(|v| v >= 0.0);
    if !(non_negative(k.torque) && non_negative(k.force) && non_negative(k.arm_length)) {
        return Err(StaticsError::NegativeInput);
    }
    match (k.torque, k.force, k.arm_length) {
        (None, Some(f), Some(l)) => Ok(BalanceSolution::Torque(f * l)),
        (Some(t), None, Some(l)) => {
            if l == 0.0 {
                Err(StaticsError::DivisionByZeroMomentArm)
            } else {
                Ok(BalanceSolution::Force(t / l))
            }
        }
        (Some(t), Some(f), None) => {
            if f == 0.0 {
                Err(StaticsError::DivisionByZeroForce)
            } else {
                Ok(BalanceSolution::ArmLength(t / f))
            }
        }
        _ => Err(StaticsError::WrongKnownCount),
    }
}

/// Masses of the shoulder, arm and gripper links in kg.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkMasses {
    pub shoulder: f64,
    pub arm: f64,
    pub gripper: f64,
}

impl LinkMasses {
    pub fn massless() -> LinkMasses {
        LinkMasses::default()
    }

    fn validate(&self) -> Result<(), StaticsError> {
        for m in [self.shoulder, self.arm, self.gripper] {
            if !(m >= 0.0) {
                return Err(StaticsError::NegativeMass(m));
            }
        }
        Ok(())
    }
}

/// Per-joint values for the three planar joints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct JointTorques {
    pub shoulder: f64,
    pub elbow: f64,
    pub wrist: f64,
}

impl JointTorques {
    pub fn as_array(&self) -> [f64; 3] {
        [self.shoulder, self.elbow, self.wrist]
    }

    pub fn from_array(a: [f64; 3]) -> JointTorques {
        JointTorques {
            shoulder: a[0],
            elbow: a[1],
            wrist: a[2],
        }
    }
}

pub const JOINT_NAMES: [&str; 3] = ["shoulder", "elbow", "wrist"];

/// Gravity moment at the shoulder, elbow and wrist. Positive values tip the
/// arm downward away from the base; the sign flips when the load sits behind
/// the joint.
pub fn joint_load_torques(
    j: &JointState,
    geo: &ArmGeometry,
    masses: &LinkMasses,
    payload: f64,
    c: &StaticsConstants,
) -> Result<JointTorques, StaticsError> {
    masses.validate()?;
    if !(payload >= 0.0) {
        return Err(StaticsError::NegativeMass(payload));
    }
    let [elbow, wrist, tip] = planar_chain(j, geo);
    let joints_r = [0.0, elbow.0, wrist.0];
    let midpoint = |a: (f64, f64), b: (f64, f64)| (a.0 + b.0) / 2.0;
    // (horizontal position, mass, index of the most distal joint it loads)
    let loads = [
        (midpoint((0.0, 0.0), elbow), masses.shoulder, 0),
        (midpoint(elbow, wrist), masses.arm, 1),
        (midpoint(wrist, tip), masses.gripper, 2),
        (tip.0, payload, 2),
    ];
    let mut torques = [0.0; 3];
    for (joint, torque) in torques.iter_mut().enumerate() {
        *torque = loads
            .iter()
            .filter(|(_, _, last)| *last >= joint)
            .map(|(r, m, _)| m * c.gravity * (r - joints_r[joint]))
            .sum();
    }
    Ok(JointTorques::from_array(torques))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointMargin {
    pub joint: &'static str,
    pub required: f64,
    pub limit: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayloadVerdict {
    pub payload_kg: f64,
    pub pass: bool,
    pub joints: Vec<JointMargin>,
    /// Set when every gravity moment arm is ~0, so the verdict says nothing
    /// about capacity in other orientations.
    pub orientation_dependent: bool,
}

impl PayloadVerdict {
    pub fn margins(&self) -> [f64; 3] {
        [self.joints[0].margin, self.joints[1].margin, self.joints[2].margin]
    }
}

/// Compares required holding torque with each joint's motor limit.
pub fn payload_check(
    j: &JointState,
    geo: &ArmGeometry,
    masses: &LinkMasses,
    payload: f64,
    limits: &JointTorques,
    c: &StaticsConstants,
) -> Result<PayloadVerdict, StaticsError> {
    if limits.as_array().iter().any(|l| !(*l > 0.0)) {
        return Err(StaticsError::NegativeInput);
    }
    let required = joint_load_torques(j, geo, masses, payload, c)?;
    let joints: Vec<JointMargin> = required
        .as_array()
        .iter()
        .zip(limits.as_array())
        .zip(JOINT_NAMES)
        .map(|((&req, limit), joint)| JointMargin {
            joint,
            required: req.abs(),
            limit,
            margin: limit - req.abs(),
        })
        .collect();
    let [_, _, tip] = planar_chain(j, geo);
    Ok(PayloadVerdict {
        payload_kg: payload,
        pass: joints.iter().all(|m| m.margin >= 0.0),
        orientation_dependent: tip.0.abs() < 1e-9 && payload > 0.0,
        joints,
    })
}

/// Motor limits that let `geo` hold `payload` at full horizontal reach with
/// massless links.
pub fn limits_for_payload(geo: &ArmGeometry, payload: f64, c: &StaticsConstants) -> JointTorques {
    JointTorques {
        shoulder: payload * c.gravity * geo.total_reach(),
        elbow: payload * c.gravity * (geo.l3 + geo.l4),
        wrist: payload * c.gravity * geo.l4,
    }
}
