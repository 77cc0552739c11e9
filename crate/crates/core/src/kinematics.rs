//! Forward and inverse kinematics of the base / shoulder / arm / gripper chain.
//!
//! The 3-D problem splits into a base rotation about the vertical axis and a
//! planar problem in the vertical (r, z) plane through that axis. In the plane
//! the shoulder and arm links form a two-link chain; the gripper is a fixed
//! offset of length `l4` at absolute angle `g` from the horizontal.
//!
//! Joint conventions: `theta_shoulder` is measured from the horizontal,
//! `theta_elbow` is the arm link's angle relative to the shoulder link (0 when
//! straight). With the elbow raised above the shoulder-wrist line the elbow
//! angle is negative.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum KinematicsError {
    #[error("target unreachable: {0}")]
    Unreachable(Unreachable),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unreachable {
    /// Radial distance exceeds the fully stretched chain.
    BeyondTotalReach,
    /// Wrist farther from the shoulder than `l2 + l3`.
    OutsideOuterAnnulus,
    /// Wrist closer to the shoulder than `|l2 - l3|`.
    InsideInnerAnnulus,
}

impl std::fmt::Display for Unreachable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unreachable::BeyondTotalReach => "beyond total reach",
            Unreachable::OutsideOuterAnnulus => "wrist outside the outer annulus",
            Unreachable::InsideInnerAnnulus => "wrist inside the inner annulus",
        })
    }
}

/// Link lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmGeometry {
    /// Base column; the shoulder pivot sits this high above the origin.
    pub l1: f64,
    /// Shoulder link.
    pub l2: f64,
    /// Arm link.
    pub l3: f64,
    /// Gripper.
    pub l4: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry {
            l1: 0.10,
            l2: 0.20,
            l3: 0.20,
            l4: 0.10,
        }
    }
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let finite = [self.l1, self.l2, self.l3, self.l4].iter().all(|l| l.is_finite());
        if !finite || self.l1 <= 0.0 || self.l2 <= 0.0 || self.l3 <= 0.0 {
            return Err(KinematicsError::InvalidGeometry(
                "base, shoulder and arm lengths must be positive",
            ));
        }
        if self.l4 < 0.0 {
            return Err(KinematicsError::InvalidGeometry("gripper length must be non-negative"));
        }
        Ok(())
    }

    /// Longest horizontal reach, `l2 + l3 + l4`.
    pub fn total_reach(&self) -> f64 {
        self.l2 + self.l3 + self.l4
    }
}

/// End-effector target: tip position and gripper angle from the horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub g: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, g: f64) -> Pose {
        Pose { x, y, z, g }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub theta_base: f64,
    pub theta_shoulder: f64,
    pub theta_elbow: f64,
    /// Absolute gripper angle from the horizontal.
    pub g: f64,
    /// Gripper opening, 0 closed to 1 fully open.
    pub aperture: f64,
}

impl Default for JointState {
    fn default() -> Self {
        JointState {
            theta_base: 0.0,
            theta_shoulder: 0.0,
            theta_elbow: 0.0,
            g: 0.0,
            aperture: 1.0,
        }
    }
}

/// Target in the vertical plane through the base axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTarget {
    pub r: f64,
    /// Height above the shoulder pivot.
    pub z_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElbowBranch {
    #[default]
    Up,
    Down,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Splits a pose into base rotation and planar target. On the base axis the
/// rotation is undefined; `prev_base` is kept if given, else 0.
pub fn decompose_target_with_hint(
    p: &Pose,
    geo: &ArmGeometry,
    prev_base: Option<f64>,
) -> (f64, PlanarTarget) {
    let r = libm::hypot(p.x, p.y);
    let theta_base = if p.x == 0.0 && p.y == 0.0 {
        prev_base.unwrap_or(0.0)
    } else {
        wrap_angle(libm::atan2(p.y, p.x))
    };
    (
        theta_base,
        PlanarTarget {
            r,
            z_rel: p.z - geo.l1,
        },
    )
}

pub fn decompose_target(p: &Pose, geo: &ArmGeometry) -> (f64, PlanarTarget) {
    decompose_target_with_hint(p, geo, None)
}

/// Positions of the elbow, wrist and tip in the (r, z_rel) plane.
pub fn planar_chain(j: &JointState, geo: &ArmGeometry) -> [(f64, f64); 3] {
    let a1 = j.theta_shoulder;
    let a2 = j.theta_shoulder + j.theta_elbow;
    let elbow = (geo.l2 * libm::cos(a1), geo.l2 * libm::sin(a1));
    let wrist = (elbow.0 + geo.l3 * libm::cos(a2), elbow.1 + geo.l3 * libm::sin(a2));
    let tip = (wrist.0 + geo.l4 * libm::cos(j.g), wrist.1 + geo.l4 * libm::sin(j.g));
    [elbow, wrist, tip]
}

/// Planar tip position `(r, z_rel)`; `r` may be negative when the arm reaches
/// back over the base axis.
pub fn planar_tip(j: &JointState, geo: &ArmGeometry) -> PlanarTarget {
    let [_, _, (r, z_rel)] = planar_chain(j, geo);
    PlanarTarget { r, z_rel }
}

pub fn forward_kinematics(j: &JointState, geo: &ArmGeometry) -> Pose {
    let tip = planar_tip(j, geo);
    Pose {
        x: tip.r * libm::cos(j.theta_base),
        y: tip.r * libm::sin(j.theta_base),
        z: tip.z_rel + geo.l1,
        g: j.g,
    }
}

/// Planar two-link solve for a given gripper angle. Returns
/// `(theta_shoulder, theta_elbow)`.
pub fn planar_ik(
    target: &PlanarTarget,
    g: f64,
    geo: &ArmGeometry,
    branch: ElbowBranch,
) -> Result<(f64, f64), KinematicsError> {
    let wr = target.r - geo.l4 * libm::cos(g);
    let wz = target.z_rel - geo.l4 * libm::sin(g);
    let d = (wr * wr + wz * wz - geo.l2 * geo.l2 - geo.l3 * geo.l3) / (2.0 * geo.l2 * geo.l3);
    if d > 1.0 {
        return Err(KinematicsError::Unreachable(Unreachable::OutsideOuterAnnulus));
    }
    if d < -1.0 {
        return Err(KinematicsError::Unreachable(Unreachable::InsideInnerAnnulus));
    }
    let s = (1.0 - d * d).max(0.0).sqrt();
    let elbow = match branch {
        ElbowBranch::Up => libm::atan2(-s, d),
        ElbowBranch::Down => libm::atan2(s, d),
    };
    let shoulder =
        libm::atan2(wz, wr) - libm::atan2(geo.l3 * libm::sin(elbow), geo.l2 + geo.l3 * libm::cos(elbow));
    Ok((wrap_angle(shoulder), elbow))
}

/// Joint angles placing the gripper tip at `p`, elbow raised by default.
pub fn inverse_kinematics(p: &Pose, geo: &ArmGeometry) -> Result<JointState, KinematicsError> {
    inverse_kinematics_with(p, geo, ElbowBranch::Up, None)
}

pub fn inverse_kinematics_with(
    p: &Pose,
    geo: &ArmGeometry,
    branch: ElbowBranch,
    prev_base: Option<f64>,
) -> Result<JointState, KinematicsError> {
    let (theta_base, planar) = decompose_target_with_hint(p, geo, prev_base);
    if planar.r > geo.total_reach() {
        return Err(KinematicsError::Unreachable(Unreachable::BeyondTotalReach));
    }
    let (theta_shoulder, theta_elbow) = planar_ik(&planar, p.g, geo, branch)?;
    Ok(JointState {
        theta_base,
        theta_shoulder,
        theta_elbow,
        g: p.g,
        aperture: 1.0,
    })
}

/// Whether [`inverse_kinematics`] succeeds for `p`, with the failure reason.
pub fn reachable(p: &Pose, geo: &ArmGeometry) -> Result<(), Unreachable> {
    match inverse_kinematics(p, geo) {
        Ok(_) => Ok(()),
        Err(KinematicsError::Unreachable(why)) => Err(why),
        Err(KinematicsError::InvalidGeometry(_)) => Err(Unreachable::BeyondTotalReach),
    }
}

/// Gripper angles are limited to the half plane in front of the wrist.
pub fn gripper_angle_valid(g: f64) -> bool {
    (-FRAC_PI_2..=FRAC_PI_2).contains(&g)
}
