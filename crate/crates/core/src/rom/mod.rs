//! Reduced-order model of the robot: a single 6-DOF torso carried by four
//! massless, kinematically commanded legs and pushed by four thrusters.
//!
//! Each leg is described by a hip frontal angle, a hip sagittal angle and a
//! leg length, giving twelve kinematic inputs on top of the six dynamical
//! degrees of freedom of the torso.

mod contact;
mod dynamics;
mod kinematics;
mod power;

pub use contact::{contact_forces, ContactState, FootContact};
pub use dynamics::{step, Simulator, StepInput, StepRecord};
pub use kinematics::{
    foot_position, foot_velocity, leg_ik, leg_vector, leg_vector_rate, Dof, KinematicsError,
};
pub use power::{meter_power, EnergyMeter, PowerSample};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;
pub const NUM_LEGS: usize = 4;

/// Leg order used everywhere: front-left, front-right, back-left, back-right.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "BL", "BR"];

#[derive(Debug, thiserror::Error)]
pub enum RomError {
    #[error("non-finite state at t = {t:.6} s")]
    NonFinite { t: f64 },
    #[error("thruster {index} command {value} N outside [0, {max}] N")]
    ThrustOutOfRange { index: usize, value: f64, max: f64 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),
}

/// Torso state. `omega` is expressed in the body frame, everything else in
/// the world frame (z up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl BodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Roll, pitch, yaw (rad).
    pub fn euler(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }
}

/// Per-leg kinematic triple.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LegConfig {
    /// Hip frontal angle (rad); positive swings the foot toward +y.
    pub frontal: f64,
    /// Hip sagittal angle (rad); positive swings the foot toward +x.
    pub sagittal: f64,
    /// Hip-to-foot distance (m).
    pub length: f64,
}

impl LegConfig {
    pub fn new(frontal: f64, sagittal: f64, length: f64) -> Self {
        Self {
            frontal,
            sagittal,
            length,
        }
    }

    pub fn straight(length: f64) -> Self {
        Self::new(0.0, 0.0, length)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.frontal, self.sagittal, self.length]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// The twelve joint values of all legs, leg-major.
pub type JointVector = [f64; 3 * NUM_LEGS];

pub fn legs_to_joints(legs: &[LegConfig; NUM_LEGS]) -> JointVector {
    let mut out = [0.0; 3 * NUM_LEGS];
    for (i, leg) in legs.iter().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(&leg.to_array());
    }
    out
}

pub fn joints_to_legs(j: &JointVector) -> [LegConfig; NUM_LEGS] {
    std::array::from_fn(|i| LegConfig::new(j[3 * i], j[3 * i + 1], j[3 * i + 2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegLimits {
    pub length_min: f64,
    pub length_max: f64,
    pub frontal_max: f64,
    pub sagittal_max: f64,
}

impl LegLimits {
    pub fn clamp(&self, leg: LegConfig) -> LegConfig {
        LegConfig::new(
            leg.frontal.clamp(-self.frontal_max, self.frontal_max),
            leg.sagittal.clamp(-self.sagittal_max, self.sagittal_max),
            leg.length.clamp(self.length_min, self.length_max),
        )
    }

    pub fn contains(&self, leg: &LegConfig) -> bool {
        self.clamp(*leg) == *leg
    }
}

/// Joint speed caps used to rate-limit leg commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSpeedLimits {
    /// rad/s for both hip angles.
    pub angle: f64,
    /// m/s for the leg length.
    pub length: f64,
    /// Servo lag: each joint closes its command error with this time
    /// constant before the speed cap applies (s). Zero tracks in one step.
    pub time_constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness (N/m).
    pub stiffness: f64,
    /// Normal damping (N s/m).
    pub damping: f64,
    /// Stick-spring stiffness toward the foot anchor (N/m).
    pub tangential_stiffness: f64,
    /// Tangential damping (N s/m).
    pub tangential_damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Actuator-disk proxy: rotor power = coeff * thrust^1.5 (W / N^1.5).
    pub thrust_coeff: f64,
    /// Constant electronics/holding draw while any foot is loaded (W).
    pub idle_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub mass: f64,
    /// Body-frame inertia tensor, row-major (kg m^2).
    pub inertia: [[f64; 3]; 3],
    /// Hip positions in the body frame, in `LEG_NAMES` order (m).
    pub hip_offsets: [Vector3<f64>; NUM_LEGS],
    pub leg_limits: LegLimits,
    pub joint_speed: JointSpeedLimits,
    /// Ground friction coefficient.
    pub mu: f64,
    pub contact: ContactParams,
    /// Thruster positions in the body frame (m). Even indices spin one way,
    /// odd indices the other.
    pub thruster_pos: [Vector3<f64>; NUM_LEGS],
    /// Per-thruster maximum thrust (N).
    pub thrust_max: f64,
    /// Reaction torque per unit thrust (m).
    pub k_yaw: f64,
    pub power: PowerParams,
    /// Nominal COM height above the walkable surface when standing (m).
    pub stand_height: f64,
    /// Leg length held during takeoff, flight and landing (m).
    pub crouch_length: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        let hx = 0.15;
        let hy = 0.08;
        let tx = 0.15;
        let ty = 0.15;
        let tz = 0.06;
        Self {
            mass: 4.3,
            inertia: [[0.08, 0.0, 0.0], [0.0, 0.12, 0.0], [0.0, 0.0, 0.10]],
            hip_offsets: [
                Vector3::new(hx, hy, 0.0),
                Vector3::new(hx, -hy, 0.0),
                Vector3::new(-hx, hy, 0.0),
                Vector3::new(-hx, -hy, 0.0),
            ],
            leg_limits: LegLimits {
                length_min: 0.12,
                length_max: 0.38,
                frontal_max: 0.8,
                sagittal_max: 1.8,
            },
            joint_speed: JointSpeedLimits {
                angle: 12.0,
                length: 1.5,
                time_constant: 0.02,
            },
            mu: 0.8,
            contact: ContactParams {
                stiffness: 20_000.0,
                damping: 300.0,
                tangential_stiffness: 20_000.0,
                tangential_damping: 300.0,
            },
            // X layout on the torso top: FL, FR, BR, BL.
            thruster_pos: [
                Vector3::new(tx, ty, tz),
                Vector3::new(tx, -ty, tz),
                Vector3::new(-tx, -ty, tz),
                Vector3::new(-tx, ty, tz),
            ],
            thrust_max: 19.0,
            k_yaw: 0.02,
            power: PowerParams {
                thrust_coeff: 3.0,
                idle_power: 15.0,
            },
            stand_height: 0.3,
            crouch_length: 0.2,
        }
    }
}

impl RobotParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let m = self.inertia;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    pub fn weight(&self) -> f64 {
        self.mass * GRAVITY
    }

    /// Reaction-torque sign of thruster `j`.
    pub fn spin_sign(j: usize) -> f64 {
        if j.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn validate(&self) -> Result<(), RomError> {
        let bad = |m: &str| Err(RomError::InvalidParams(m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        let i = self.inertia_matrix();
        if (i - i.transpose()).abs().max() > 1e-12 {
            return bad("inertia must be symmetric");
        }
        if i.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.thrust_max > 0.0) {
            return bad("thrust_max must be positive");
        }
        let l = &self.leg_limits;
        if !(0.0 < l.length_min && l.length_min < l.length_max) {
            return bad("leg length limits must satisfy 0 < min < max");
        }
        if !(l.frontal_max > 0.0 && l.sagittal_max > 0.0) {
            return bad("hip angle limits must be positive");
        }
        if !(self.joint_speed.angle > 0.0 && self.joint_speed.length > 0.0) {
            return bad("joint speed caps must be positive");
        }
        if !(self.joint_speed.time_constant >= 0.0) {
            return bad("servo time constant must be non-negative");
        }
        if !(self.stand_height > 0.0 && self.stand_height <= l.length_max) {
            return bad("stand height must be reachable");
        }
        if !(self.crouch_length >= l.length_min && self.crouch_length <= l.length_max) {
            return bad("crouch length must be within leg limits");
        }
        Ok(())
    }

    /// Legs pointing straight down at the standing height.
    pub fn standing_legs(&self) -> [LegConfig; NUM_LEGS] {
        [LegConfig::straight(self.stand_height); NUM_LEGS]
    }

    pub fn crouch_legs(&self) -> [LegConfig; NUM_LEGS] {
        [LegConfig::straight(self.crouch_length); NUM_LEGS]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_are_valid() {
        RobotParams::default().validate().unwrap();
        assert!((RobotParams::default().weight() - 42.183).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = RobotParams::default();
        p.inertia[0][1] = 0.01;
        assert!(p.validate().is_err());
        let mut p = RobotParams::default();
        p.inertia[2][2] = -1.0;
        assert!(p.validate().is_err());
        let p = RobotParams {
            mu: 0.0,
            ..RobotParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn joint_vector_layout() {
        let legs = [
            LegConfig::new(0.1, 0.2, 0.3),
            LegConfig::new(0.4, 0.5, 0.6),
            LegConfig::new(0.7, 0.8, 0.9),
            LegConfig::new(1.0, 1.1, 1.2),
        ];
        let j = legs_to_joints(&legs);
        assert_eq!(j[4], 0.5);
        assert_eq!(joints_to_legs(&j), legs);
    }
}
