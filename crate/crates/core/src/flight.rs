//! Cascaded flight control: position loop -> quaternion attitude PD ->
//! X-layout thrust mixer.

use nalgebra::{Matrix4, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::rom::{BodyState, RobotParams, GRAVITY, NUM_LEGS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightGains {
    /// Position gain (1/s^2).
    pub kp_pos: f64,
    /// Velocity gain (1/s).
    pub kd_pos: f64,
    /// Attitude gain on the error-quaternion vector part (1/s^2).
    pub kp_att: f64,
    /// Body-rate gain (1/s).
    pub kd_att: f64,
    /// Cap on the commanded feedback acceleration (m/s^2).
    pub a_max: f64,
    /// Cap on the commanded tilt (rad).
    pub tilt_max: f64,
}

impl Default for FlightGains {
    fn default() -> Self {
        Self {
            kp_pos: 4.0,
            kd_pos: 3.0,
            kp_att: 60.0,
            kd_att: 8.0,
            a_max: 4.0,
            tilt_max: 0.5,
        }
    }
}

impl FlightGains {
    pub fn validate(&self) -> Result<(), String> {
        let gains = [self.kp_pos, self.kd_pos, self.kp_att, self.kd_att, self.a_max];
        if gains.iter().any(|g| !(*g > 0.0)) {
            return Err("flight gains must be positive".into());
        }
        if !(self.tilt_max > 0.0 && self.tilt_max < std::f64::consts::FRAC_PI_2) {
            return Err("tilt_max must lie in (0, pi/2)".into());
        }
        Ok(())
    }
}

/// Position-loop reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightRef {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
}

impl FlightRef {
    pub fn hold(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeCommand {
    pub attitude: UnitQuaternion<f64>,
    pub thrust_total: f64,
}

/// Outer loop: PD on position with gravity feed-forward.
pub fn position_loop(
    reference: &FlightRef,
    body: &BodyState,
    gains: &FlightGains,
    params: &RobotParams,
) -> AttitudeCommand {
    let feedback = gains.kp_pos * (reference.position - body.position)
        + gains.kd_pos * (reference.velocity - body.velocity);
    let feedback = if feedback.norm() > gains.a_max {
        feedback.normalize() * gains.a_max
    } else {
        feedback
    };
    let accel = feedback + Vector3::new(0.0, 0.0, GRAVITY);

    let up = Vector3::z();
    let mut z_des = accel.normalize();
    let tilt = up.dot(&z_des).clamp(-1.0, 1.0).acos();
    if tilt > gains.tilt_max {
        let axis = up.cross(&z_des);
        z_des = match nalgebra::Unit::try_new(axis, 1e-12) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, gains.tilt_max) * up,
            None => up,
        };
    }
    let tilt_rot = UnitQuaternion::rotation_between(&up, &z_des).unwrap_or_default();
    let attitude = tilt_rot * UnitQuaternion::from_euler_angles(0.0, 0.0, reference.yaw);

    let body_z = body.orientation * up;
    let thrust_total = (params.mass * accel.dot(&body_z)).max(0.0);
    AttitudeCommand {
        attitude,
        thrust_total,
    }
}

/// Inner loop: body torques from the shortest-rotation attitude error.
pub fn attitude_loop(
    desired: &UnitQuaternion<f64>,
    body: &BodyState,
    gains: &FlightGains,
    params: &RobotParams,
) -> Vector3<f64> {
    let err = body.orientation.inverse() * desired;
    let mut e = err.into_inner();
    if e.w < 0.0 {
        e = -e;
    }
    let accel = gains.kp_att * e.vector().into_owned() - gains.kd_att * body.omega;
    params.inertia_matrix() * accel
}

/// Allocation matrix mapping thrusts to (total, roll, pitch, yaw).
pub fn allocation_matrix(params: &RobotParams) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    for j in 0..NUM_LEGS {
        let p = params.thruster_pos[j];
        a[(0, j)] = 1.0;
        a[(1, j)] = p.y;
        a[(2, j)] = -p.x;
        a[(3, j)] = RobotParams::spin_sign(j) * params.k_yaw;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixOutput {
    pub thrusts: [f64; NUM_LEGS],
    pub saturated: bool,
}

/// Largest `s` in [0, 1] keeping `base + s * dir` inside `[0, max]`.
fn feasible_fraction(base: &Vector4<f64>, dir: &Vector4<f64>, max: f64) -> f64 {
    let mut s: f64 = 1.0;
    for j in 0..NUM_LEGS {
        let next = base[j] + dir[j];
        if next > max && dir[j] > 0.0 {
            s = s.min(((max - base[j]) / dir[j]).max(0.0));
        } else if next < 0.0 && dir[j] < 0.0 {
            s = s.min((-base[j] / dir[j]).max(0.0));
        }
    }
    s
}

/// Splits total thrust and body torques across the four thrusters.
///
/// Under saturation the total is kept first, then roll/pitch torque is
/// scaled back, then yaw torque.
pub fn mixer(thrust_total: f64, torque: &Vector3<f64>, params: &RobotParams) -> MixOutput {
    let inv = allocation_matrix(params)
        .try_inverse()
        .expect("thruster layout must give an invertible allocation");
    let max = params.thrust_max;
    let exact = inv * Vector4::new(thrust_total, torque.x, torque.y, torque.z);
    if exact.iter().all(|t| (0.0..=max).contains(t)) {
        return MixOutput {
            thrusts: [exact[0], exact[1], exact[2], exact[3]],
            saturated: false,
        };
    }
    let base = (inv * Vector4::new(thrust_total, 0.0, 0.0, 0.0)).map(|t| t.clamp(0.0, max));
    let roll_pitch = inv * Vector4::new(0.0, torque.x, torque.y, 0.0);
    let yaw = inv * Vector4::new(0.0, 0.0, 0.0, torque.z);
    let a = feasible_fraction(&base, &roll_pitch, max);
    let with_rp = base + roll_pitch * a;
    let b = feasible_fraction(&with_rp, &yaw, max);
    let out = (with_rp + yaw * b).map(|t| t.clamp(0.0, max));
    MixOutput {
        thrusts: [out[0], out[1], out[2], out[3]],
        saturated: true,
    }
}

/// Full cascade from a position reference to thruster commands.
pub fn flight_control(
    reference: &FlightRef,
    body: &BodyState,
    gains: &FlightGains,
    params: &RobotParams,
) -> MixOutput {
    let cmd = position_loop(reference, body, gains, params);
    let torque = attitude_loop(&cmd.attitude, body, gains, params);
    mixer(cmd.thrust_total, &torque, params)
}
