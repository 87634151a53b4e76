use nalgebra::Vector3;

use super::{BodyState, LegConfig, RobotParams};

/// Joint-space tolerance when checking limits, so values produced by
/// `leg_ik` right on a limit survive the round trip.
const LIMIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Frontal,
    Sagittal,
    Length,
}

impl std::fmt::Display for Dof {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dof::Frontal => "hip frontal angle",
            Dof::Sagittal => "hip sagittal angle",
            Dof::Length => "leg length",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("leg {leg}: {dof} = {value} outside its limits")]
    JointLimit { leg: usize, dof: Dof, value: f64 },
    #[error("leg {leg}: target unreachable, {distance:.6} m outside the reachable shell")]
    Unreachable { leg: usize, distance: f64 },
}

/// Hip-to-foot vector in the body frame.
///
/// Straight down `(0, 0, -l)`, rotated about the body pitch axis so that a
/// positive sagittal angle moves the foot forward, then about the body roll
/// axis so that a positive frontal angle moves it toward +y.
pub fn leg_vector(leg: &LegConfig) -> Vector3<f64> {
    let (sf, cf) = leg.frontal.sin_cos();
    let (ss, cs) = leg.sagittal.sin_cos();
    leg.length * Vector3::new(ss, cs * sf, -cs * cf)
}

/// Time derivative of [`leg_vector`] for joint rates `rate`.
pub fn leg_vector_rate(leg: &LegConfig, rate: &LegConfig) -> Vector3<f64> {
    let l = leg.length;
    let (sf, cf) = leg.frontal.sin_cos();
    let (ss, cs) = leg.sagittal.sin_cos();
    let d_len = Vector3::new(ss, cs * sf, -cs * cf);
    let d_sag = l * Vector3::new(cs, -ss * sf, ss * cf);
    let d_front = l * Vector3::new(0.0, cs * cf, cs * sf);
    d_len * rate.length + d_sag * rate.sagittal + d_front * rate.frontal
}

fn check_limits(leg: &LegConfig, i: usize, params: &RobotParams) -> Result<(), KinematicsError> {
    let lim = &params.leg_limits;
    if leg.frontal.abs() > lim.frontal_max + LIMIT_TOL {
        return Err(KinematicsError::JointLimit {
            leg: i,
            dof: Dof::Frontal,
            value: leg.frontal,
        });
    }
    if leg.sagittal.abs() > lim.sagittal_max + LIMIT_TOL {
        return Err(KinematicsError::JointLimit {
            leg: i,
            dof: Dof::Sagittal,
            value: leg.sagittal,
        });
    }
    if leg.length < lim.length_min - LIMIT_TOL || leg.length > lim.length_max + LIMIT_TOL {
        return Err(KinematicsError::JointLimit {
            leg: i,
            dof: Dof::Length,
            value: leg.length,
        });
    }
    Ok(())
}

pub(crate) fn foot_position_unchecked(
    body: &BodyState,
    leg: &LegConfig,
    i: usize,
    params: &RobotParams,
) -> Vector3<f64> {
    body.position + body.orientation * (params.hip_offsets[i] + leg_vector(leg))
}

/// World position of foot `i`.
pub fn foot_position(
    body: &BodyState,
    leg: &LegConfig,
    i: usize,
    params: &RobotParams,
) -> Result<Vector3<f64>, KinematicsError> {
    check_limits(leg, i, params)?;
    Ok(foot_position_unchecked(body, leg, i, params))
}

/// World velocity of foot `i` given the joint rates.
pub fn foot_velocity(
    body: &BodyState,
    leg: &LegConfig,
    rate: &LegConfig,
    i: usize,
    params: &RobotParams,
) -> Vector3<f64> {
    let rel = params.hip_offsets[i] + leg_vector(leg);
    body.velocity + body.orientation * (body.omega.cross(&rel) + leg_vector_rate(leg, rate))
}

/// Joint values placing foot `i` at `foot_world`.
pub fn leg_ik(
    body: &BodyState,
    foot_world: &Vector3<f64>,
    i: usize,
    params: &RobotParams,
) -> Result<LegConfig, KinematicsError> {
    let d = body.orientation.inverse() * (foot_world - body.position) - params.hip_offsets[i];
    let length = d.norm();
    let lim = &params.leg_limits;
    if length > lim.length_max + LIMIT_TOL {
        return Err(KinematicsError::Unreachable {
            leg: i,
            distance: length - lim.length_max,
        });
    }
    if length < lim.length_min - LIMIT_TOL {
        return Err(KinematicsError::Unreachable {
            leg: i,
            distance: lim.length_min - length,
        });
    }
    let sagittal = (d.x / length).clamp(-1.0, 1.0).asin();
    let frontal = d.y.atan2(-d.z);
    let leg = LegConfig::new(frontal, sagittal, length);
    check_limits(&leg, i, params)?;
    Ok(leg)
}
