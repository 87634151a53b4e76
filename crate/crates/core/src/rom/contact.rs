//! Spring-damper ground contact with a stick-slip tangential spring clamped
//! to the friction pyramid.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::kinematics::{foot_position_unchecked, foot_velocity};
use super::{BodyState, LegConfig, RobotParams, NUM_LEGS};
use crate::env::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootContact {
    pub in_contact: bool,
    /// Applied ground reaction force, world frame (N).
    pub grf: Vector3<f64>,
    /// Force the spring-damper asked for before the friction clamp (N).
    pub demand: Vector3<f64>,
    /// Stick reference on the ground, world xy.
    pub anchor: Option<Vector2<f64>>,
    /// True when the clamp engaged this step.
    pub slipping: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactState {
    pub feet: [FootContact; NUM_LEGS],
}

impl ContactState {
    pub fn total_force(&self) -> Vector3<f64> {
        self.feet.iter().map(|f| f.grf).sum()
    }

    pub fn contact_count(&self) -> usize {
        self.feet.iter().filter(|f| f.in_contact).count()
    }
}

/// Evaluates the ground reaction at each foot.
pub fn contact_forces(
    body: &BodyState,
    legs: &[LegConfig; NUM_LEGS],
    legs_rate: &[LegConfig; NUM_LEGS],
    contact: &ContactState,
    env: &Environment,
    params: &RobotParams,
) -> ContactState {
    let c = &params.contact;
    let mut out = ContactState::default();
    for i in 0..NUM_LEGS {
        let foot = foot_position_unchecked(body, &legs[i], i, params);
        let ground = env.ground_height(foot.x, foot.y).unwrap_or(env.ground_z);
        let depth = ground - foot.z;
        if depth <= 0.0 {
            continue;
        }
        let vel = foot_velocity(body, &legs[i], &legs_rate[i], i, params);
        let fz = (c.stiffness * depth - c.damping * vel.z).max(0.0);
        let xy = foot.xy();
        let anchor = contact.feet[i].anchor.unwrap_or(xy);
        let tangential = -c.tangential_stiffness * (xy - anchor) - c.tangential_damping * vel.xy();
        let demand = Vector3::new(tangential.x, tangential.y, fz);
        let limit = params.mu * fz;
        let grf = Vector3::new(
            tangential.x.clamp(-limit, limit),
            tangential.y.clamp(-limit, limit),
            fz,
        );
        let slipping = grf != demand;
        out.feet[i] = FootContact {
            in_contact: true,
            grf,
            demand,
            anchor: Some(if slipping { xy } else { anchor }),
            slipping,
        };
    }
    out
}
