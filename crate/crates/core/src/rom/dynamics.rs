use nalgebra::{UnitQuaternion, Vector3};

use super::contact::{contact_forces, ContactState};
use super::kinematics::foot_velocity;
use super::{BodyState, LegConfig, RobotParams, RomError, GRAVITY, NUM_LEGS};
use crate::env::Environment;

/// Advances the torso by one semi-implicit Euler step of Newton-Euler
/// dynamics. Contact forces are evaluated at the start of the step and
/// returned alongside the new body state.
#[allow(clippy::too_many_arguments)]
pub fn step(
    body: &BodyState,
    contact: &ContactState,
    legs: &[LegConfig; NUM_LEGS],
    legs_rate: &[LegConfig; NUM_LEGS],
    thrusts: &[f64; NUM_LEGS],
    dt: f64,
    env: &Environment,
    params: &RobotParams,
) -> Result<(BodyState, ContactState), RomError> {
    if !(dt > 0.0) {
        return Err(RomError::BadTimeStep(dt));
    }
    for (index, &value) in thrusts.iter().enumerate() {
        if !(0.0..=params.thrust_max).contains(&value) {
            return Err(RomError::ThrustOutOfRange {
                index,
                value,
                max: params.thrust_max,
            });
        }
    }
    let contact = contact_forces(body, legs, legs_rate, contact, env, params);
    let rot = body.orientation;

    let mut force_world = Vector3::new(0.0, 0.0, -params.mass * GRAVITY);
    let mut torque_world = Vector3::zeros();
    for (i, foot) in contact.feet.iter().enumerate() {
        if foot.in_contact {
            let lever = rot * (params.hip_offsets[i] + super::leg_vector(&legs[i]));
            force_world += foot.grf;
            torque_world += lever.cross(&foot.grf);
        }
    }
    let mut thrust_body = Vector3::zeros();
    let mut torque_body = rot.inverse() * torque_world;
    for (j, &t) in thrusts.iter().enumerate() {
        let f = Vector3::new(0.0, 0.0, t);
        thrust_body += f;
        torque_body += params.thruster_pos[j].cross(&f);
        torque_body.z += RobotParams::spin_sign(j) * params.k_yaw * t;
    }
    force_world += rot * thrust_body;

    let inertia = params.inertia_matrix();
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| RomError::InvalidParams("singular inertia".into()))?;
    let w = body.omega;
    let omega_dot = inertia_inv * (torque_body - w.cross(&(inertia * w)));

    let velocity = body.velocity + force_world / params.mass * dt;
    let omega = w + omega_dot * dt;
    let position = body.position + velocity * dt;
    let orientation = UnitQuaternion::new_normalize(
        (rot * UnitQuaternion::from_scaled_axis(omega * dt)).into_inner(),
    );
    let next = BodyState {
        position,
        orientation,
        velocity,
        omega,
    };
    Ok((next, contact))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    pub legs: [LegConfig; NUM_LEGS],
    pub thrusts: [f64; NUM_LEGS],
}

/// Everything observed during one simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    /// Body state at the end of the step.
    pub body: BodyState,
    /// Leg configuration used during the step.
    pub legs: [LegConfig; NUM_LEGS],
    pub thrusts: [f64; NUM_LEGS],
    /// Contact forces acting during the step.
    pub contact: ContactState,
    pub foot_velocity: [Vector3<f64>; NUM_LEGS],
}

/// Sequential stepping of one robot. Leg commands are clamped to the joint
/// limits and followed through a first-order servo lag whose rate saturates
/// at the joint speed caps.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    pub env: &'a Environment,
    pub params: &'a RobotParams,
    pub dt: f64,
    pub t: f64,
    pub body: BodyState,
    pub contact: ContactState,
    pub legs: [LegConfig; NUM_LEGS],
}

impl<'a> Simulator<'a> {
    pub fn new(
        env: &'a Environment,
        params: &'a RobotParams,
        dt: f64,
        body: BodyState,
        legs: [LegConfig; NUM_LEGS],
    ) -> Result<Self, RomError> {
        if !(dt > 0.0) {
            return Err(RomError::BadTimeStep(dt));
        }
        params.validate()?;
        Ok(Self {
            env,
            params,
            dt,
            t: 0.0,
            body,
            contact: ContactState::default(),
            legs: legs.map(|l| params.leg_limits.clamp(l)),
        })
    }

    /// Standing straight-legged with the feet just touching the walkable
    /// surface under the hips.
    pub fn standing(
        env: &'a Environment,
        params: &'a RobotParams,
        dt: f64,
        x: f64,
        y: f64,
    ) -> Result<Self, RomError> {
        let ground = env.ground_height(x, y).unwrap_or(env.ground_z);
        let body = BodyState::at_rest(Vector3::new(x, y, ground + params.stand_height));
        Self::new(env, params, dt, body, params.standing_legs())
    }

    fn rate_limited(&self, cmd: &[LegConfig; NUM_LEGS]) -> [LegConfig; NUM_LEGS] {
        let caps = &self.params.joint_speed;
        let gain = if caps.time_constant > 0.0 {
            (self.dt / caps.time_constant).min(1.0)
        } else {
            1.0
        };
        let da = caps.angle * self.dt;
        let dl = caps.length * self.dt;
        std::array::from_fn(|i| {
            let cur = self.legs[i];
            let cmd = self.params.leg_limits.clamp(cmd[i]);
            LegConfig::new(
                cur.frontal + (gain * (cmd.frontal - cur.frontal)).clamp(-da, da),
                cur.sagittal + (gain * (cmd.sagittal - cur.sagittal)).clamp(-da, da),
                cur.length + (gain * (cmd.length - cur.length)).clamp(-dl, dl),
            )
        })
    }

    /// Advances one step. On failure the simulator keeps its last good state.
    pub fn advance(&mut self, input: &StepInput) -> Result<StepRecord, RomError> {
        let legs = self.rate_limited(&input.legs);
        let rate: [LegConfig; NUM_LEGS] = std::array::from_fn(|i| {
            LegConfig::new(
                (legs[i].frontal - self.legs[i].frontal) / self.dt,
                (legs[i].sagittal - self.legs[i].sagittal) / self.dt,
                (legs[i].length - self.legs[i].length) / self.dt,
            )
        });
        let (body, contact) = step(
            &self.body,
            &self.contact,
            &legs,
            &rate,
            &input.thrusts,
            self.dt,
            self.env,
            self.params,
        )?;
        let t = self.t + self.dt;
        if !body.is_finite() {
            return Err(RomError::NonFinite { t });
        }
        let foot_velocity =
            std::array::from_fn(|i| foot_velocity(&self.body, &legs[i], &rate[i], i, self.params));
        self.body = body;
        self.contact = contact;
        self.legs = legs;
        self.t = t;
        Ok(StepRecord {
            t,
            dt: self.dt,
            body,
            legs,
            thrusts: input.thrusts,
            contact,
            foot_velocity,
        })
    }

    /// Holds `input` for `duration` seconds, returning every step.
    pub fn run_for(
        &mut self,
        input: &StepInput,
        duration: f64,
    ) -> Result<Vec<StepRecord>, RomError> {
        let n = (duration / self.dt).round() as usize;
        (0..n).map(|_| self.advance(input)).collect()
    }
}
