//! Legged control: gait-driven foot targets, leg inverse kinematics, and a
//! reference governor that only lets the applied joint reference advance as
//! far as a short model prediction keeps every stance force inside the
//! friction pyramid.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::gait::{gait_phase, swing_trajectory, GaitSchedule};
use crate::rom::{
    foot_position, joints_to_legs, leg_ik, legs_to_joints, BodyState, JointVector,
    KinematicsError, LegConfig, RobotParams, RomError, Simulator, StepInput, NUM_LEGS,
};

/// Default touchdown shift per m/s of velocity error (s). Walking on the
/// default robot stays upright for gains between about 0.25 and 0.7.
pub const DEFAULT_PLACEMENT_GAIN: f64 = 0.5;

/// Number of step halvings tried when the full governor step is infeasible.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum GroundError {
    #[error("force probe failed: {0}")]
    Probe(#[from] RomError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid governor parameters: {0}")]
    InvalidParams(String),
}

/// True iff `f` is a compressive force inside the linearized friction cone.
pub fn friction_pyramid_ok(f: &Vector3<f64>, mu: f64) -> bool {
    f.z >= 0.0 && f.x.abs() <= mu * f.z && f.y.abs() <= mu * f.z
}

/// Predicts the ground forces a candidate joint reference would produce.
pub trait ForceProbe {
    /// Forces at each foot for each of the next `horizon` steps.
    fn predict(
        &mut self,
        reference: &JointVector,
        horizon: usize,
    ) -> Result<Vec<[Vector3<f64>; NUM_LEGS]>, GroundError>;
}

impl<F> ForceProbe for F
where
    F: FnMut(&JointVector, usize) -> Result<Vec<[Vector3<f64>; NUM_LEGS]>, GroundError>,
{
    fn predict(
        &mut self,
        reference: &JointVector,
        horizon: usize,
    ) -> Result<Vec<[Vector3<f64>; NUM_LEGS]>, GroundError> {
        self(reference, horizon)
    }
}

/// Rolls a copy of the simulator forward holding the candidate reference and
/// reports the pre-clamp force demand at each foot.
pub struct SimProbe<'s, 'a> {
    pub sim: &'s Simulator<'a>,
    pub thrusts: [f64; NUM_LEGS],
}

impl ForceProbe for SimProbe<'_, '_> {
    fn predict(
        &mut self,
        reference: &JointVector,
        horizon: usize,
    ) -> Result<Vec<[Vector3<f64>; NUM_LEGS]>, GroundError> {
        let mut sim = self.sim.clone();
        let input = StepInput {
            legs: joints_to_legs(reference),
            thrusts: self.thrusts,
        };
        (0..horizon)
            .map(|_| {
                let rec = sim.advance(&input)?;
                Ok(rec.contact.feet.map(|f| f.demand))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    /// Fraction of the remaining reference error taken per update, in (0, 1].
    pub kappa: f64,
    /// Prediction length in simulation steps; 0 disables the feasibility check.
    pub horizon: usize,
}

impl Default for GovernorParams {
    fn default() -> Self {
        Self {
            kappa: 0.3,
            horizon: 5,
        }
    }
}

impl GovernorParams {
    /// Pass-through: no filtering, no prediction.
    pub fn disabled() -> Self {
        Self {
            kappa: 1.0,
            horizon: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GroundError> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(GroundError::InvalidParams(format!(
                "kappa must lie in (0, 1], got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorState {
    pub applied: JointVector,
    pub params: GovernorParams,
}

/// Result of one governor update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorStep {
    pub state: GovernorState,
    /// Fraction of the kappa-step actually taken, in [0, 1].
    pub fraction: f64,
}

impl GovernorState {
    pub fn new(applied: JointVector, params: GovernorParams) -> Self {
        Self { applied, params }
    }

    fn candidate(&self, target: &JointVector, fraction: f64) -> JointVector {
        let step = self.params.kappa * fraction;
        std::array::from_fn(|k| self.applied[k] + step * (target[k] - self.applied[k]))
    }
}

fn feasible(
    candidate: &JointVector,
    probe: &mut impl ForceProbe,
    stance: &[bool; NUM_LEGS],
    horizon: usize,
    mu: f64,
) -> Result<bool, GroundError> {
    if horizon == 0 {
        return Ok(true);
    }
    let forces = probe.predict(candidate, horizon)?;
    Ok(forces.iter().all(|step| {
        (0..NUM_LEGS).all(|i| !stance[i] || friction_pyramid_ok(&step[i], mu))
    }))
}

/// Moves the applied reference toward `target` by at most `kappa` of the
/// remaining error, backing off by bisection until the probe predicts no
/// friction-pyramid violation at any stance foot.
pub fn governor_update(
    gov: &GovernorState,
    target: &JointVector,
    probe: &mut impl ForceProbe,
    stance: &[bool; NUM_LEGS],
    mu: f64,
) -> Result<GovernorStep, GroundError> {
    let horizon = gov.params.horizon;
    if target == &gov.applied {
        return Ok(GovernorStep {
            state: *gov,
            fraction: 1.0,
        });
    }
    let mut fraction = 1.0;
    if !feasible(&gov.candidate(target, 1.0), probe, stance, horizon, mu)? {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..MAX_HALVINGS {
            let mid = 0.5 * (lo + hi);
            if feasible(&gov.candidate(target, mid), probe, stance, horizon, mu)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        fraction = lo;
    }
    let applied = if fraction == 0.0 {
        gov.applied
    } else {
        gov.candidate(target, fraction)
    };
    Ok(GovernorStep {
        state: GovernorState {
            applied,
            params: gov.params,
        },
        fraction,
    })
}

/// Joint targets placing each foot at `feet` for the body pose `body`.
pub fn feet_ik(
    body: &BodyState,
    feet: &[Vector3<f64>; NUM_LEGS],
    params: &RobotParams,
) -> Result<JointVector, KinematicsError> {
    let mut legs = params.standing_legs();
    for i in 0..NUM_LEGS {
        legs[i] = leg_ik(body, &feet[i], i, params)?;
    }
    Ok(legs_to_joints(&legs))
}

/// Like [`feet_ik`], but a target outside a leg's workspace is replaced by
/// the nearest joint values within the limits instead of failing.
pub fn feet_ik_saturated(body: &BodyState, feet: &[Vector3<f64>; NUM_LEGS], params: &RobotParams) -> JointVector {
    let legs = std::array::from_fn(|i| {
        let d = body.orientation.inverse() * (feet[i] - body.position) - params.hip_offsets[i];
        let length = d.norm().max(f64::EPSILON);
        let leg = LegConfig::new(d.y.atan2(-d.z), (d.x / length).clamp(-1.0, 1.0).asin(), length);
        params.leg_limits.clamp(leg)
    });
    legs_to_joints(&legs)
}

/// Inverse kinematics of the foot targets followed by the governor.
pub fn track_feet(
    body: &BodyState,
    feet: &[Vector3<f64>; NUM_LEGS],
    gov: &GovernorState,
    probe: &mut impl ForceProbe,
    stance: &[bool; NUM_LEGS],
    params: &RobotParams,
) -> Result<GovernorStep, GroundError> {
    let target = feet_ik(body, feet, params)?;
    governor_update(gov, &target, probe, stance, params.mu)
}

/// Desired torso motion handed to the legged controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyRef {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Horizontal travel velocity, used for foot placement (m/s).
    pub velocity: Vector3<f64>,
}

impl BodyRef {
    pub fn hold(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            velocity: Vector3::zeros(),
        }
    }

    fn pose(&self) -> BodyState {
        BodyState {
            position: self.position,
            orientation: self.orientation,
            velocity: self.velocity,
            omega: Vector3::zeros(),
        }
    }
}

/// One control tick of the legged controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeggedCommand {
    pub joints: JointVector,
    /// Raw inverse-kinematics target before the governor.
    pub target: JointVector,
    pub stance: [bool; NUM_LEGS],
    pub foot_targets: [Vector3<f64>; NUM_LEGS],
    pub governor_fraction: f64,
}

/// Trot-style foot scheduling on top of [`track_feet`].
///
/// Stance feet hold the world point where they actually touched down. Swing feet
/// travel from their lift-off point to a touchdown point ahead of the hip,
/// following [`swing_trajectory`] vertically.
#[derive(Debug, Clone)]
pub struct LeggedController {
    pub gait: GaitSchedule,
    pub governor: GovernorState,
    /// Touchdown shift per m/s of horizontal velocity error (s). Moves the
    /// feet toward the direction the body is drifting. Only used by gaits
    /// that sometimes have fewer than three feet down; static gaits keep
    /// the COM inside the support polygon instead.
    pub placement_gain: f64,
    clock_origin: f64,
    stance_feet: [Vector3<f64>; NUM_LEGS],
    liftoff: [Vector3<f64>; NUM_LEGS],
    was_stance: [bool; NUM_LEGS],
}

impl LeggedController {
    /// Starts the gait clock at the simulator's current time with every foot
    /// anchored where it currently is.
    pub fn new(
        gait: GaitSchedule,
        governor: GovernorParams,
        sim: &Simulator<'_>,
    ) -> Result<Self, GroundError> {
        governor.validate()?;
        let mut feet = [Vector3::zeros(); NUM_LEGS];
        for (i, foot) in feet.iter_mut().enumerate() {
            *foot = foot_position(&sim.body, &sim.legs[i], i, sim.params)?;
            foot.z = sim
                .env
                .ground_height(foot.x, foot.y)
                .unwrap_or(sim.env.ground_z);
        }
        Ok(Self {
            gait,
            governor: GovernorState::new(legs_to_joints(&sim.legs), governor),
            placement_gain: DEFAULT_PLACEMENT_GAIN,
            clock_origin: sim.t,
            stance_feet: feet,
            liftoff: feet,
            was_stance: [true; NUM_LEGS],
        })
    }

    pub fn gait_time(&self, t: f64) -> f64 {
        (t - self.clock_origin).max(0.0)
    }

    /// Replaces the gait, restarting its clock at `t`.
    pub fn set_gait(&mut self, gait: GaitSchedule, t: f64) {
        self.gait = gait;
        self.clock_origin = t;
    }

    pub fn stance_feet(&self) -> &[Vector3<f64>; NUM_LEGS] {
        &self.stance_feet
    }

    fn ground_at(env: &Environment, x: f64, y: f64) -> f64 {
        env.ground_height(x, y).unwrap_or(env.ground_z)
    }

    /// Foot touchdown point for leg `i`: under the hip at the body reference,
    /// led by half the stance travel and shifted along the velocity error.
    fn touchdown_point(&self, i: usize, body: &BodyRef, remaining: f64, sim: &Simulator) -> Vector3<f64> {
        let (_, _, yaw) = body.orientation.euler_angles();
        let heading = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let vel = Vector3::new(body.velocity.x, body.velocity.y, 0.0);
        let stance_time = if self.gait.freq > 0.0 {
            self.gait.duty / self.gait.freq
        } else {
            0.0
        };
        let gain = if self.gait.is_static() { 0.0 } else { self.placement_gain };
        let drift = sim.body.velocity - body.velocity;
        let drift = Vector3::new(drift.x, drift.y, 0.0) * gain;
        let mut p = body.position
            + heading * sim.params.hip_offsets[i]
            + vel * (remaining + 0.5 * stance_time)
            + drift;
        p.z = Self::ground_at(sim.env, p.x, p.y);
        p
    }

    /// Computes the joint command for the current simulator time.
    pub fn command(
        &mut self,
        body: &BodyRef,
        sim: &Simulator<'_>,
        thrusts: [f64; NUM_LEGS],
    ) -> Result<LeggedCommand, GroundError> {
        let phases = gait_phase(self.gait_time(sim.t), &self.gait);
        let swing_time = if self.gait.freq > 0.0 {
            (1.0 - self.gait.duty) / self.gait.freq
        } else {
            0.0
        };
        let mut feet = [Vector3::zeros(); NUM_LEGS];
        let mut stance = [true; NUM_LEGS];
        for i in 0..NUM_LEGS {
            let ph = phases[i];
            stance[i] = ph.stance;
            if ph.stance {
                if !self.was_stance[i] {
                    // touchdown: hold the foot where it actually landed, so
                    // the stance feet never pull against each other
                    let mut p = foot_position(&sim.body, &sim.legs[i], i, sim.params)?;
                    p.z = Self::ground_at(sim.env, p.x, p.y);
                    self.stance_feet[i] = p;
                }
                feet[i] = self.stance_feet[i];
            } else {
                if self.was_stance[i] {
                    self.liftoff[i] = self.stance_feet[i];
                }
                let u = self.gait.swing_progress(&ph).unwrap_or(1.0);
                let land = self.touchdown_point(i, body, (1.0 - u) * swing_time, sim);
                let (_, dz) = swing_trajectory(u, &self.gait);
                let mut p = self.liftoff[i] + (land - self.liftoff[i]) * u;
                p.z += dz;
                feet[i] = p;
                self.stance_feet[i] = land;
            }
            self.was_stance[i] = ph.stance;
        }
        let pose = body.pose();
        let target = feet_ik(&pose, &feet, sim.params).unwrap_or_else(|_| feet_ik_saturated(&pose, &feet, sim.params));
        let mut probe = SimProbe { sim, thrusts };
        let step = governor_update(&self.governor, &target, &mut probe, &stance, sim.params.mu)?;
        self.governor = step.state;
        Ok(LeggedCommand {
            joints: step.state.applied,
            target,
            stance,
            foot_targets: feet,
            governor_fraction: step.fraction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Aabb;
    use nalgebra::Point3;

    #[test]
    fn pyramid_examples() {
        assert!(friction_pyramid_ok(&Vector3::new(5.0, 0.0, 10.0), 0.8));
        assert!(!friction_pyramid_ok(&Vector3::new(9.0, 0.0, 10.0), 0.8));
        assert!(!friction_pyramid_ok(&Vector3::new(0.0, 0.0, -1.0), 0.8));
        assert!(friction_pyramid_ok(&Vector3::zeros(), 0.8));
    }

    /// Analytic probe: tangential force grows linearly with joint 0.
    fn linear_probe(
        gain: f64,
        fz: f64,
    ) -> impl FnMut(&JointVector, usize) -> Result<Vec<[Vector3<f64>; NUM_LEGS]>, GroundError> {
        move |r: &JointVector, h: usize| {
            Ok(vec![[Vector3::new(gain * r[0], 0.0, fz); NUM_LEGS]; h])
        }
    }

    #[test]
    fn fixed_point_and_pass_through() {
        let gov = GovernorState::new([0.1; 12], GovernorParams::default());
        let mut probe = linear_probe(100.0, 10.0);
        let step = governor_update(&gov, &[0.1; 12], &mut probe, &[true; 4], 0.6).unwrap();
        assert_eq!(step.state.applied, gov.applied);

        let gov = GovernorState::new(
            [0.0; 12],
            GovernorParams {
                kappa: 1.0,
                horizon: 5,
            },
        );
        let target = [0.01; 12];
        let step = governor_update(&gov, &target, &mut probe, &[true; 4], 0.6).unwrap();
        assert_eq!(step.state.applied, target);
        assert_eq!(step.fraction, 1.0);
    }

    #[test]
    fn bisection_matches_line_search_oracle() {
        let mu = 0.6;
        let (gain, fz) = (100.0, 10.0);
        let gov = GovernorState::new(
            [0.0; 12],
            GovernorParams {
                kappa: 1.0,
                horizon: 3,
            },
        );
        let mut target = [0.0; 12];
        target[0] = 0.2;
        let mut probe = linear_probe(gain, fz);
        let step = governor_update(&gov, &target, &mut probe, &[true; 4], mu).unwrap();
        // brute-force: largest fraction on a 1e-4 grid whose candidate is feasible
        let mut best = 0.0;
        let mut k = 0;
        while k <= 10_000 {
            let s = k as f64 * 1e-4;
            if (gain * s * 0.2).abs() <= mu * fz {
                best = s;
            } else {
                break;
            }
            k += 1;
        }
        assert!((step.fraction - best).abs() <= 1.0 / 256.0);
        assert!(friction_pyramid_ok(
            &Vector3::new(gain * step.state.applied[0], 0.0, fz),
            mu
        ));
    }

    #[test]
    fn swing_feet_are_not_checked() {
        let gov = GovernorState::new(
            [0.0; 12],
            GovernorParams {
                kappa: 1.0,
                horizon: 2,
            },
        );
        let mut target = [0.0; 12];
        target[0] = 1.0;
        let mut probe = linear_probe(1000.0, 1.0);
        let step = governor_update(&gov, &target, &mut probe, &[false; 4], 0.6).unwrap();
        assert_eq!(step.fraction, 1.0);
    }

    #[test]
    fn probe_failure_is_an_error() {
        let gov = GovernorState::new([0.0; 12], GovernorParams::default());
        let mut probe = |_: &JointVector, _: usize| -> Result<Vec<[Vector3<f64>; 4]>, GroundError> {
            Err(GroundError::Probe(RomError::NonFinite { t: 0.0 }))
        };
        assert!(governor_update(&gov, &[1.0; 12], &mut probe, &[true; 4], 0.6).is_err());
    }

    #[test]
    fn convergence_toward_feasible_target() {
        let gov0 = GovernorState::new(
            [0.0; 12],
            GovernorParams {
                kappa: 0.1,
                horizon: 1,
            },
        );
        let target = [0.05; 12];
        let mut probe = linear_probe(100.0, 10.0);
        let mut gov = gov0;
        let mut prev = f64::INFINITY;
        let mut n = 0;
        loop {
            let err = (0..12)
                .map(|k| (gov.applied[k] - target[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err <= prev);
            prev = err;
            if err < 1e-6 {
                break;
            }
            gov = governor_update(&gov, &target, &mut probe, &[true; 4], 0.6)
                .unwrap()
                .state;
            n += 1;
            assert!(n < 1000);
        }
    }

    #[test]
    fn saturated_ik_agrees_inside_and_clamps_outside() {
        let params = RobotParams::default();
        let body = BodyState::at_rest(Vector3::new(0.0, 0.0, params.stand_height));
        let mut feet: [Vector3<f64>; 4] = std::array::from_fn(|i| {
            let h = params.hip_offsets[i];
            Vector3::new(h.x + 0.02, h.y - 0.01, 0.0)
        });
        let exact = feet_ik(&body, &feet, &params).unwrap();
        let sat = feet_ik_saturated(&body, &feet, &params);
        for k in 0..12 {
            assert!((exact[k] - sat[k]).abs() < 1e-12);
        }
        feet[0].z = -1.0;
        assert!(feet_ik(&body, &feet, &params).is_err());
        let sat = joints_to_legs(&feet_ik_saturated(&body, &feet, &params));
        assert_eq!(sat[0].length, params.leg_limits.length_max);
        assert!(sat.iter().all(|l| params.leg_limits.contains(l)));
    }

    #[test]
    fn standing_targets_are_straight_legs() {
        let params = RobotParams::default();
        let env = Environment::empty(
            0.0,
            Aabb::new(Point3::new(-2.0, -2.0, -1.0), Point3::new(2.0, 2.0, 2.0)),
        )
        .unwrap();
        let sim = Simulator::standing(&env, &params, 0.001, 0.0, 0.0).unwrap();
        let body = BodyState::at_rest(Vector3::new(0.0, 0.0, params.stand_height));
        let feet: [Vector3<f64>; 4] = std::array::from_fn(|i| {
            let h = params.hip_offsets[i];
            Vector3::new(h.x, h.y, 0.0)
        });
        let gov = GovernorState::new(legs_to_joints(&sim.legs), GovernorParams::disabled());
        let mut probe = SimProbe {
            sim: &sim,
            thrusts: [0.0; 4],
        };
        let step = track_feet(&body, &feet, &gov, &mut probe, &[true; 4], &params).unwrap();
        for leg in joints_to_legs(&step.state.applied) {
            assert!(leg.frontal.abs() < 1e-12 && leg.sagittal.abs() < 1e-12);
            assert!((leg.length - params.stand_height).abs() < 1e-12);
        }
        // disabled governor is a pass-through of raw IK
        let mut shifted = feet;
        shifted[0].x += 0.03;
        let raw = feet_ik(&body, &shifted, &params).unwrap();
        let step = track_feet(&body, &shifted, &gov, &mut probe, &[true; 4], &params).unwrap();
        assert_eq!(step.state.applied, raw);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn governed_references_are_feasible_and_approach_the_target(
                kappa in 0.1f64..=1.0,
                horizon in 1usize..6,
                lead in -0.3f64..0.3,
                rest in proptest::collection::vec(-0.1f64..0.1, 11),
            ) {
                let (mu, gain, fz) = (0.6, 100.0, 10.0);
                let mut target = [0.0; 12];
                target[0] = lead;
                target[1..].copy_from_slice(&rest);
                let mut gov = GovernorState::new([0.0; 12], GovernorParams { kappa, horizon });
                let mut probe = linear_probe(gain, fz);
                let err = |g: &GovernorState| {
                    (0..12).map(|k| (g.applied[k] - target[k]).powi(2)).sum::<f64>().sqrt()
                };
                let mut prev = err(&gov);
                for _ in 0..2000 {
                    gov = governor_update(&gov, &target, &mut probe, &[true; 4], mu).unwrap().state;
                    // re-probe the accepted reference
                    prop_assert!(friction_pyramid_ok(&Vector3::new(gain * gov.applied[0], 0.0, fz), mu));
                    let e = err(&gov);
                    prop_assert!(e <= prev + 1e-15);
                    prev = e;
                }
                if gain * lead.abs() <= mu * fz {
                    prop_assert!(prev < 1e-6, "stuck at {prev}");
                }
            }
        }
    }
}
