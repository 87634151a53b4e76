use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PowerParams, StepRecord, NUM_LEGS};

/// One uniformly sampled instant of actuator activity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub dt: f64,
    pub thrusts: [f64; NUM_LEGS],
    pub grf: [Vector3<f64>; NUM_LEGS],
    pub foot_velocity: [Vector3<f64>; NUM_LEGS],
    pub in_contact: [bool; NUM_LEGS],
}

impl From<&StepRecord> for PowerSample {
    fn from(r: &StepRecord) -> Self {
        Self {
            dt: r.dt,
            thrusts: r.thrusts,
            grf: r.contact.feet.map(|f| f.grf),
            foot_velocity: r.foot_velocity,
            in_contact: r.contact.feet.map(|f| f.in_contact),
        }
    }
}

/// Cumulative energy per locomotion mode (J).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyMeter {
    pub legged: f64,
    pub aerial: f64,
}

impl EnergyMeter {
    pub fn total(&self) -> f64 {
        self.legged + self.aerial
    }

    /// Adds one sample.
    pub fn accumulate(&mut self, s: &PowerSample, params: &PowerParams) {
        let rotor: f64 = s.thrusts.iter().map(|t| params.thrust_coeff * t.powf(1.5)).sum();
        self.aerial += rotor * s.dt;
        if s.in_contact.iter().any(|&c| c) {
            let mech: f64 = (0..NUM_LEGS)
                .map(|i| s.grf[i].dot(&s.foot_velocity[i]).abs())
                .sum();
            self.legged += (mech + params.idle_power) * s.dt;
        }
    }
}

/// Integrates actuator power over a history.
///
/// Rotor power uses an actuator-disk proxy `c * T^1.5`; legged power is the
/// absolute mechanical power delivered at the feet plus an idle draw charged
/// whenever the robot is supported by at least one foot.
pub fn meter_power<'a>(
    history: impl IntoIterator<Item = &'a PowerSample>,
    params: &PowerParams,
) -> EnergyMeter {
    let mut meter = EnergyMeter::default();
    for s in history {
        meter.accumulate(s, params);
    }
    meter
}
