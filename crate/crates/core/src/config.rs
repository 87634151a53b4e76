//! The robot configuration file: every tunable in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flight::FlightGains;
use crate::gait::GaitSchedule;
use crate::ground::GovernorParams;
use crate::planner::{CostModel, PlannerConfig};
use crate::rom::RobotParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Weights of the once-per-cycle state used by the limit-cycle metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareWeights {
    /// Per meter of position.
    pub position: f64,
    /// Per radian of roll, pitch, yaw.
    pub angle: f64,
    /// Per m/s of linear velocity.
    pub velocity: f64,
    /// Per rad/s of body rate.
    pub rate: f64,
}

impl Default for PoincareWeights {
    fn default() -> Self {
        Self {
            position: 1.0,
            angle: 1.0,
            velocity: 0.1,
            rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    /// Simulation step (s).
    pub dt: f64,
    /// Abort if one plan edge stays active longer than this (s).
    pub edge_timeout: f64,
    /// Gait used while walking between waypoints.
    pub walk_gait: GaitSchedule,
    /// The walking reference pauses while it is this far ahead of the body
    /// (horizontal distance, m).
    pub max_lead: f64,
    /// Carrot speed along aerial waypoints (m/s).
    pub cruise_speed: f64,
    /// Vertical speed of the descent reference (m/s).
    pub descent_speed: f64,
    /// Distance at which an aerial waypoint counts as reached (m).
    pub air_tol: f64,
    /// Time to fold the legs into the crouch before takeoff (s).
    pub crouch_time: f64,
    /// Time to re-extend the legs after landing (s).
    pub stand_time: f64,
    /// All-stance pause at the end of each walking run (s).
    pub settle_time: f64,
    /// Height above leg touchdown where the slow final descent starts (m).
    pub probe_height: f64,
    /// Landing needs four contacts and a speed below this (m/s) ...
    pub touchdown_speed: f64,
    /// ... held for this long (s).
    pub touchdown_dwell: f64,
    /// Roll or pitch beyond this counts as a fall (rad).
    pub fall_tilt: f64,
    pub poincare: PoincareWeights,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            dt: 0.001,
            edge_timeout: 30.0,
            walk_gait: GaitSchedule::two_contact(3.0),
            max_lead: 0.1,
            cruise_speed: 0.5,
            descent_speed: 0.3,
            air_tol: 0.1,
            crouch_time: 1.0,
            stand_time: 1.0,
            settle_time: 0.5,
            probe_height: 0.1,
            touchdown_speed: 0.05,
            touchdown_dwell: 0.2,
            fall_tilt: 0.6,
            poincare: PoincareWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub robot: RobotParams,
    /// Default gait for in-place trotting.
    pub gait: GaitSchedule,
    pub governor: GovernorParams,
    pub flight: FlightGains,
    pub cost: CostModel,
    pub planner: PlannerConfig,
    pub mission: MissionConfig,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let robot = RobotParams::default();
        let planner = PlannerConfig {
            stand_height: robot.stand_height,
            ..PlannerConfig::default()
        };
        Self {
            robot,
            gait: GaitSchedule::two_contact(2.0),
            governor: GovernorParams::default(),
            flight: FlightGains::default(),
            cost: CostModel::default(),
            planner,
            mission: MissionConfig::default(),
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        self.robot.validate().map_err(|e| bad(e.to_string()))?;
        self.gait.validate().map_err(|e| bad(e.to_string()))?;
        self.mission.walk_gait.validate().map_err(|e| bad(e.to_string()))?;
        self.governor.validate().map_err(|e| bad(e.to_string()))?;
        self.flight.validate().map_err(bad)?;
        self.cost.validate().map_err(|e| bad(e.to_string()))?;
        self.planner.validate().map_err(|e| bad(e.to_string()))?;
        if (self.planner.stand_height - self.robot.stand_height).abs() > 1e-12 {
            return Err(bad("planner and robot stand heights differ".into()));
        }
        let m = &self.mission;
        let positive = [
            m.dt,
            m.edge_timeout,
            m.max_lead,
            m.cruise_speed,
            m.descent_speed,
            m.air_tol,
            m.crouch_time,
            m.stand_time,
            m.probe_height,
            m.touchdown_speed,
            m.fall_tilt,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || m.settle_time < 0.0 || m.touchdown_dwell < 0.0 {
            return Err(bad("mission timings and tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let c: RobotConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
