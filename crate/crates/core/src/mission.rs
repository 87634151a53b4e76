//! Plan execution in the simulator, in-place trotting experiments, logging
//! and the limit-cycle metric.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{PoincareWeights, RobotConfig};
use crate::env::{Aabb, Environment};
use crate::flight::{flight_control, FlightRef};
use crate::gait::{gait_phase, stability_margin, support_polygon, GaitSchedule};
use crate::ground::{
    governor_update, BodyRef, GovernorParams, GovernorState, GroundError, LeggedController, SimProbe,
};
use crate::planner::{CostModel, ModeTag, Plan, PlanError};
use crate::rom::{
    foot_position, joints_to_legs, legs_to_joints, BodyState, EnergyMeter, JointVector,
    PowerSample, RobotParams, RomError, Simulator, StepInput, NUM_LEGS,
};

#[derive(Debug, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid mission input: {0}")]
    Invalid(String),
    #[error("log too short: {0}")]
    ShortLog(String),
    #[error("malformed log: {0}")]
    BadLog(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionPhase {
    Walk,
    PrepareTakeoff,
    Ascend,
    Cruise,
    Descend,
    TouchdownDetect,
    Stand,
}

impl MissionPhase {
    pub const ALL: [MissionPhase; 7] = [
        MissionPhase::Walk,
        MissionPhase::PrepareTakeoff,
        MissionPhase::Ascend,
        MissionPhase::Cruise,
        MissionPhase::Descend,
        MissionPhase::TouchdownDetect,
        MissionPhase::Stand,
    ];

    /// Whether `self -> next` is a legal phase change.
    pub fn can_change_to(self, next: MissionPhase) -> bool {
        use MissionPhase::*;
        matches!(
            (self, next),
            (Walk, PrepareTakeoff)
                | (PrepareTakeoff, Ascend)
                | (Ascend, Cruise)
                | (Cruise, Descend)
                | (Descend, TouchdownDetect)
                | (TouchdownDetect, Stand)
                | (Stand, Walk)
                | (Walk, Stand)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            MissionPhase::Walk => "Walk",
            MissionPhase::PrepareTakeoff => "PrepareTakeoff",
            MissionPhase::Ascend => "Ascend",
            MissionPhase::Cruise => "Cruise",
            MissionPhase::Descend => "Descend",
            MissionPhase::TouchdownDetect => "TouchdownDetect",
            MissionPhase::Stand => "Stand",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn is_airborne(self) -> bool {
        matches!(
            self,
            MissionPhase::Ascend | MissionPhase::Cruise | MissionPhase::Descend
        )
    }
}

/// One simulation step of a mission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub joints: JointVector,
    pub thrusts: [f64; NUM_LEGS],
    pub grf: [Vector3<f64>; NUM_LEGS],
    /// Pre-clamp contact force.
    pub demand: [Vector3<f64>; NUM_LEGS],
    pub contact: [bool; NUM_LEGS],
    pub slip: [bool; NUM_LEGS],
    /// Scheduled stance flags of the active gait.
    pub stance: [bool; NUM_LEGS],
    /// Gait-cycle phase of the first leg.
    pub gait_phase: f64,
    pub governor_fraction: f64,
    pub phase: MissionPhase,
    pub edge: Option<usize>,
    pub energy_legged: f64,
    pub energy_aerial: f64,
}

impl LogRow {
    pub fn body(&self) -> BodyState {
        BodyState {
            position: self.position,
            orientation: self.orientation,
            velocity: self.velocity,
            omega: self.omega,
        }
    }

    /// Stance feet (scheduled and touching) whose force demand leaves the
    /// friction pyramid.
    pub fn pyramid_violations(&self, mu: f64) -> usize {
        (0..NUM_LEGS)
            .filter(|&i| {
                self.stance[i]
                    && self.contact[i]
                    && !crate::ground::friction_pyramid_ok(&self.demand[i], mu)
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissionLog {
    pub rows: Vec<LogRow>,
    pub fell: bool,
    /// Reason the mission stopped early, if it did.
    pub aborted: Option<String>,
}

const LEGS: [&str; NUM_LEGS] = ["fl", "fr", "bl", "br"];

fn csv_header() -> String {
    let mut cols: Vec<String> = ["t", "x", "y", "z", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for leg in LEGS {
        for j in ["frontal", "sagittal", "length"] {
            cols.push(format!("{leg}_{j}"));
        }
    }
    for k in 0..NUM_LEGS {
        cols.push(format!("thrust{k}"));
    }
    for prefix in ["grf", "demand"] {
        for leg in LEGS {
            for a in ["x", "y", "z"] {
                cols.push(format!("{prefix}_{leg}_{a}"));
            }
        }
    }
    for prefix in ["contact", "slip", "stance"] {
        for leg in LEGS {
            cols.push(format!("{prefix}_{leg}"));
        }
    }
    for c in ["gait_phase", "governor_fraction", "phase", "edge", "energy_legged", "energy_aerial"] {
        cols.push(c.into());
    }
    cols.join(",")
}

impl MissionLog {
    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t) - self.rows.first().map_or(0.0, |r| r.t)
    }

    pub fn phase_changes(&self) -> Vec<(MissionPhase, MissionPhase)> {
        self.rows
            .windows(2)
            .filter(|w| w[0].phase != w[1].phase)
            .map(|w| (w[0].phase, w[1].phase))
            .collect()
    }

    pub fn max_altitude(&self) -> f64 {
        self.rows.iter().map(|r| r.position.z).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn flight_time(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.phase.is_airborne())
            .count() as f64
            * self.rows.windows(2).next().map_or(0.0, |w| w[1].t - w[0].t)
    }

    pub fn pyramid_violations(&self, mu: f64) -> usize {
        self.rows.iter().map(|r| r.pyramid_violations(mu)).sum()
    }

    /// CSV with a header row; floats use the shortest exact representation.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header();
        out.push('\n');
        let b = |v: bool| if v { "1" } else { "0" };
        for r in &self.rows {
            let q = r.orientation.quaternion();
            let mut f: Vec<f64> = vec![r.t];
            f.extend(r.position.iter());
            f.extend([q.w, q.i, q.j, q.k]);
            f.extend(r.velocity.iter());
            f.extend(r.omega.iter());
            f.extend(r.joints);
            f.extend(r.thrusts);
            for v in r.grf.iter().chain(r.demand.iter()) {
                f.extend(v.iter());
            }
            let mut line = f.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            for flags in [r.contact, r.slip, r.stance] {
                for v in flags {
                    line.push(',');
                    line.push_str(b(v));
                }
            }
            let _ = write!(
                line,
                ",{},{},{},{},{},{}",
                r.gait_phase,
                r.governor_fraction,
                r.phase.name(),
                r.edge.map_or(-1, |e| e as i64),
                r.energy_legged,
                r.energy_aerial
            );
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MissionError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses a log written by [`MissionLog::to_csv`].
    pub fn from_csv(s: &str) -> Result<MissionLog, MissionError> {
        let bad = |m: String| MissionError::BadLog(m);
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        if header.trim() != csv_header() {
            return Err(bad("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            let ncols = csv_header().split(',').count();
            if cells.len() != ncols {
                return Err(bad(format!("row {n} has {} columns, expected {ncols}", cells.len())));
            }
            let num = |k: usize| -> Result<f64, MissionError> {
                cells[k]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {n} column {k}: not a number")))
            };
            let flag = |k: usize| -> Result<bool, MissionError> {
                match cells[k] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(bad(format!("row {n} column {k}: not a flag"))),
                }
            };
            let v3 = |k: usize| -> Result<Vector3<f64>, MissionError> {
                Ok(Vector3::new(num(k)?, num(k + 1)?, num(k + 2)?))
            };
            let q = nalgebra::Quaternion::new(num(4)?, num(5)?, num(6)?, num(7)?);
            let mut joints = [0.0; 12];
            for (j, v) in joints.iter_mut().enumerate() {
                *v = num(14 + j)?;
            }
            let mut thrusts = [0.0; 4];
            for (j, v) in thrusts.iter_mut().enumerate() {
                *v = num(26 + j)?;
            }
            let mut grf = [Vector3::zeros(); 4];
            let mut demand = [Vector3::zeros(); 4];
            for i in 0..4 {
                grf[i] = v3(30 + 3 * i)?;
                demand[i] = v3(42 + 3 * i)?;
            }
            let mut contact = [false; 4];
            let mut slip = [false; 4];
            let mut stance = [false; 4];
            for i in 0..4 {
                contact[i] = flag(54 + i)?;
                slip[i] = flag(58 + i)?;
                stance[i] = flag(62 + i)?;
            }
            let phase = MissionPhase::from_name(cells[68])
                .ok_or_else(|| bad(format!("row {n}: unknown phase {}", cells[68])))?;
            let edge: i64 = cells[69]
                .parse()
                .map_err(|_| bad(format!("row {n}: bad edge index")))?;
            rows.push(LogRow {
                t: num(0)?,
                position: v3(1)?,
                orientation: UnitQuaternion::new_unchecked(q),
                velocity: v3(8)?,
                omega: v3(11)?,
                joints,
                thrusts,
                grf,
                demand,
                contact,
                slip,
                stance,
                gait_phase: num(66)?,
                governor_fraction: num(67)?,
                phase,
                edge: (edge >= 0).then_some(edge as usize),
                energy_legged: num(70)?,
                energy_aerial: num(71)?,
            });
        }
        Ok(MissionLog {
            rows,
            fell: false,
            aborted: None,
        })
    }
}

/// Checks the log invariants: finite values, strictly increasing time, legal
/// phase changes and non-decreasing energy meters.
pub fn validate_log(log: &MissionLog) -> Result<(), MissionError> {
    let bad = |m: String| Err(MissionError::BadLog(m));
    if log.rows.is_empty() {
        return bad("log has no rows".into());
    }
    for (k, r) in log.rows.iter().enumerate() {
        if !r.body().is_finite() || !r.t.is_finite() {
            return bad(format!("row {k} has non-finite state"));
        }
    }
    for (k, w) in log.rows.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        if !(b.t > a.t) {
            return bad(format!("time does not increase at row {}", k + 1));
        }
        if a.phase != b.phase && !a.phase.can_change_to(b.phase) {
            return bad(format!(
                "illegal phase change {} -> {} at row {}",
                a.phase.name(),
                b.phase.name(),
                k + 1
            ));
        }
        if b.energy_legged < a.energy_legged || b.energy_aerial < a.energy_aerial {
            return bad(format!("energy decreases at row {}", k + 1));
        }
    }
    Ok(())
}

/// Per-cycle Poincare distances of a periodic-gait log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    /// `d_k` for k = 1, 2, ...: weighted distance between the states sampled
    /// at the starts of cycles k - 1 and k.
    pub distances: Vec<f64>,
    /// Smallest 1-based K with `d_k < 0.05 d_1` for every k >= K.
    pub converged_at: Option<usize>,
}

impl LimitCycle {
    pub fn final_ratio(&self) -> f64 {
        match (self.distances.first(), self.distances.last()) {
            (Some(&d1), Some(&dn)) if d1 > 0.0 => dn / d1,
            _ => 0.0,
        }
    }
}

fn poincare_state(r: &LogRow, w: &PoincareWeights) -> [f64; 12] {
    let (roll, pitch, yaw) = r.orientation.euler_angles();
    [
        w.position * r.position.x,
        w.position * r.position.y,
        w.position * r.position.z,
        w.angle * roll,
        w.angle * pitch,
        w.angle * yaw,
        w.velocity * r.velocity.x,
        w.velocity * r.velocity.y,
        w.velocity * r.velocity.z,
        w.rate * r.omega.x,
        w.rate * r.omega.y,
        w.rate * r.omega.z,
    ]
}

/// Samples the log once per gait cycle at phase zero (cycle starts are
/// measured from `t = 0`) and returns successive weighted distances.
pub fn limit_cycle_metric(
    log: &MissionLog,
    sched: &GaitSchedule,
    weights: &PoincareWeights,
) -> Result<LimitCycle, MissionError> {
    if !(sched.freq > 0.0) {
        return Err(MissionError::Invalid("gait frequency must be positive".into()));
    }
    let period = sched.period();
    let t_end = log.rows.last().map_or(0.0, |r| r.t);
    let cycles = (t_end / period + 1e-9).floor() as usize;
    if cycles < 10 {
        return Err(MissionError::ShortLog(format!(
            "{cycles} gait cycles, need at least 10"
        )));
    }
    let sample = |k: usize| -> [f64; 12] {
        let t = k as f64 * period;
        let idx = log.rows.partition_point(|r| r.t < t);
        let idx = match idx {
            0 => 0,
            i if i >= log.rows.len() => log.rows.len() - 1,
            i if (log.rows[i].t - t).abs() <= (t - log.rows[i - 1].t).abs() => i,
            i => i - 1,
        };
        poincare_state(&log.rows[idx], weights)
    };
    let states: Vec<[f64; 12]> = (0..=cycles).map(sample).collect();
    let distances: Vec<f64> = states
        .windows(2)
        .map(|w| (0..12).map(|k| (w[1][k] - w[0][k]).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok(LimitCycle {
        converged_at: convergence_index(&distances),
        distances,
    })
}

fn convergence_index(d: &[f64]) -> Option<usize> {
    let d1 = *d.first()?;
    if d1 == 0.0 {
        return d.iter().all(|&x| x == 0.0).then_some(1);
    }
    let threshold = 0.05 * d1;
    let mut k = d.len();
    while k > 0 && d[k - 1] < threshold {
        k -= 1;
    }
    (k < d.len()).then_some(k + 1)
}

/// Minimum support-polygon stability margin within each gait cycle.
///
/// Uses the scheduled stance feet of every row at their actual positions
/// and the projected body position as the COM. Cycle `k` covers
/// `[k T, (k + 1) T)`; a trailing partial cycle is included.
pub fn cycle_margins(
    log: &MissionLog,
    sched: &GaitSchedule,
    robot: &RobotParams,
) -> Result<Vec<f64>, MissionError> {
    if !(sched.freq > 0.0) {
        return Err(MissionError::Invalid("gait frequency must be positive".into()));
    }
    let period = sched.period();
    let mut out: Vec<f64> = Vec::new();
    for r in &log.rows {
        let k = (r.t / period + 1e-9).floor() as usize;
        let body = r.body();
        let legs = joints_to_legs(&r.joints);
        let mut feet = Vec::with_capacity(NUM_LEGS);
        for i in (0..NUM_LEGS).filter(|&i| r.stance[i]) {
            let p = foot_position(&body, &legs[i], i, robot).map_err(GroundError::from)?;
            feet.push(Vector2::new(p.x, p.y));
        }
        let poly = support_polygon(&feet)
            .map_err(|e| MissionError::BadLog(format!("t = {}: {e}", r.t)))?;
        let m = stability_margin(&Vector2::new(r.position.x, r.position.y), &poly);
        if out.len() <= k {
            out.resize(k + 1, f64::INFINITY);
        }
        out[k] = out[k].min(m);
    }
    // cycles with no rows (log starting late) carry no information
    out.retain(|m| m.is_finite());
    Ok(out)
}

/// Worst per-cycle margin of an in-place run: the quantity compared across
/// gait cycle times.
pub fn worst_cycle_margin(
    log: &MissionLog,
    sched: &GaitSchedule,
    robot: &RobotParams,
) -> Result<f64, MissionError> {
    cycle_margins(log, sched, robot)?
        .into_iter()
        .reduce(f64::min)
        .ok_or_else(|| MissionError::ShortLog("empty log".into()))
}

/// Flat open workspace used by the in-place experiments.
pub fn flat_ground() -> Environment {
    Environment::empty(
        0.0,
        Aabb::new(
            nalgebra::Point3::new(-10.0, -10.0, -1.0),
            nalgebra::Point3::new(10.0, 10.0, 10.0),
        ),
    )
    .expect("flat workspace is valid")
}

/// What the controller asked for during one step.
#[derive(Debug, Clone, Copy)]
struct Tick {
    joints: JointVector,
    thrusts: [f64; NUM_LEGS],
    stance: [bool; NUM_LEGS],
    gait_phase: f64,
    governor_fraction: f64,
}

enum Halt {
    Fell,
    Timeout(Option<usize>),
    Failed(MissionError),
}

impl<E: Into<MissionError>> From<E> for Halt {
    fn from(e: E) -> Self {
        Halt::Failed(e.into())
    }
}

struct Runner<'a> {
    sim: Simulator<'a>,
    cfg: &'a RobotConfig,
    meter: EnergyMeter,
    rows: Vec<LogRow>,
    phase: MissionPhase,
    edge: Option<usize>,
    edge_since: f64,
}

impl<'a> Runner<'a> {
    fn new(sim: Simulator<'a>, cfg: &'a RobotConfig, phase: MissionPhase) -> Self {
        Self {
            edge_since: sim.t,
            sim,
            cfg,
            meter: EnergyMeter::default(),
            rows: Vec::new(),
            phase,
            edge: None,
        }
    }

    fn enter(&mut self, phase: MissionPhase) {
        if phase != self.phase {
            debug_assert!(self.phase.can_change_to(phase));
            self.phase = phase;
        }
    }

    fn set_edge(&mut self, edge: Option<usize>) {
        if edge != self.edge {
            self.edge = edge;
            self.edge_since = self.sim.t;
        }
    }

    fn ground_at(&self, x: f64, y: f64) -> f64 {
        self.sim.env.ground_height(x, y).unwrap_or(self.sim.env.ground_z)
    }

    fn tick(&mut self, tick: Tick) -> Result<(), Halt> {
        let rec = self.sim.advance(&StepInput {
            legs: joints_to_legs(&tick.joints),
            thrusts: tick.thrusts,
        })?;
        self.meter
            .accumulate(&PowerSample::from(&rec), &self.cfg.robot.power);
        let b = rec.body;
        self.rows.push(LogRow {
            t: rec.t,
            position: b.position,
            orientation: b.orientation,
            velocity: b.velocity,
            omega: b.omega,
            joints: legs_to_joints(&rec.legs),
            thrusts: rec.thrusts,
            grf: rec.contact.feet.map(|f| f.grf),
            demand: rec.contact.feet.map(|f| f.demand),
            contact: rec.contact.feet.map(|f| f.in_contact),
            slip: rec.contact.feet.map(|f| f.slipping),
            stance: tick.stance,
            gait_phase: tick.gait_phase,
            governor_fraction: tick.governor_fraction,
            phase: self.phase,
            edge: self.edge,
            energy_legged: self.meter.legged,
            energy_aerial: self.meter.aerial,
        });
        let (roll, pitch, _) = b.orientation.euler_angles();
        let tilt = self.cfg.mission.fall_tilt;
        let low = matches!(self.phase, MissionPhase::Walk | MissionPhase::Stand)
            && b.position.z - self.ground_at(b.position.x, b.position.y)
                < 0.5 * self.cfg.robot.stand_height;
        if roll.abs() > tilt || pitch.abs() > tilt || low {
            return Err(Halt::Fell);
        }
        if self.edge.is_some() && self.sim.t - self.edge_since > self.cfg.mission.edge_timeout {
            return Err(Halt::Timeout(self.edge));
        }
        Ok(())
    }

    fn legged_tick(
        &mut self,
        ctl: &mut LeggedController,
        body: &BodyRef,
    ) -> Result<(), Halt> {
        let cmd = ctl.command(body, &self.sim, [0.0; NUM_LEGS])?;
        let gait = gait_phase(ctl.gait_time(self.sim.t), &ctl.gait);
        self.tick(Tick {
            joints: cmd.joints,
            thrusts: [0.0; NUM_LEGS],
            stance: cmd.stance,
            gait_phase: gait[0].phase,
            governor_fraction: cmd.governor_fraction,
        })
    }

    fn flight_tick(&mut self, reference: &FlightRef, joints: JointVector) -> Result<(), Halt> {
        let mix = flight_control(reference, &self.sim.body, &self.cfg.flight, &self.cfg.robot);
        self.tick(Tick {
            joints,
            thrusts: mix.thrusts,
            stance: self.sim.contact.feet.map(|f| f.in_contact),
            gait_phase: 0.0,
            governor_fraction: 1.0,
        })
    }

    fn hold_stance(&mut self, ctl: &mut LeggedController, body: &BodyRef, duration: f64) -> Result<(), Halt> {
        ctl.set_gait(standing_gait(&ctl.gait), self.sim.t);
        let n = (duration / self.sim.dt).round() as usize;
        for _ in 0..n {
            self.legged_tick(ctl, body)?;
        }
        Ok(())
    }

    fn finish(self, halt: Option<Halt>) -> Result<MissionLog, MissionError> {
        let mut log = MissionLog {
            rows: self.rows,
            fell: false,
            aborted: None,
        };
        match halt {
            None => {}
            Some(Halt::Fell) => {
                log.fell = true;
                log.aborted = Some("fall detected".into());
            }
            Some(Halt::Timeout(e)) => {
                log.aborted = Some(format!("edge {e:?} timed out"));
            }
            Some(Halt::Failed(e)) => return Err(e),
        }
        Ok(log)
    }
}

fn standing_gait(g: &GaitSchedule) -> GaitSchedule {
    GaitSchedule { freq: 0.0, ..*g }
}

/// Runs a gait in place on flat ground for `duration` seconds.
///
/// The body reference stays at the starting pose; stance feet hold their
/// touchdown points and swing feet return under the hips. A fall truncates
/// the log and sets its flag.
pub fn trot_in_place(
    duration: f64,
    sched: &GaitSchedule,
    cfg: &RobotConfig,
) -> Result<MissionLog, MissionError> {
    run_in_place(duration, sched, cfg, &cfg.governor, |_, r| r)
}

/// In-place run with a time-varying body reference.
pub fn run_in_place(
    duration: f64,
    sched: &GaitSchedule,
    cfg: &RobotConfig,
    governor: &GovernorParams,
    mut reference: impl FnMut(f64, BodyRef) -> BodyRef,
) -> Result<MissionLog, MissionError> {
    if !(duration > 0.0) {
        return Err(MissionError::Invalid("duration must be positive".into()));
    }
    sched
        .validate()
        .map_err(|e| MissionError::Invalid(e.to_string()))?;
    let env = flat_ground();
    let sim = Simulator::standing(&env, &cfg.robot, cfg.mission.dt, 0.0, 0.0)?;
    let home = BodyRef::hold(sim.body.position, 0.0);
    let mut ctl = LeggedController::new(*sched, *governor, &sim)?;
    let mut run = Runner::new(sim, cfg, MissionPhase::Walk);
    let n = (duration / cfg.mission.dt).round() as usize;
    let mut halt = None;
    for _ in 0..n {
        let body = reference(run.sim.t, home);
        if let Err(h) = run.legged_tick(&mut ctl, &body) {
            halt = Some(h);
            break;
        }
    }
    run.finish(halt)
}

/// Quiet four-legged stand on flat ground.
pub fn stand_still(duration: f64, cfg: &RobotConfig) -> Result<MissionLog, MissionError> {
    trot_in_place(duration, &standing_gait(&cfg.gait), cfg)
}

/// Height of the hover set point used by [`hover_hold`] (m).
pub const HOVER_ALTITUDE: f64 = 1.5;

/// Starts at rest in the air, displaced by `offset` from a hover set point
/// [`HOVER_ALTITUDE`] above flat ground, and flies back with the legs
/// folded.
pub fn hover_hold(
    offset: Vector3<f64>,
    duration: f64,
    cfg: &RobotConfig,
) -> Result<MissionLog, MissionError> {
    if !(duration > 0.0) {
        return Err(MissionError::Invalid("duration must be positive".into()));
    }
    let env = flat_ground();
    let set_point = Vector3::new(0.0, 0.0, HOVER_ALTITUDE);
    let crouch = cfg.robot.crouch_legs();
    let sim = Simulator::new(
        &env,
        &cfg.robot,
        cfg.mission.dt,
        BodyState::at_rest(set_point + offset),
        crouch,
    )?;
    let mut run = Runner::new(sim, cfg, MissionPhase::Cruise);
    let reference = FlightRef::hold(set_point, 0.0);
    let joints = legs_to_joints(&crouch);
    let n = (duration / cfg.mission.dt).round() as usize;
    let mut halt = None;
    for _ in 0..n {
        if let Err(h) = run.flight_tick(&reference, joints) {
            halt = Some(h);
            break;
        }
    }
    run.finish(halt)
}

/// Measured mean powers behind a [`CostModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCalibration {
    /// Mean legged power while walking at `v_leg` (W).
    pub walk_power: f64,
    /// Mean rotor power while hovering (W).
    pub hover_power: f64,
    pub cost: CostModel,
}

/// Prices locomotion from simulation: `duration` seconds of walking with
/// the mission gait at the nominal legged speed and the same time hovering.
///
/// Each mode's energy per meter is its mean power over its nominal speed
/// (`v_leg`, and the cruise speed for flight). A takeoff or landing is
/// charged one crouch time of hover power.
pub fn calibrate_costs(cfg: &RobotConfig, duration: f64) -> Result<CostCalibration, MissionError> {
    let v_leg = cfg.cost.v_leg;
    let v_air = cfg.mission.cruise_speed;
    let walk = run_in_place(duration, &cfg.mission.walk_gait, cfg, &cfg.governor, |t, home| BodyRef {
        position: home.position + Vector3::new(v_leg * t, 0.0, 0.0),
        velocity: Vector3::new(v_leg, 0.0, 0.0),
        ..home
    })?;
    if walk.fell {
        return Err(MissionError::Invalid("robot fell during the walking calibration".into()));
    }
    let hover = hover_hold(Vector3::zeros(), duration, cfg)?;
    // both runs start at t = 0, so the last row's time is the metered span
    let last = |l: &MissionLog| l.rows.last().cloned().ok_or_else(|| MissionError::ShortLog("empty log".into()));
    let w = last(&walk)?;
    let h = last(&hover)?;
    let walk_power = w.energy_legged / w.t;
    let hover_power = h.energy_aerial / h.t;
    Ok(CostCalibration {
        walk_power,
        hover_power,
        cost: CostModel {
            c_leg: walk_power / v_leg,
            c_air: hover_power / v_air,
            p_leg: 0.0,
            p_air: 0.0,
            e_trans: hover_power * cfg.mission.crouch_time,
            v_leg,
            v_air,
        },
    })
}

/// Standing on all four feet, the body reference jumps to a lean pose
/// (shifted, lowered, rolled and pitched), holds it, then jumps back.
/// Used to exercise the governor.
pub fn lean_maneuver(cfg: &RobotConfig, governor: &GovernorParams) -> Result<MissionLog, MissionError> {
    let gait = standing_gait(&cfg.gait);
    run_in_place(1.5, &gait, cfg, governor, |t, home| {
        if (0.1..0.9).contains(&t) {
            BodyRef {
                position: home.position + Vector3::new(0.03, 0.03, -0.03),
                orientation: UnitQuaternion::from_euler_angles(0.1, 0.1, 0.0),
                velocity: Vector3::zeros(),
            }
        } else {
            home
        }
    })
}

/// Polyline reference advanced at constant speed.
struct Carrot {
    points: Vec<Vector3<f64>>,
    seg: usize,
    s: f64,
}

impl Carrot {
    fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, seg: 0, s: 0.0 }
    }

    fn seg_len(&self, k: usize) -> f64 {
        (self.points[k + 1] - self.points[k]).norm()
    }

    fn at_end(&self) -> bool {
        self.seg + 1 >= self.points.len()
    }

    fn advance(&mut self, mut d: f64) {
        while !self.at_end() && d > 0.0 {
            let rest = self.seg_len(self.seg) - self.s;
            if d < rest {
                self.s += d;
                return;
            }
            d -= rest;
            self.seg += 1;
            self.s = 0.0;
        }
    }

    fn position(&self) -> Vector3<f64> {
        if self.at_end() {
            return *self.points.last().expect("carrot has points");
        }
        let (a, b) = (self.points[self.seg], self.points[self.seg + 1]);
        let len = self.seg_len(self.seg);
        if len == 0.0 {
            a
        } else {
            a + (b - a) * (self.s / len)
        }
    }

    fn direction(&self) -> Vector3<f64> {
        if self.at_end() {
            return Vector3::zeros();
        }
        (self.points[self.seg + 1] - self.points[self.seg])
            .try_normalize(0.0)
            .unwrap_or_else(Vector3::zeros)
    }
}

/// Maximal runs of same-mode waypoints: `(mode, first, last)` node indices.
fn mode_runs(plan: &Plan) -> Vec<(ModeTag, usize, usize)> {
    let mut runs: Vec<(ModeTag, usize, usize)> = Vec::new();
    for (k, &m) in plan.modes.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.0 == m => r.2 = k,
            _ => runs.push((m, k, k)),
        }
    }
    runs
}

/// Executes a plan with the phase machine
/// Walk -> PrepareTakeoff -> Ascend -> Cruise -> Descend -> TouchdownDetect
/// -> Stand -> Walk. The robot starts standing at the first waypoint.
pub fn follow_plan(plan: &Plan, env: &Environment, cfg: &RobotConfig) -> Result<MissionLog, MissionError> {
    plan.validate()?;
    if plan.modes[0] != ModeTag::Legged {
        return Err(MissionError::Invalid("plan must start on the ground".into()));
    }
    let start = plan.waypoints[0];
    let sim = Simulator::standing(env, &cfg.robot, cfg.mission.dt, start.x, start.y)?;
    let mut run = Runner::new(sim, cfg, MissionPhase::Walk);
    let halt = execute(&mut run, plan).err();
    run.finish(halt)
}

fn execute(run: &mut Runner, plan: &Plan) -> Result<(), Halt> {
    let cfg = run.cfg;
    let m = &cfg.mission;
    let runs = mode_runs(plan);
    let mut ctl = LeggedController::new(m.walk_gait, cfg.governor, &run.sim)?;
    let mut k = 0;
    while k < runs.len() {
        let (mode, first, last) = runs[k];
        debug_assert_eq!(mode, ModeTag::Legged);
        let rest = walk(run, &mut ctl, plan, first, last)?;
        if k + 1 == runs.len() {
            run.enter(MissionPhase::Stand);
            run.set_edge(None);
            run.hold_stance(&mut ctl, &rest, m.settle_time.max(0.5))?;
            return Ok(());
        }
        let (_, a_first, a_last) = runs[k + 1];
        fly(run, plan, last, a_first, a_last)?;
        let landing = plan.waypoints[a_last + 1];
        ctl = stand_up(run, landing)?;
        run.enter(MissionPhase::Walk);
        k += 2;
    }
    Ok(())
}

fn body_ref_at(run: &Runner, p: Vector3<f64>, velocity: Vector3<f64>) -> BodyRef {
    let z = run.ground_at(p.x, p.y) + run.cfg.robot.stand_height;
    BodyRef {
        position: Vector3::new(p.x, p.y, z),
        orientation: UnitQuaternion::identity(),
        velocity,
    }
}

/// Trots along waypoints `first..=last`, then pauses with all feet down.
/// Returns the final body reference.
fn walk(
    run: &mut Runner,
    ctl: &mut LeggedController,
    plan: &Plan,
    first: usize,
    last: usize,
) -> Result<BodyRef, Halt> {
    let m = &run.cfg.mission;
    let speed = run.cfg.cost.v_leg;
    let points: Vec<Vector3<f64>> = plan.waypoints[first..=last].iter().map(|p| p.coords).collect();
    let mut carrot = Carrot::new(points);
    if last > first {
        ctl.set_gait(m.walk_gait, run.sim.t);
    }
    while !carrot.at_end() {
        run.set_edge(Some(first + carrot.seg));
        let lead = carrot.position() - run.sim.body.position;
        let v = if lead.x.hypot(lead.y) < m.max_lead {
            carrot.advance(speed * run.sim.dt);
            carrot.direction() * speed
        } else {
            Vector3::zeros()
        };
        let body = body_ref_at(run, carrot.position(), v);
        run.legged_tick(ctl, &body)?;
    }
    let rest = body_ref_at(run, carrot.position(), Vector3::zeros());
    run.hold_stance(ctl, &rest, m.settle_time)?;
    Ok(rest)
}

/// Crouch, take off from waypoint `takeoff`, cruise through the aerial run
/// and land at the waypoint after it.
fn fly(run: &mut Runner, plan: &Plan, takeoff: usize, a_first: usize, a_last: usize) -> Result<(), Halt> {
    let cfg = run.cfg;
    let m = &cfg.mission;
    let dt = run.sim.dt;
    let crouch = legs_to_joints(&cfg.robot.crouch_legs());

    run.enter(MissionPhase::PrepareTakeoff);
    run.set_edge(Some(takeoff));
    let from = legs_to_joints(&run.sim.legs);
    let mut gov = GovernorState::new(from, cfg.governor);
    let n = (m.crouch_time / dt).round() as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let target: JointVector = std::array::from_fn(|j| from[j] + s * (crouch[j] - from[j]));
        let mut probe = SimProbe {
            sim: &run.sim,
            thrusts: [0.0; NUM_LEGS],
        };
        let step = governor_update(&gov, &target, &mut probe, &[true; NUM_LEGS], cfg.robot.mu)?;
        gov = step.state;
        run.tick(Tick {
            joints: gov.applied,
            thrusts: [0.0; NUM_LEGS],
            stance: [true; NUM_LEGS],
            gait_phase: 0.0,
            governor_fraction: step.fraction,
        })?;
    }

    run.enter(MissionPhase::Ascend);
    let first = plan.waypoints[a_first].coords;
    let hold = FlightRef::hold(first, 0.0);
    while (run.sim.body.position - first).norm() > m.air_tol {
        run.flight_tick(&hold, crouch)?;
    }

    run.enter(MissionPhase::Cruise);
    let points: Vec<Vector3<f64>> = plan.waypoints[a_first..=a_last].iter().map(|p| p.coords).collect();
    let end = *points.last().expect("aerial run is nonempty");
    let mut carrot = Carrot::new(points);
    loop {
        if carrot.at_end() && (run.sim.body.position - end).norm() <= m.air_tol {
            break;
        }
        run.set_edge(Some(a_first + carrot.seg.min(a_last - a_first)));
        if carrot.at_end() {
            run.set_edge(Some(a_last));
        }
        carrot.advance(m.cruise_speed * dt);
        let reference = FlightRef {
            position: carrot.position(),
            velocity: carrot.direction() * m.cruise_speed,
            yaw: 0.0,
        };
        run.flight_tick(&reference, crouch)?;
    }

    run.enter(MissionPhase::Descend);
    run.set_edge(Some(a_last));
    let land = plan.waypoints[a_last + 1].coords;
    let ground = run.ground_at(land.x, land.y);
    let probe_z = ground + cfg.robot.crouch_length + m.probe_height;
    let mut z_ref = run.sim.body.position.z;
    loop {
        z_ref = (z_ref - m.descent_speed * dt).max(probe_z);
        let reference = FlightRef {
            position: Vector3::new(land.x, land.y, z_ref),
            velocity: Vector3::new(0.0, 0.0, if z_ref > probe_z { -m.descent_speed } else { 0.0 }),
            yaw: 0.0,
        };
        run.flight_tick(&reference, crouch)?;
        if z_ref == probe_z && (run.sim.body.position - reference.position).norm() < 0.5 * m.air_tol {
            break;
        }
    }

    run.enter(MissionPhase::TouchdownDetect);
    // the set point keeps sinking below the feet so the rotors hand the
    // weight over to the legs instead of hovering on a single contact
    let mut z_ref = probe_z;
    let mut dwell = 0.0;
    while dwell < m.touchdown_dwell {
        z_ref -= 0.5 * m.touchdown_speed * dt;
        run.flight_tick(&FlightRef::hold(Vector3::new(land.x, land.y, z_ref), 0.0), crouch)?;
        let all_down = run.sim.contact.contact_count() == NUM_LEGS;
        dwell = if all_down && run.sim.body.velocity.norm() < m.touchdown_speed {
            dwell + dt
        } else {
            0.0
        };
    }
    Ok(())
}

/// Re-extends the legs after landing; returns a controller ready to walk.
fn stand_up(run: &mut Runner, landing: nalgebra::Point3<f64>) -> Result<LeggedController, Halt> {
    let cfg = run.cfg;
    let m = &cfg.mission;
    run.enter(MissionPhase::Stand);
    let mut ctl = LeggedController::new(standing_gait(&m.walk_gait), cfg.governor, &run.sim)?;
    let start = run.sim.body.position;
    let target = body_ref_at(run, landing.coords, Vector3::zeros());
    let n = (m.stand_time / run.sim.dt).round() as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let body = BodyRef {
            position: start + (target.position - start) * s,
            ..target
        };
        run.legged_tick(&mut ctl, &body)?;
    }
    run.hold_stance(&mut ctl, &target, m.settle_time)?;
    Ok(ctl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, phase: MissionPhase) -> LogRow {
        LogRow {
            t,
            position: Vector3::new(0.0, 0.0, 0.3),
            orientation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            omega: Vector3::zeros(),
            joints: [0.0; 12],
            thrusts: [0.0; 4],
            grf: [Vector3::zeros(); 4],
            demand: [Vector3::zeros(); 4],
            contact: [true; 4],
            slip: [false; 4],
            stance: [true; 4],
            gait_phase: 0.0,
            governor_fraction: 1.0,
            phase,
            edge: None,
            energy_legged: t,
            energy_aerial: 0.0,
        }
    }

    #[test]
    fn phase_graph() {
        use MissionPhase::*;
        let cycle = [Walk, PrepareTakeoff, Ascend, Cruise, Descend, TouchdownDetect, Stand, Walk];
        for w in cycle.windows(2) {
            assert!(w[0].can_change_to(w[1]));
        }
        assert!(Walk.can_change_to(Stand));
        assert!(!Walk.can_change_to(Ascend));
        assert!(!Cruise.can_change_to(Walk));
        assert!(!Stand.can_change_to(PrepareTakeoff));
        for p in MissionPhase::ALL {
            assert_eq!(MissionPhase::from_name(p.name()), Some(p));
        }
    }

    #[test]
    fn validator_catches_bad_logs() {
        let good = MissionLog {
            rows: vec![row(0.001, MissionPhase::Walk), row(0.002, MissionPhase::Stand)],
            ..Default::default()
        };
        validate_log(&good).unwrap();
        let mut back = good.clone();
        back.rows[1].t = 0.001;
        assert!(validate_log(&back).is_err());
        let mut jump = good.clone();
        jump.rows[1].phase = MissionPhase::Cruise;
        assert!(validate_log(&jump).is_err());
        let mut drain = good.clone();
        drain.rows[1].energy_legged = 0.0;
        assert!(validate_log(&drain).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = row(0.001, MissionPhase::Cruise);
        r.position = Vector3::new(0.1, -1.0 / 3.0, 1e-17);
        r.orientation = UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3);
        r.demand[2] = Vector3::new(1.5, f64::MIN_POSITIVE, -7.25);
        r.slip[1] = true;
        r.edge = Some(12);
        let log = MissionLog {
            rows: vec![r, row(0.002, MissionPhase::Descend)],
            ..Default::default()
        };
        let back = MissionLog::from_csv(&log.to_csv()).unwrap();
        assert_eq!(back.rows, log.rows);
        assert_eq!(back.to_csv(), log.to_csv());
        assert!(MissionLog::from_csv("t,x\n1,2\n").is_err());
    }

    #[test]
    fn margins_of_a_standing_log() {
        let robot = RobotParams::default();
        let (hx, hy) = (robot.hip_offsets[0].x, robot.hip_offsets[0].y);
        // straight legs put each foot under its hip
        let mut rows: Vec<LogRow> = (0..1000).map(|i| row(i as f64 * 0.001, MissionPhase::Walk)).collect();
        for r in rows.iter_mut() {
            r.joints = legs_to_joints(&robot.standing_legs());
        }
        for r in rows.iter_mut().skip(500) {
            r.stance = [true, false, true, true];
        }
        let log = MissionLog { rows, ..Default::default() };
        let m = cycle_margins(&log, &GaitSchedule::three_contact(2.0), &robot).unwrap();
        assert_eq!(m.len(), 2);
        assert!((m[0] - hx.min(hy)).abs() < 1e-12);
        // the body sits on the diagonal of the three-foot triangle
        assert!(m[1].abs() < 1e-12);
        let worst = worst_cycle_margin(&log, &GaitSchedule::three_contact(2.0), &robot).unwrap();
        assert_eq!(worst, m[1]);
    }

    #[test]
    fn default_costs_match_calibration() {
        let cfg = RobotConfig::default();
        let cal = calibrate_costs(&cfg, 5.0).unwrap();
        // rotor power has a closed form at hover: 4 c (m g / 4)^1.5
        let t = cfg.robot.weight() / 4.0;
        let p = 4.0 * cfg.robot.power.thrust_coeff * t.powf(1.5);
        assert!((cal.hover_power - p).abs() < 1e-3 * p);
        let frozen = CostModel::default();
        for (a, b) in [
            (cal.cost.c_leg, frozen.c_leg),
            (cal.cost.c_air, frozen.c_air),
            (cal.cost.e_trans, frozen.e_trans),
        ] {
            assert!((a - b).abs() < 0.01 * b, "{a} vs {b}");
        }
        assert_eq!(cal.cost.v_leg, frozen.v_leg);
        assert_eq!(cal.cost.v_air, frozen.v_air);
    }

    fn synthetic(decay: f64, cycles: usize) -> MissionLog {
        let freq = 2.0;
        let dt = 0.001;
        let n = (cycles as f64 / freq / dt).round() as usize + 1;
        let rows = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                let k = (t * freq + 1e-9).floor();
                let mut r = row(t, MissionPhase::Walk);
                // offset that shrinks geometrically from one cycle to the next
                r.position.z = 0.3 + decay.powf(k) * (1.0 + (2.0 * std::f64::consts::PI * t * freq).cos());
                r
            })
            .collect();
        MissionLog {
            rows,
            ..Default::default()
        }
    }

    #[test]
    fn periodic_log_has_zero_distances() {
        let log = synthetic(1.0, 12);
        let lc = limit_cycle_metric(&log, &GaitSchedule::two_contact(2.0), &PoincareWeights::default()).unwrap();
        assert!(lc.distances.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn geometric_decay_is_recovered() {
        let log = synthetic(0.5, 14);
        let lc = limit_cycle_metric(&log, &GaitSchedule::two_contact(2.0), &PoincareWeights::default()).unwrap();
        for w in lc.distances.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9);
        }
        // 0.5^(K-1) < 0.05 first holds at K = 6
        assert_eq!(lc.converged_at, Some(6));
    }

    #[test]
    fn short_log_rejected() {
        let log = synthetic(1.0, 4);
        assert!(matches!(
            limit_cycle_metric(&log, &GaitSchedule::two_contact(2.0), &PoincareWeights::default()),
            Err(MissionError::ShortLog(_))
        ));
    }

    #[test]
    fn convergence_index_cases() {
        assert_eq!(convergence_index(&[1.0, 0.5, 0.01, 0.02]), Some(3));
        assert_eq!(convergence_index(&[1.0, 0.01, 0.5, 0.02]), Some(4));
        assert_eq!(convergence_index(&[1.0, 0.5, 0.6]), None);
        assert_eq!(convergence_index(&[]), None);
    }
}
