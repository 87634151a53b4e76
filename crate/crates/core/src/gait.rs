//! Gait timing, swing-foot profiles and the support-polygon stability margin.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::rom::NUM_LEGS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GaitError {
    #[error("no stance feet: the robot is in a flight phase")]
    FlightPhase,
    #[error("invalid gait schedule: {0}")]
    InvalidSchedule(String),
}

/// Periodic gait timing. A frequency of zero means standing still with all
/// legs in stance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitSchedule {
    /// Gait-cycle frequency (Hz).
    pub freq: f64,
    /// Stance fraction of each leg's cycle.
    pub duty: f64,
    /// Per-leg phase offset in [0, 1), `LEG_NAMES` order.
    pub phase_offset: [f64; NUM_LEGS],
    /// Swing apex height (m).
    pub step_height: f64,
    /// Foot travel relative to the hip during one swing (m); 0 in place.
    pub stride: f64,
}

impl GaitSchedule {
    /// Diagonal pairs (FL+BR, FR+BL) half a cycle apart.
    pub fn trot(freq: f64, duty: f64) -> Self {
        Self {
            freq,
            duty,
            phase_offset: [0.0, 0.5, 0.5, 0.0],
            step_height: 0.04,
            stride: 0.0,
        }
    }

    /// Trot with two feet down at a time.
    pub fn two_contact(freq: f64) -> Self {
        Self::trot(freq, 0.5)
    }

    /// One leg swinging at a time, three always down.
    pub fn three_contact(freq: f64) -> Self {
        Self {
            duty: 0.75,
            phase_offset: [0.0, 0.5, 0.25, 0.75],
            ..Self::trot(freq, 0.75)
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        let bad = |m: &str| Err(GaitError::InvalidSchedule(m.into()));
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return bad("duty must lie in (0, 1)");
        }
        if !(self.freq >= 0.0 && self.freq.is_finite()) {
            return bad("frequency must be non-negative");
        }
        if self.phase_offset.iter().any(|o| !(0.0..1.0).contains(o)) {
            return bad("phase offsets must lie in [0, 1)");
        }
        if !(self.step_height >= 0.0) {
            return bad("step height must be non-negative");
        }
        Ok(())
    }

    /// Fewest legs in stance at any time of the cycle.
    pub fn min_stance_legs(&self) -> usize {
        if self.freq == 0.0 {
            return NUM_LEGS;
        }
        // the count is constant between consecutive lift-off/touchdown events
        let mut events: Vec<f64> = self
            .phase_offset
            .iter()
            .flat_map(|&o| [(1.0 - o).rem_euclid(1.0), (self.duty - o).rem_euclid(1.0)])
            .collect();
        events.sort_by(f64::total_cmp);
        events.push(events[0] + 1.0);
        events
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let t = 0.5 * (w[0] + w[1]) / self.freq;
                gait_phase(t, self).iter().filter(|p| p.stance).count()
            })
            .min()
            .unwrap_or(NUM_LEGS)
    }

    /// True when at least three feet are always down, so the body can rest
    /// inside a support polygon throughout the cycle.
    pub fn is_static(&self) -> bool {
        self.min_stance_legs() >= 3
    }

    /// Progress through the swing for a leg at `phase`, or `None` in stance.
    pub fn swing_progress(&self, phase: &LegPhase) -> Option<f64> {
        (!phase.stance).then(|| ((phase.phase - self.duty) / (1.0 - self.duty)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPhase {
    pub phase: f64,
    pub stance: bool,
}

/// Per-leg phase and stance flag at time `t`.
pub fn gait_phase(t: f64, sched: &GaitSchedule) -> [LegPhase; NUM_LEGS] {
    std::array::from_fn(|i| {
        if sched.freq == 0.0 {
            return LegPhase {
                phase: 0.0,
                stance: true,
            };
        }
        let raw = t * sched.freq + sched.phase_offset[i];
        let mut phase = raw - raw.floor();
        if phase >= 1.0 {
            phase = 0.0;
        }
        LegPhase {
            phase,
            stance: phase < sched.duty,
        }
    })
}

/// Swing-foot displacement `(along heading, up)` at swing progress `u`.
pub fn swing_trajectory(u: f64, sched: &GaitSchedule) -> (f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let dz = if u == 0.0 || u == 1.0 {
        0.0
    } else {
        sched.step_height * (PI * u).sin()
    };
    (sched.stride * (u - 0.5), dz)
}

/// Convex support region of the stance feet.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportPolygon {
    Point(Vector2<f64>),
    Segment(Vector2<f64>, Vector2<f64>),
    /// Counter-clockwise hull with at least three vertices.
    Polygon(Vec<Vector2<f64>>),
}

impl SupportPolygon {
    pub fn area(&self) -> f64 {
        match self {
            SupportPolygon::Polygon(v) => {
                let n = v.len();
                0.5 * (0..n)
                    .map(|i| cross(&v[i], &v[(i + 1) % n]))
                    .sum::<f64>()
            }
            _ => 0.0,
        }
    }
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn turn(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    cross(&(a - o), &(b - o))
}

/// Convex hull of the stance-foot ground projections.
pub fn support_polygon(feet: &[Vector2<f64>]) -> Result<SupportPolygon, GaitError> {
    let mut pts: Vec<Vector2<f64>> = feet.to_vec();
    if pts.is_empty() {
        return Err(GaitError::FlightPhase);
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() == 1 {
        return Ok(SupportPolygon::Point(pts[0]));
    }
    // Andrew's monotone chain, dropping collinear points.
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && turn(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && turn(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        let first = pts[0];
        let last = pts[pts.len() - 1];
        return Ok(SupportPolygon::Segment(first, last));
    }
    Ok(SupportPolygon::Polygon(hull))
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + ab * s)).norm()
}

/// Signed distance from the projected COM to the support boundary: positive
/// inside, negative outside. Point and segment supports never give a
/// positive margin.
pub fn stability_margin(com: &Vector2<f64>, poly: &SupportPolygon) -> f64 {
    match poly {
        SupportPolygon::Point(p) => -(com - p).norm(),
        SupportPolygon::Segment(a, b) => -point_segment_distance(com, a, b),
        SupportPolygon::Polygon(v) => {
            let n = v.len();
            let dist = (0..n)
                .map(|i| point_segment_distance(com, &v[i], &v[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min);
            let inside = (0..n).all(|i| turn(&v[i], &v[(i + 1) % n], com) >= 0.0);
            if inside {
                dist
            } else {
                -dist
            }
        }
    }
}
