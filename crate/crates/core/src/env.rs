//! World model: a flat ground plane with axis-aligned box obstacles.
//!
//! The environment is immutable once loaded. Occupancy is closed: a point on
//! an obstacle face counts as a collision, and so does a point on the ground.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

/// Tolerance used to decide whether an obstacle rests on the ground plane.
const RESTING_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("query ({x}, {y}) is outside the workspace footprint")]
    OutsideWorkspace { x: f64, y: f64 },
    #[error("box {index} has min corner not strictly below max corner")]
    DegenerateBox { index: usize },
    #[error("obstacle {index} is not contained in the workspace bounds")]
    ObstacleOutOfBounds { index: usize },
    #[error("workspace bounds are degenerate")]
    DegenerateBounds,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed environment file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Closed axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    fn is_proper(&self) -> bool {
        (0..3).all(|k| self.min[k] < self.max[k])
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub ground_z: f64,
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
}

impl Environment {
    /// Builds and validates an environment.
    pub fn new(ground_z: f64, bounds: Aabb, obstacles: Vec<Aabb>) -> Result<Self, EnvError> {
        let env = Self {
            ground_z,
            bounds,
            obstacles,
        };
        env.validate()?;
        Ok(env)
    }

    /// An obstacle-free workspace.
    pub fn empty(ground_z: f64, bounds: Aabb) -> Result<Self, EnvError> {
        Self::new(ground_z, bounds, Vec::new())
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !self.bounds.is_proper() {
            return Err(EnvError::DegenerateBounds);
        }
        for (index, b) in self.obstacles.iter().enumerate() {
            if !b.is_proper() {
                return Err(EnvError::DegenerateBox { index });
            }
            if !self.bounds.contains_box(b) {
                return Err(EnvError::ObstacleOutOfBounds { index });
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, EnvError> {
        let env: Environment = serde_json::from_str(s)?;
        env.validate()?;
        Ok(env)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    /// True iff `p` is inside the workspace, strictly above the ground and
    /// outside every obstacle.
    pub fn is_free(&self, p: &Point3<f64>) -> bool {
        self.bounds.contains(p)
            && p.z > self.ground_z
            && !self.obstacles.iter().any(|b| b.contains(p))
    }

    /// Height of the walkable surface at `(x, y)`: the ground plane or the top
    /// of the highest obstacle that rests on the ground and covers the point.
    pub fn ground_height(&self, x: f64, y: f64) -> Result<f64, EnvError> {
        if !self.bounds.footprint_contains(x, y) {
            return Err(EnvError::OutsideWorkspace { x, y });
        }
        Ok(self
            .obstacles
            .iter()
            .filter(|b| b.min.z <= self.ground_z + RESTING_TOL && b.footprint_contains(x, y))
            .map(|b| b.max.z)
            .fold(self.ground_z, f64::max))
    }

    /// Sampled collision check of the segment `[p0, p1]`.
    ///
    /// Samples sit at `i / 2^k` along the segment with the smallest `k` giving
    /// spacing `<= step`, so a finer step only ever adds samples.
    pub fn segment_free(&self, p0: &Point3<f64>, p1: &Point3<f64>, step: f64) -> bool {
        assert!(step > 0.0, "segment step must be positive");
        let len = (p1 - p0).norm();
        let mut n: u64 = 1;
        while len / (n as f64) > step {
            n *= 2;
        }
        (0..=n).all(|i| {
            let s = i as f64 / n as f64;
            self.is_free(&(p0 + (p1 - p0) * s))
        })
    }

    /// Copy of the environment with every obstacle grown by `margin`,
    /// clipped to the workspace. Boxes resting on the ground stay resting.
    pub fn inflated(&self, margin: f64) -> Environment {
        let obstacles = self
            .obstacles
            .iter()
            .map(|b| {
                let resting = b.min.z <= self.ground_z + RESTING_TOL;
                let mut min = b.min - Vector3::repeat(margin);
                let mut max = b.max + Vector3::repeat(margin);
                if resting {
                    min.z = b.min.z;
                }
                for k in 0..3 {
                    min[k] = min[k].max(self.bounds.min[k]);
                    max[k] = max[k].min(self.bounds.max[k]);
                }
                Aabb::new(min, max)
            })
            .collect();
        Environment {
            ground_z: self.ground_z,
            bounds: self.bounds,
            obstacles,
        }
    }

    /// Highest obstacle top, or the ground plane in an empty world.
    pub fn max_obstacle_height(&self) -> f64 {
        self.obstacles
            .iter()
            .map(|b| b.max.z)
            .fold(self.ground_z, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> Aabb {
        Aabb::new(Point3::new(-5.0, -5.0, -1.0), Point3::new(5.0, 5.0, 5.0))
    }

    fn with_box() -> Environment {
        Environment::new(
            0.0,
            world(),
            vec![Aabb::new(Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 2.0))],
        )
        .unwrap()
    }

    #[test]
    fn free_space_queries() {
        let empty = Environment::empty(0.0, world()).unwrap();
        assert!(empty.is_free(&Point3::new(0.0, 0.0, 1.0)));
        assert!(!empty.is_free(&Point3::new(0.0, 0.0, -0.1)));
        assert!(!empty.is_free(&Point3::new(0.0, 0.0, 0.0)));
        assert!(!empty.is_free(&Point3::new(6.0, 0.0, 1.0)));
        let env = with_box();
        assert!(!env.is_free(&Point3::new(0.0, 0.0, 1.0)));
        // closed faces are occupied
        assert!(!env.is_free(&Point3::new(1.0, 0.0, 1.0)));
        assert!(env.is_free(&Point3::new(1.0 + 1e-9, 0.0, 1.0)));
    }

    #[test]
    fn ground_height_sees_resting_boxes() {
        let empty = Environment::empty(0.0, world()).unwrap();
        assert_eq!(empty.ground_height(1.0, 2.0).unwrap(), 0.0);
        let step = Environment::new(
            0.0,
            world(),
            vec![
                Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 0.5)),
                // floating box does not count as ground
                Aabb::new(Point3::new(-3.0, -3.0, 1.0), Point3::new(-2.0, -2.0, 2.0)),
            ],
        )
        .unwrap();
        assert_eq!(step.ground_height(0.5, 0.5).unwrap(), 0.5);
        assert_eq!(step.ground_height(-2.5, -2.5).unwrap(), 0.0);
        assert!(matches!(
            step.ground_height(7.0, 0.0),
            Err(EnvError::OutsideWorkspace { .. })
        ));
    }

    #[test]
    fn segment_checks() {
        let empty = Environment::empty(0.0, world()).unwrap();
        assert!(empty.segment_free(
            &Point3::new(-4.0, -4.0, 0.5),
            &Point3::new(4.0, 3.0, 4.0),
            0.01
        ));
        let env = with_box();
        let a = Point3::new(-3.0, 0.0, 1.0);
        let b = Point3::new(3.0, 0.0, 1.0);
        assert!(!env.segment_free(&a, &b, 2.0 / 10.0));
        let p = Point3::new(3.0, 3.0, 1.0);
        assert!(env.segment_free(&p, &p, 0.1));
    }

    #[test]
    fn validation_rejects_bad_boxes() {
        let bad = Environment::new(
            0.0,
            world(),
            vec![Aabb::new(Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 1.0))],
        );
        assert!(matches!(bad, Err(EnvError::DegenerateBox { index: 0 })));
        let outside = Environment::new(
            0.0,
            world(),
            vec![Aabb::new(Point3::new(4.0, 0.0, 0.0), Point3::new(6.0, 1.0, 1.0))],
        );
        assert!(matches!(outside, Err(EnvError::ObstacleOutOfBounds { index: 0 })));
    }

    #[test]
    fn json_layout() {
        let env = Environment::from_json_str(
            r#"{"ground_z": 0.0,
                "bounds": {"min": [0, 0, 0], "max": [4, 3, 2]},
                "obstacles": [{"min": [1, 0, 0], "max": [2, 3, 1]}]}"#,
        )
        .unwrap();
        assert_eq!(env.obstacles.len(), 1);
        let back = Environment::from_json_str(&env.to_json()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn inflation_keeps_boxes_on_the_ground() {
        let env = with_box().inflated(0.25);
        let b = env.obstacles[0];
        assert_eq!(b.min.z, 0.0);
        assert_eq!(b.max.z, 2.25);
        assert_eq!(b.min.x, -1.25);
        assert!(env.validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn coord() -> impl Strategy<Value = f64> {
            -4.9f64..4.9
        }

        proptest! {
            #[test]
            fn degenerate_segment_matches_point(x in coord(), y in coord(), z in -0.5f64..4.9, s in 0.001f64..1.0) {
                let env = with_box();
                let p = Point3::new(x, y, z);
                prop_assert_eq!(env.segment_free(&p, &p, s), env.is_free(&p));
            }

            #[test]
            fn finer_step_is_never_less_conservative(
                a in (coord(), coord(), 0.1f64..4.0),
                b in (coord(), coord(), 0.1f64..4.0),
                s in 0.01f64..2.0,
                shrink in 0.05f64..1.0,
            ) {
                let env = with_box();
                let p0 = Point3::new(a.0, a.1, a.2);
                let p1 = Point3::new(b.0, b.1, b.2);
                if !env.segment_free(&p0, &p1, s) {
                    prop_assert!(!env.segment_free(&p0, &p1, s * shrink));
                }
            }
        }
    }
}
