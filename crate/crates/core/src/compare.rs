//! Side-by-side runs of the uniform lattice and the roadmap on one query.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::planner::{
    anchored_graph, astar, dijkstra, CostModel, Discretization, PlanError, PlannerConfig,
    RouteRequest, SearchAlgorithm,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Lattice spacings (m), at least two.
    pub spacings: Vec<f64>,
    /// Roadmap seeds, at least five.
    pub seeds: Vec<u64>,
    pub n_samples: usize,
    pub connect_radius: f64,
    /// Search the legged stratum only.
    pub legged_only: bool,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            start: [0.5, 0.0],
            goal: [3.5, 0.0],
            spacings: vec![0.5, 0.25],
            seeds: (0..5).collect(),
            n_samples: 800,
            connect_radius: 0.8,
            legged_only: false,
        }
    }
}

impl CompareParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.spacings.len() < 2 || self.seeds.len() < 5 {
            return Err(PlanError::InvalidParams(
                "need at least 2 spacings and 5 seeds".into(),
            ));
        }
        Ok(())
    }
}

/// One graph built and searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    /// `uniform` or `mmprm`.
    pub method: String,
    /// Lattice spacing, or the connection radius for a roadmap (m).
    pub resolution: f64,
    /// Roadmap seed; `None` for the lattice.
    pub seed: Option<u64>,
    pub build_ms: f64,
    pub nodes: usize,
    pub edges: usize,
    /// Optimal cost, `None` when there is no path.
    pub cost: Option<f64>,
    pub transitions: Option<usize>,
    pub dijkstra_expansions: usize,
    pub astar_expansions: usize,
    /// A* cost minus Dijkstra cost (0 when both agree or neither solves).
    pub astar_gap: f64,
}

/// Aggregate over all rows of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub solved: usize,
    pub cost_mean: Option<f64>,
    pub cost_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub params: CompareParams,
    /// Cheapest transport rate times the start-goal distance (J).
    pub lower_bound: f64,
    pub rows: Vec<CompareRow>,
    pub summaries: Vec<MethodSummary>,
}

fn run_one(
    env: &Environment,
    params: &CompareParams,
    disc: Discretization,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<CompareRow, PlanError> {
    let req = RouteRequest {
        start: params.start,
        goal: params.goal,
        discretization: disc,
        algorithm: SearchAlgorithm::Dijkstra,
        legged_only: params.legged_only,
    };
    let t0 = Instant::now();
    let (g, s, t) = anchored_graph(env, &req, cost, cfg)?;
    let build_ms = t0.elapsed().as_secs_f64() * 1e3;
    let d = dijkstra(&g, s, t)?;
    let a = astar(&g, s, t, cost)?;
    let astar_gap = match (&d.plan, &a.plan) {
        (Some(p), Some(q)) => q.total_cost - p.total_cost,
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let (method, resolution, seed) = match disc {
        Discretization::Uniform { spacing } => ("uniform", spacing, None),
        Discretization::Mmprm {
            connect_radius,
            seed,
            ..
        } => ("mmprm", connect_radius, Some(seed)),
    };
    Ok(CompareRow {
        method: method.into(),
        resolution,
        seed,
        build_ms,
        nodes: g.nodes().len(),
        edges: g.edges().len(),
        cost: d.plan.as_ref().map(|p| p.total_cost),
        transitions: d.plan.as_ref().map(|p| p.transitions.len()),
        dijkstra_expansions: d.expansions,
        astar_expansions: a.expansions,
        astar_gap,
    })
}

fn summarize(method: &str, rows: &[CompareRow]) -> MethodSummary {
    let costs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.cost)
        .collect();
    MethodSummary {
        method: method.into(),
        runs: rows.iter().filter(|r| r.method == method).count(),
        solved: costs.len(),
        cost_mean: (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64),
        cost_min: costs.iter().copied().reduce(f64::min),
    }
}

/// Runs every lattice spacing and every roadmap seed on the same query.
///
/// Runs execute in parallel and are reported in input order. An unreachable
/// goal is recorded as a row without cost, not as an error.
pub fn compare_discretizations(
    env: &Environment,
    params: &CompareParams,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<CompareReport, PlanError> {
    params.validate()?;
    let runs: Vec<Discretization> = params
        .spacings
        .iter()
        .map(|&spacing| Discretization::Uniform { spacing })
        .chain(params.seeds.iter().map(|&seed| Discretization::Mmprm {
            n_samples: params.n_samples,
            connect_radius: params.connect_radius,
            seed,
        }))
        .collect();
    let rows = runs
        .par_iter()
        .map(|&d| run_one(env, params, d, cost, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let dist = ((params.goal[0] - params.start[0]).powi(2)
        + (params.goal[1] - params.start[1]).powi(2))
    .sqrt();
    let summaries = vec![summarize("uniform", &rows), summarize("mmprm", &rows)];
    Ok(CompareReport {
        params: params.clone(),
        lower_bound: cost.min_rate() * dist,
        rows,
        summaries,
    })
}

const CSV_HEADER: &str = "method,resolution,seed,build_ms,nodes,edges,cost,transitions,dijkstra_expansions,astar_expansions,astar_gap";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

impl CompareReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, PlanError> {
        Ok(serde_json::from_str(s)?)
    }

    /// One line per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.resolution,
                opt(&r.seed),
                r.build_ms,
                r.nodes,
                r.edges,
                opt(&r.cost),
                opt(&r.transitions),
                r.dijkstra_expansions,
                r.astar_expansions,
                r.astar_gap
            );
        }
        out
    }

    /// Parses the rows written by [`CompareReport::to_csv`].
    pub fn rows_from_csv(s: &str) -> Result<Vec<CompareRow>, PlanError> {
        let bad = |m: String| PlanError::Malformed(m);
        let mut lines = s.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(bad("unexpected comparison CSV header".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 11 {
                    return Err(bad(format!("expected 11 fields, got {}", f.len())));
                }
                let num = |k: usize| -> Result<f64, PlanError> {
                    f[k].parse().map_err(|_| bad(format!("bad number {:?}", f[k])))
                };
                let int = |k: usize| -> Result<usize, PlanError> {
                    f[k].parse().map_err(|_| bad(format!("bad count {:?}", f[k])))
                };
                Ok(CompareRow {
                    method: f[0].to_string(),
                    resolution: num(1)?,
                    seed: if f[2].is_empty() {
                        None
                    } else {
                        Some(f[2].parse().map_err(|_| bad(format!("bad seed {:?}", f[2])))?)
                    },
                    build_ms: num(3)?,
                    nodes: int(4)?,
                    edges: int(5)?,
                    cost: if f[6].is_empty() { None } else { Some(num(6)?) },
                    transitions: if f[7].is_empty() { None } else { Some(int(7)?) },
                    dijkstra_expansions: int(8)?,
                    astar_expansions: int(9)?,
                    astar_gap: num(10)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Aabb;
    use nalgebra::Point3;

    fn wall() -> Environment {
        Environment::new(
            0.0,
            Aabb::new(Point3::new(0.0, -1.5, 0.0), Point3::new(4.0, 1.5, 2.5)),
            vec![Aabb::new(Point3::new(1.8, -1.5, 0.0), Point3::new(2.2, 1.5, 1.2))],
        )
        .unwrap()
    }

    #[test]
    fn report_round_trips() {
        let params = CompareParams {
            n_samples: 300,
            ..CompareParams::default()
        };
        let r = compare_discretizations(&wall(), &params, &CostModel::default(), &PlannerConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 7);
        assert_eq!(CompareReport::from_json_str(&r.to_json()).unwrap(), r);
        assert_eq!(CompareReport::rows_from_csv(&r.to_csv()).unwrap(), r.rows);
        for row in &r.rows {
            assert!(row.astar_gap.abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn legged_only_wall_has_no_path() {
        let params = CompareParams {
            n_samples: 300,
            legged_only: true,
            ..CompareParams::default()
        };
        let r = compare_discretizations(&wall(), &params, &CostModel::default(), &PlannerConfig::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.cost.is_none()));
        assert!(r.summaries.iter().all(|s| s.solved == 0 && s.cost_min.is_none()));
        assert_eq!(CompareReport::rows_from_csv(&r.to_csv()).unwrap(), r.rows);
    }

    #[test]
    fn too_few_runs_rejected() {
        let params = CompareParams {
            seeds: vec![1, 2],
            ..CompareParams::default()
        };
        assert!(compare_discretizations(&wall(), &params, &CostModel::default(), &PlannerConfig::default()).is_err());
    }
}
