//! Multi-modal roadmaps and optimal search.
//!
//! Graphs have two strata: legged nodes on the walkable layer (stand height
//! above the local ground) and aerial nodes in free space. The strata are
//! joined by vertical transition edges that stand for a takeoff or a landing.
//! Edge weights are energies.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::path::Path;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Environment};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("discretization produced no nodes")]
    EmptyGraph,
    #[error("invalid planner parameter: {0}")]
    InvalidParams(String),
    #[error("node id {0} does not exist")]
    BadNode(usize),
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error("anchor at ({x}, {y}) is not walkable")]
    BadAnchor { x: f64, y: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeTag {
    Legged,
    Aerial,
    Transition,
}

/// Energy coefficients for edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Legged transport energy per meter (J/m).
    pub c_leg: f64,
    /// Aerial transport energy per meter (J/m).
    pub c_air: f64,
    /// Legged holding power (J/s).
    pub p_leg: f64,
    /// Aerial holding power (J/s).
    pub p_air: f64,
    /// Energy of one takeoff or landing (J).
    pub e_trans: f64,
    /// Nominal walking speed (m/s).
    pub v_leg: f64,
    /// Nominal cruise speed (m/s).
    pub v_air: f64,
}

impl Default for CostModel {
    /// Calibrated on the default robot (see `mission::calibrate_costs`):
    /// 16.73 W walking at 0.1 m/s and 410.96 W hovering, the latter priced
    /// at the 0.5 m/s cruise speed.
    fn default() -> Self {
        Self {
            c_leg: 167.3,
            c_air: 821.9,
            p_leg: 0.0,
            p_air: 0.0,
            e_trans: 411.0,
            v_leg: 0.1,
            v_air: 0.5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), PlanError> {
        let all = [
            self.c_leg, self.c_air, self.p_leg, self.p_air, self.e_trans, self.v_leg, self.v_air,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(PlanError::InvalidParams("cost coefficients must be >= 0".into()));
        }
        if !(self.e_trans > 0.0) || !(self.v_leg > 0.0) || !(self.v_air > 0.0) {
            return Err(PlanError::InvalidParams(
                "transition energy and nominal speeds must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn legged_rate(&self) -> f64 {
        self.c_leg + self.p_leg / self.v_leg
    }

    pub fn aerial_rate(&self) -> f64 {
        self.c_air + self.p_air / self.v_air
    }

    /// Cheapest energy per meter of any non-transition mode.
    pub fn min_rate(&self) -> f64 {
        self.legged_rate().min(self.aerial_rate())
    }
}

/// Weight of an edge of the given length and mode (J).
pub fn edge_cost(length: f64, mode: ModeTag, cost: &CostModel) -> f64 {
    match mode {
        ModeTag::Legged => cost.c_leg * length + cost.p_leg * length / cost.v_leg,
        ModeTag::Aerial => cost.c_air * length + cost.p_air * length / cost.v_air,
        ModeTag::Transition => cost.e_trans,
    }
}

/// Geometric knobs shared by both discretizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Body height above the local ground on the walkable layer (m).
    pub stand_height: f64,
    /// Tolerance on the walkable-layer height and on transition xy offset (m).
    pub z_tol: f64,
    /// Obstacles are grown by this much before any collision query (m).
    pub clearance: f64,
    /// Sampling step of segment collision checks (m).
    pub collision_step: f64,
    /// Largest height change a legged edge may climb (m).
    pub max_step_height: f64,
    pub k_neighbors: usize,
    /// Fraction of roadmap samples drawn on the walkable layer.
    pub rho_leg: f64,
    /// Height of the takeoff node above its legged node in a roadmap (m).
    pub takeoff_rise: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            stand_height: 0.3,
            z_tol: 0.02,
            clearance: 0.35,
            collision_step: 0.05,
            max_step_height: 0.1,
            k_neighbors: 10,
            rho_leg: 0.4,
            takeoff_rise: 0.5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let ok = self.stand_height > 0.0
            && self.z_tol > 0.0
            && self.clearance >= 0.0
            && self.collision_step > 0.0
            && self.max_step_height >= 0.0
            && self.k_neighbors > 0
            && (0.0..=1.0).contains(&self.rho_leg)
            && self.takeoff_rise > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PlanError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub position: Point3<f64>,
    pub mode: ModeTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub mode: ModeTag,
    pub length: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub method: String,
    pub seed: Option<u64>,
    pub spacing: Option<f64>,
    pub n_samples: Option<usize>,
    pub connect_radius: Option<f64>,
    pub config: PlannerConfig,
    pub cost: CostModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    meta: BuildMeta,
}

/// Undirected multi-modal graph. Immutable apart from anchor insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct ModalGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    meta: BuildMeta,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl TryFrom<GraphFile> for ModalGraph {
    type Error = PlanError;
    fn try_from(f: GraphFile) -> Result<Self, PlanError> {
        ModalGraph::from_parts(f.nodes, f.edges, f.meta)
    }
}

impl From<ModalGraph> for GraphFile {
    fn from(g: ModalGraph) -> Self {
        GraphFile {
            nodes: g.nodes,
            edges: g.edges,
            meta: g.meta,
        }
    }
}

fn xy_dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a.xy() - b.xy()).norm()
}

impl ModalGraph {
    /// Assembles a graph, checking ids, simplicity and transition geometry.
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<Edge>, meta: BuildMeta) -> Result<Self, PlanError> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(PlanError::Malformed(format!("node {i} carries id {}", n.id)));
            }
            if n.mode == ModeTag::Transition {
                return Err(PlanError::Malformed(format!("node {i} has a transition mode")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            if e.a >= nodes.len() || e.b >= nodes.len() || e.a == e.b {
                return Err(PlanError::Malformed(format!("edge {k} has bad endpoints")));
            }
            if !seen.insert((e.a.min(e.b), e.a.max(e.b))) {
                return Err(PlanError::Malformed(format!("edge {k} duplicates another")));
            }
            if !(e.cost >= 0.0) || !(e.length >= 0.0) {
                return Err(PlanError::Malformed(format!("edge {k} has negative weight")));
            }
            let (na, nb) = (&nodes[e.a], &nodes[e.b]);
            let consistent = match e.mode {
                ModeTag::Transition => {
                    na.mode != nb.mode && xy_dist(&na.position, &nb.position) <= meta.config.z_tol
                }
                m => na.mode == m && nb.mode == m,
            };
            if !consistent {
                return Err(PlanError::Malformed(format!("edge {k} mode disagrees with its endpoints")));
            }
            adjacency[e.a].push((e.b, k));
            adjacency[e.b].push((e.a, k));
        }
        Ok(Self {
            nodes,
            edges,
            meta,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn meta(&self) -> &BuildMeta {
        &self.meta
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, usize)] {
        &self.adjacency[id]
    }

    pub fn count_nodes(&self, mode: ModeTag) -> usize {
        self.nodes.iter().filter(|n| n.mode == mode).count()
    }

    pub fn count_edges(&self, mode: ModeTag) -> usize {
        self.edges.iter().filter(|e| e.mode == mode).count()
    }

    /// Same nodes, only legged edges.
    pub fn legged_only(&self) -> ModalGraph {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| e.mode == ModeTag::Legged)
            .collect();
        ModalGraph::from_parts(self.nodes.clone(), edges, self.meta.clone())
            .expect("a subgraph of a valid graph is valid")
    }

    /// Re-prices every edge.
    pub fn with_costs(&self, cost: &CostModel) -> ModalGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.cost = edge_cost(e.length, e.mode, cost);
        }
        g.meta.cost = *cost;
        g
    }

    /// Checks the collision and walkable-layer invariants against `env`.
    pub fn check_invariants(&self, env: &Environment) -> Result<(), PlanError> {
        let cfg = &self.meta.config;
        let free = env.inflated(cfg.clearance);
        for n in &self.nodes {
            if !free.is_free(&n.position) {
                return Err(PlanError::Malformed(format!("node {} is in collision", n.id)));
            }
            if n.mode == ModeTag::Legged {
                let g = env.ground_height(n.position.x, n.position.y)?;
                if (n.position.z - (g + cfg.stand_height)).abs() > cfg.z_tol {
                    return Err(PlanError::Malformed(format!("legged node {} is off the walkable layer", n.id)));
                }
            }
        }
        Ok(())
    }

    /// Adds a legged node at `(x, y)` unless one already sits there, and
    /// links it to legged nodes within `radius` (at most `k_neighbors`).
    /// Returns the node id.
    pub fn insert_anchor(&mut self, env: &Environment, x: f64, y: f64, radius: f64) -> Result<usize, PlanError> {
        let cfg = self.meta.config;
        let z = env.ground_height(x, y)? + cfg.stand_height;
        let p = Point3::new(x, y, z);
        if let Some(n) = self
            .nodes
            .iter()
            .find(|n| n.mode == ModeTag::Legged && (n.position - p).norm() <= cfg.z_tol)
        {
            return Ok(n.id);
        }
        let free = env.inflated(cfg.clearance);
        if !free.is_free(&p) {
            return Err(PlanError::BadAnchor { x, y });
        }
        let id = self.nodes.len();
        let mut near: Vec<(f64, usize)> = self
            .nodes
            .iter()
            .filter(|n| n.mode == ModeTag::Legged)
            .map(|n| ((n.position - p).norm(), n.id))
            .filter(|(d, _)| *d <= radius)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(cfg.k_neighbors);
        let mut nodes = self.nodes.clone();
        nodes.push(Node {
            id,
            position: p,
            mode: ModeTag::Legged,
        });
        let mut edges = self.edges.clone();
        for (d, j) in near {
            let q = nodes[j].position;
            if (q.z - p.z).abs() <= cfg.max_step_height && free.segment_free(&p, &q, cfg.collision_step) {
                edges.push(Edge {
                    a: j,
                    b: id,
                    mode: ModeTag::Legged,
                    length: d,
                    cost: edge_cost(d, ModeTag::Legged, &self.meta.cost),
                });
            }
        }
        let overhead = nodes
            .iter()
            .filter(|n| {
                n.mode == ModeTag::Aerial
                    && xy_dist(&n.position, &p) <= cfg.z_tol
                    && n.position.z > p.z
                    && n.position.z - p.z <= radius
            })
            .min_by(|a, b| a.position.z.total_cmp(&b.position.z).then(a.id.cmp(&b.id)))
            .map(|n| (n.id, n.position));
        if let Some((j, q)) = overhead {
            if free.segment_free(&p, &q, cfg.collision_step) {
                edges.push(transition_edge(j, id, (q - p).norm(), &self.meta.cost));
            }
        }
        *self = ModalGraph::from_parts(nodes, edges, self.meta.clone())?;
        Ok(id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, PlanError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PlanError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

fn transition_edge(a: usize, b: usize, length: f64, cost: &CostModel) -> Edge {
    Edge {
        a,
        b,
        mode: ModeTag::Transition,
        length,
        cost: edge_cost(length, ModeTag::Transition, cost),
    }
}

/// Lattice coordinates `min, min + s, ...` up to and including `max`.
fn lattice(min: f64, max: f64, s: f64) -> Vec<f64> {
    let n = ((max - min) / s + 1e-9).floor() as usize + 1;
    (0..n).map(|i| (min + i as f64 * s).min(max)).collect()
}

/// Altitudes of the aerial lattice: the first level one spacing above the
/// walkable layer (or at the ceiling if that is lower), then every spacing.
fn aerial_levels(env: &Environment, cfg: &PlannerConfig, s: f64) -> Vec<f64> {
    let top = env.bounds.max.z;
    let first = (env.ground_z + cfg.stand_height + s).min(top);
    lattice(first, top, s)
}

/// Regular lattice over the workspace.
pub fn discretize_uniform(
    env: &Environment,
    spacing: f64,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<ModalGraph, PlanError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(PlanError::InvalidParams(format!("spacing must be > 0, got {spacing}")));
    }
    cost.validate()?;
    cfg.validate()?;
    let free = env.inflated(cfg.clearance);
    let b = &env.bounds;
    let xs = lattice(b.min.x, b.max.x, spacing);
    let ys = lattice(b.min.y, b.max.y, spacing);
    let zs = aerial_levels(env, cfg, spacing);
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());

    let mut nodes = Vec::new();
    let mut legged = vec![None; nx * ny];
    let mut aerial = vec![None; nx * ny * nz];
    let push = |nodes: &mut Vec<Node>, p: Point3<f64>, mode| {
        let id = nodes.len();
        nodes.push(Node { id, position: p, mode });
        id
    };
    for ix in 0..nx {
        for iy in 0..ny {
            let z = env.ground_height(xs[ix], ys[iy])? + cfg.stand_height;
            let p = Point3::new(xs[ix], ys[iy], z);
            if free.is_free(&p) {
                legged[ix * ny + iy] = Some(push(&mut nodes, p, ModeTag::Legged));
            }
        }
    }
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let p = Point3::new(xs[ix], ys[iy], zs[iz]);
                if free.is_free(&p) {
                    aerial[(ix * ny + iy) * nz + iz] = Some(push(&mut nodes, p, ModeTag::Aerial));
                }
            }
        }
    }
    if nodes.is_empty() {
        return Err(PlanError::EmptyGraph);
    }

    let mut candidates: Vec<(usize, usize, ModeTag)> = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            let Some(a) = legged[ix * ny + iy] else { continue };
            for (dx, dy) in [(1i64, -1i64), (1, 0), (1, 1), (0, 1)] {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                    continue;
                }
                if let Some(b) = legged[jx as usize * ny + jy as usize] {
                    candidates.push((a, b, ModeTag::Legged));
                }
            }
        }
    }
    let half_offsets: Vec<(i64, i64, i64)> = (-1..=1)
        .flat_map(|dx| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| (dx, dy, dz))))
        .filter(|&o| o > (0, 0, 0))
        .collect();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let Some(a) = aerial[(ix * ny + iy) * nz + iz] else { continue };
                for &(dx, dy, dz) in &half_offsets {
                    let (jx, jy, jz) = (ix as i64 + dx, iy as i64 + dy, iz as i64 + dz);
                    if jx < 0 || jy < 0 || jz < 0 || jx >= nx as i64 || jy >= ny as i64 || jz >= nz as i64 {
                        continue;
                    }
                    if let Some(b) = aerial[(jx as usize * ny + jy as usize) * nz + jz as usize] {
                        candidates.push((a, b, ModeTag::Aerial));
                    }
                }
            }
        }
    }
    for ix in 0..nx {
        for iy in 0..ny {
            let Some(a) = legged[ix * ny + iy] else { continue };
            let za = nodes[a].position.z;
            let above = (0..nz)
                .filter_map(|iz| aerial[(ix * ny + iy) * nz + iz])
                .find(|&b| nodes[b].position.z > za);
            if let Some(b) = above {
                if nodes[b].position.z - za <= spacing * (1.0 + 1e-9) {
                    candidates.push((a, b, ModeTag::Transition));
                }
            }
        }
    }
    let edges = validate_edges(&nodes, candidates, &free, cfg, cost);
    ModalGraph::from_parts(
        nodes,
        edges,
        BuildMeta {
            method: "uniform".into(),
            seed: None,
            spacing: Some(spacing),
            n_samples: None,
            connect_radius: None,
            config: *cfg,
            cost: *cost,
        },
    )
}

/// Collision-checks candidate edges in parallel, keeping candidate order.
fn validate_edges(
    nodes: &[Node],
    candidates: Vec<(usize, usize, ModeTag)>,
    free: &Environment,
    cfg: &PlannerConfig,
    cost: &CostModel,
) -> Vec<Edge> {
    let keep: Vec<bool> = candidates
        .par_iter()
        .map(|&(a, b, mode)| {
            let (p, q) = (&nodes[a].position, &nodes[b].position);
            let step_ok = mode != ModeTag::Legged || (p.z - q.z).abs() <= cfg.max_step_height;
            step_ok && free.segment_free(p, q, cfg.collision_step)
        })
        .collect();
    candidates
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((a, b, mode), _)| {
            let length = (nodes[a].position - nodes[b].position).norm();
            Edge {
                a,
                b,
                mode,
                length,
                cost: edge_cost(length, mode, cost),
            }
        })
        .collect()
}

/// Multi-modal probabilistic roadmap.
///
/// A fraction `rho_leg` of the samples land on the walkable layer, the rest
/// uniformly in free space between stand height and the ceiling. Every
/// legged sample also gets a takeoff node `takeoff_rise` above it (when
/// free), joined by a transition edge. Nodes connect to their `k_neighbors`
/// nearest same-mode nodes within `connect_radius`.
pub fn discretize_mmprm(
    env: &Environment,
    n_samples: usize,
    connect_radius: f64,
    seed: u64,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<ModalGraph, PlanError> {
    if n_samples == 0 || !(connect_radius > 0.0) {
        return Err(PlanError::InvalidParams(
            "n_samples and connect_radius must be positive".into(),
        ));
    }
    cost.validate()?;
    cfg.validate()?;
    let free = env.inflated(cfg.clearance);
    let b = &env.bounds;
    let z_floor = (env.ground_z + cfg.stand_height).min(b.max.z);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<Node> = Vec::new();
    for _ in 0..n_samples {
        let legged = rng.random::<f64>() < cfg.rho_leg;
        let x = rng.random_range(b.min.x..=b.max.x);
        let y = rng.random_range(b.min.y..=b.max.y);
        let (z, mode) = if legged {
            (env.ground_height(x, y)? + cfg.stand_height, ModeTag::Legged)
        } else {
            (rng.random_range(z_floor..=b.max.z), ModeTag::Aerial)
        };
        let p = Point3::new(x, y, z);
        if free.is_free(&p) {
            nodes.push(Node {
                id: nodes.len(),
                position: p,
                mode,
            });
        }
    }
    if nodes.is_empty() {
        return Err(PlanError::EmptyGraph);
    }
    let rise = cfg.takeoff_rise.min(connect_radius);
    let mut candidates = Vec::new();
    for i in 0..nodes.len() {
        if nodes[i].mode != ModeTag::Legged {
            continue;
        }
        let p = nodes[i].position;
        let q = Point3::new(p.x, p.y, p.z + rise);
        if free.is_free(&q) {
            let id = nodes.len();
            nodes.push(Node {
                id,
                position: q,
                mode: ModeTag::Aerial,
            });
            candidates.push((i, id, ModeTag::Transition));
        }
    }
    let mut pairs = BTreeSet::new();
    for n in &nodes {
        let mut near: Vec<(f64, usize)> = nodes
            .iter()
            .filter(|m| m.mode == n.mode && m.id != n.id)
            .map(|m| ((m.position - n.position).norm(), m.id))
            .filter(|(d, _)| *d <= connect_radius)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in near.iter().take(cfg.k_neighbors) {
            pairs.insert((n.id.min(j), n.id.max(j)));
        }
    }
    candidates.extend(pairs.into_iter().map(|(a, b)| (a, b, nodes[a].mode)));
    let edges = validate_edges(&nodes, candidates, &free, cfg, cost);
    ModalGraph::from_parts(
        nodes,
        edges,
        BuildMeta {
            method: "mmprm".into(),
            seed: Some(seed),
            spacing: None,
            n_samples: Some(n_samples),
            connect_radius: Some(connect_radius),
            config: *cfg,
            cost: *cost,
        },
    )
}

/// Optimal path through a [`ModalGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub node_ids: Vec<usize>,
    pub waypoints: Vec<Point3<f64>>,
    pub modes: Vec<ModeTag>,
    /// Mode of edge `k`, joining waypoint `k` to waypoint `k + 1`.
    pub edge_modes: Vec<ModeTag>,
    pub edge_costs: Vec<f64>,
    pub total_cost: f64,
    /// Indices of transition edges.
    pub transitions: Vec<usize>,
}

impl Plan {
    fn from_path(g: &ModalGraph, path: Vec<(usize, Option<usize>)>) -> Plan {
        let node_ids: Vec<usize> = path.iter().map(|p| p.0).collect();
        let edges: Vec<&Edge> = path.iter().filter_map(|p| p.1).map(|k| &g.edges[k]).collect();
        let edge_costs: Vec<f64> = edges.iter().map(|e| e.cost).collect();
        let edge_modes: Vec<ModeTag> = edges.iter().map(|e| e.mode).collect();
        Plan {
            waypoints: node_ids.iter().map(|&i| g.nodes[i].position).collect(),
            modes: node_ids.iter().map(|&i| g.nodes[i].mode).collect(),
            total_cost: edge_costs.iter().sum(),
            transitions: (0..edge_modes.len())
                .filter(|&k| edge_modes[k] == ModeTag::Transition)
                .collect(),
            node_ids,
            edge_modes,
            edge_costs,
        }
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Structural checks: lengths, cost sum, and mode changes only across
    /// transition edges.
    pub fn validate(&self) -> Result<(), PlanError> {
        let n = self.node_ids.len();
        let bad = |m: &str| Err(PlanError::Malformed(m.to_string()));
        if n == 0 {
            return bad("plan has no nodes");
        }
        if self.waypoints.len() != n
            || self.modes.len() != n
            || self.edge_modes.len() + 1 != n
            || self.edge_costs.len() + 1 != n
        {
            return bad("plan arrays have inconsistent lengths");
        }
        let sum: f64 = self.edge_costs.iter().sum();
        if (sum - self.total_cost).abs() > 1e-9 {
            return bad("total cost differs from the sum of edge costs");
        }
        for k in 0..n - 1 {
            let changes = self.modes[k] != self.modes[k + 1];
            let is_transition = self.edge_modes[k] == ModeTag::Transition;
            if changes != is_transition {
                return bad("mode change without a transition edge");
            }
        }
        let transitions: Vec<usize> = (0..n - 1)
            .filter(|&k| self.edge_modes[k] == ModeTag::Transition)
            .collect();
        if transitions != self.transitions {
            return bad("transition index list is stale");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, PlanError> {
        let p: Plan = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `None` when the goal is unreachable.
    pub plan: Option<Plan>,
    /// Number of nodes expanded.
    pub expansions: usize,
    pub expansion_order: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct QueueKey {
    f: f64,
    g: f64,
    hops: usize,
    node: usize,
}

impl PartialEq for QueueKey {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for QueueKey {}
impl PartialOrd for QueueKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for QueueKey {
    fn cmp(&self, o: &Self) -> Ordering {
        self.f
            .total_cmp(&o.f)
            .then(self.hops.cmp(&o.hops))
            .then(self.node.cmp(&o.node))
    }
}

/// Best-first search shared by Dijkstra (`h = 0`) and A*.
///
/// Labels are ordered by (cost, edge count, predecessor id), which makes the
/// returned path unique. Closed nodes are reopened if a better label turns
/// up, so an admissible but inconsistent heuristic still yields an optimum.
pub fn best_first(
    g: &ModalGraph,
    start: usize,
    goal: usize,
    h: impl Fn(usize) -> f64,
) -> Result<SearchResult, PlanError> {
    let n = g.nodes.len();
    for id in [start, goal] {
        if id >= n {
            return Err(PlanError::BadNode(id));
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![usize::MAX; n];
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    hops[start] = 0;
    heap.push(Reverse(QueueKey {
        f: h(start),
        g: 0.0,
        hops: 0,
        node: start,
    }));
    while let Some(Reverse(key)) = heap.pop() {
        let u = key.node;
        if closed[u] || key.g != dist[u] || key.hops != hops[u] {
            continue;
        }
        closed[u] = true;
        order.push(u);
        if u == goal {
            break;
        }
        for &(v, k) in &g.adjacency[u] {
            let ng = dist[u] + g.edges[k].cost;
            let nh = hops[u] + 1;
            let better = ng < dist[v]
                || (ng == dist[v]
                    && (nh < hops[v] || (nh == hops[v] && pred[v].is_some_and(|(p, _)| u < p))));
            if better {
                dist[v] = ng;
                hops[v] = nh;
                pred[v] = Some((u, k));
                closed[v] = false;
                heap.push(Reverse(QueueKey {
                    f: ng + h(v),
                    g: ng,
                    hops: nh,
                    node: v,
                }));
            }
        }
    }
    let plan = if closed[goal] {
        // entry i holds node i of the path and the edge leading into it
        let mut path = Vec::new();
        let mut cur = goal;
        while let Some((p, k)) = pred[cur] {
            path.push((cur, Some(k)));
            cur = p;
        }
        path.push((cur, None));
        path.reverse();
        Some(Plan::from_path(g, path))
    } else {
        None
    };
    Ok(SearchResult {
        plan,
        expansions: order.len(),
        expansion_order: order,
    })
}

pub fn dijkstra(g: &ModalGraph, start: usize, goal: usize) -> Result<SearchResult, PlanError> {
    best_first(g, start, goal, |_| 0.0)
}

/// Energy per meter used by the A* heuristic.
///
/// The cheaper of the two transport rates, further capped so that no
/// transition edge can climb faster in heuristic value than it costs.
pub fn heuristic_rate(g: &ModalGraph, cost: &CostModel) -> f64 {
    let longest_transition = g
        .edges
        .iter()
        .filter(|e| e.mode == ModeTag::Transition)
        .map(|e| e.length)
        .fold(0.0, f64::max);
    let mut rate = cost.min_rate();
    if longest_transition > 0.0 {
        rate = rate.min(cost.e_trans / longest_transition);
    }
    rate
}

pub fn astar(g: &ModalGraph, start: usize, goal: usize, cost: &CostModel) -> Result<SearchResult, PlanError> {
    if goal >= g.nodes.len() {
        return Err(PlanError::BadNode(goal));
    }
    let rate = heuristic_rate(g, cost);
    let target = g.nodes[goal].position;
    best_first(g, start, goal, |i| rate * (g.nodes[i].position - target).norm())
}

/// Largest violation of `cost(a, b) >= h(a) - h(b)` over all edges in both
/// directions (non-positive when the heuristic is consistent).
pub fn consistency_gap(g: &ModalGraph, goal: usize, cost: &CostModel) -> f64 {
    let rate = heuristic_rate(g, cost);
    let target = g.nodes[goal].position;
    let h = |i: usize| rate * (g.nodes[i].position - target).norm();
    g.edges
        .iter()
        .map(|e| (h(e.a) - h(e.b)).abs() - e.cost)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// How to turn an environment into a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Discretization {
    Uniform { spacing: f64 },
    Mmprm {
        n_samples: usize,
        connect_radius: f64,
        seed: u64,
    },
}

impl Discretization {
    pub fn build(&self, env: &Environment, cost: &CostModel, cfg: &PlannerConfig) -> Result<ModalGraph, PlanError> {
        match *self {
            Discretization::Uniform { spacing } => discretize_uniform(env, spacing, cost, cfg),
            Discretization::Mmprm {
                n_samples,
                connect_radius,
                seed,
            } => discretize_mmprm(env, n_samples, connect_radius, seed, cost, cfg),
        }
    }

    /// Radius within which start and goal anchors are wired in: one lattice
    /// diagonal, or the roadmap connection radius.
    pub fn anchor_radius(&self) -> f64 {
        match *self {
            Discretization::Uniform { spacing } => spacing * std::f64::consts::SQRT_2 * (1.0 + 1e-9),
            Discretization::Mmprm { connect_radius, .. } => connect_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchAlgorithm {
    Dijkstra,
    Astar,
}

pub fn search(
    g: &ModalGraph,
    start: usize,
    goal: usize,
    algorithm: SearchAlgorithm,
    cost: &CostModel,
) -> Result<SearchResult, PlanError> {
    match algorithm {
        SearchAlgorithm::Dijkstra => dijkstra(g, start, goal),
        SearchAlgorithm::Astar => astar(g, start, goal, cost),
    }
}

/// A planning query between two ground points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    /// Start (x, y); the robot stands there on the walkable layer.
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub discretization: Discretization,
    pub algorithm: SearchAlgorithm,
    /// Drop aerial nodes and transitions before searching.
    pub legged_only: bool,
}

#[derive(Debug, Clone)]
pub struct Route {
    pub graph: ModalGraph,
    pub start: usize,
    pub goal: usize,
    pub search: SearchResult,
}

/// Builds the graph of a request and wires in its start and goal.
/// Returns the graph with the start and goal node ids.
pub fn anchored_graph(
    env: &Environment,
    req: &RouteRequest,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<(ModalGraph, usize, usize), PlanError> {
    let mut graph = req.discretization.build(env, cost, cfg)?;
    let radius = req.discretization.anchor_radius();
    let start = graph.insert_anchor(env, req.start[0], req.start[1], radius)?;
    let goal = graph.insert_anchor(env, req.goal[0], req.goal[1], radius)?;
    if req.legged_only {
        // only edges are dropped, so the anchor ids stay valid
        graph = graph.legged_only();
    }
    Ok((graph, start, goal))
}

/// Builds the graph, wires in start and goal, and searches it.
pub fn plan_route(
    env: &Environment,
    req: &RouteRequest,
    cost: &CostModel,
    cfg: &PlannerConfig,
) -> Result<Route, PlanError> {
    let (graph, start, goal) = anchored_graph(env, req, cost, cfg)?;
    let search = search(&graph, start, goal, req.algorithm, cost)?;
    Ok(Route {
        graph,
        start,
        goal,
        search,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Aabb;
    use proptest::prelude::*;

    fn box_env(x: f64, y: f64, z: f64) -> Environment {
        Environment::empty(0.0, Aabb::new(Point3::origin(), Point3::new(x, y, z))).unwrap()
    }

    fn cfg0() -> PlannerConfig {
        PlannerConfig {
            clearance: 0.0,
            ..PlannerConfig::default()
        }
    }

    /// Independent lattice combinatorics: number of unordered neighbour pairs
    /// in an n-box under the given connectivity offsets.
    fn pair_count(dims: &[usize], offsets: &[Vec<i64>]) -> usize {
        offsets
            .iter()
            .map(|o| {
                dims.iter()
                    .zip(o)
                    .map(|(&n, &d)| n.saturating_sub(d.unsigned_abs() as usize))
                    .product::<usize>()
            })
            .sum()
    }

    fn half_offsets(dim: usize) -> Vec<Vec<i64>> {
        let all: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
            .map(|mut k| {
                (0..dim)
                    .map(|_| {
                        let d = (k % 3) as i64 - 1;
                        k /= 3;
                        d
                    })
                    .collect()
            })
            .collect();
        // keep one of each +/- pair: first nonzero component positive
        all.into_iter()
            .filter(|o| o.iter().find(|&&d| d != 0).is_some_and(|&d| d > 0))
            .collect()
    }

    #[test]
    fn uniform_counts_match_lattice_combinatorics() {
        for (env, s) in [(box_env(2.0, 2.0, 2.0), 1.0), (box_env(2.0, 2.0, 3.5), 1.0), (box_env(3.0, 2.0, 2.8), 0.5)] {
            let g = discretize_uniform(&env, s, &CostModel::default(), &cfg0()).unwrap();
            let nx = (env.bounds.max.x / s).round() as usize + 1;
            let ny = (env.bounds.max.y / s).round() as usize + 1;
            let mut nz = 0;
            while 0.3 + (nz + 1) as f64 * s <= env.bounds.max.z + 1e-9 {
                nz += 1;
            }
            assert_eq!(g.count_nodes(ModeTag::Legged), nx * ny);
            assert_eq!(g.count_nodes(ModeTag::Aerial), nx * ny * nz);
            assert_eq!(half_offsets(2).len(), 4);
            assert_eq!(half_offsets(3).len(), 13);
            assert_eq!(g.count_edges(ModeTag::Legged), pair_count(&[nx, ny], &half_offsets(2)));
            assert_eq!(g.count_edges(ModeTag::Aerial), pair_count(&[nx, ny, nz], &half_offsets(3)));
            assert_eq!(g.count_edges(ModeTag::Transition), nx * ny);
            g.check_invariants(&env).unwrap();
        }
    }

    #[test]
    fn two_by_two_by_two_at_one_meter() {
        let g = discretize_uniform(&box_env(2.0, 2.0, 2.0), 1.0, &CostModel::default(), &cfg0()).unwrap();
        assert_eq!(g.nodes().len(), 18);
        assert_eq!(g.edges().len(), 20 + 20 + 9);
    }

    #[test]
    fn spacing_larger_than_bounds() {
        let g = discretize_uniform(&box_env(2.0, 2.0, 2.0), 10.0, &CostModel::default(), &cfg0()).unwrap();
        assert_eq!(g.count_nodes(ModeTag::Legged), 1);
        assert_eq!(g.count_nodes(ModeTag::Aerial), 1);
        assert!(discretize_uniform(&box_env(2.0, 2.0, 2.0), 0.0, &CostModel::default(), &cfg0()).is_err());
    }

    #[test]
    fn fully_occupied_is_an_error() {
        let env = Environment::new(
            0.0,
            Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0)),
            vec![Aabb::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0))],
        )
        .unwrap();
        assert!(matches!(
            discretize_uniform(&env, 0.5, &CostModel::default(), &cfg0()),
            Err(PlanError::EmptyGraph)
        ));
    }

    fn flood(g: &ModalGraph, from: usize) -> Vec<bool> {
        let mut seen = vec![false; g.nodes().len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    #[test]
    fn full_height_wall_splits_the_legged_layer() {
        let env = Environment::new(
            0.0,
            Aabb::new(Point3::origin(), Point3::new(4.0, 2.0, 2.0)),
            vec![Aabb::new(Point3::new(1.8, 0.0, 0.0), Point3::new(2.2, 2.0, 2.0))],
        )
        .unwrap();
        let g = discretize_uniform(&env, 0.25, &CostModel::default(), &cfg0()).unwrap();
        let legged = g.legged_only();
        let left = g.nodes().iter().find(|n| n.mode == ModeTag::Legged && n.position.x < 1.0).unwrap().id;
        let reach = flood(&legged, left);
        assert!(g
            .nodes()
            .iter()
            .filter(|n| n.mode == ModeTag::Legged && n.position.x > 3.0)
            .all(|n| !reach[n.id]));
    }

    #[test]
    fn edge_cost_examples() {
        let c = CostModel {
            p_leg: 3.0,
            p_air: 7.0,
            ..CostModel::default()
        };
        assert_eq!(edge_cost(0.0, ModeTag::Legged, &c), 0.0);
        for m in [ModeTag::Legged, ModeTag::Aerial] {
            let one = edge_cost(1.3, m, &c);
            assert!((edge_cost(2.6, m, &c) - 2.0 * one).abs() < 1e-12);
        }
        assert_eq!(edge_cost(0.4, ModeTag::Transition, &c), c.e_trans);
        assert!((edge_cost(1.0, ModeTag::Legged, &c) - (c.c_leg + 3.0 / c.v_leg)).abs() < 1e-12);
    }

    fn hand_graph(edges: &[(usize, usize, f64)], n: usize) -> ModalGraph {
        let nodes = (0..n)
            .map(|i| Node {
                id: i,
                position: Point3::new(i as f64, 0.0, 0.3),
                mode: ModeTag::Legged,
            })
            .collect();
        let edges = edges
            .iter()
            .map(|&(a, b, c)| Edge {
                a,
                b,
                mode: ModeTag::Legged,
                length: 1.0,
                cost: c,
            })
            .collect();
        let meta = BuildMeta {
            method: "hand".into(),
            seed: None,
            spacing: None,
            n_samples: None,
            connect_radius: None,
            config: PlannerConfig::default(),
            cost: CostModel::default(),
        };
        ModalGraph::from_parts(nodes, edges, meta).unwrap()
    }

    #[test]
    fn diamond_and_trivial_queries() {
        let g = hand_graph(&[(0, 1, 1.0), (1, 3, 1.0), (0, 2, 1.0), (2, 3, 5.0)], 4);
        let p = dijkstra(&g, 0, 3).unwrap().plan.unwrap();
        assert_eq!(p.node_ids, vec![0, 1, 3]);
        assert_eq!(p.total_cost, 2.0);
        p.validate().unwrap();
        let p = dijkstra(&g, 2, 2).unwrap().plan.unwrap();
        assert_eq!(p.node_ids, vec![2]);
        assert_eq!(p.total_cost, 0.0);
        let g = hand_graph(&[(0, 1, 1.0)], 3);
        assert!(dijkstra(&g, 0, 2).unwrap().plan.is_none());
        assert!(matches!(dijkstra(&g, 0, 7), Err(PlanError::BadNode(7))));
    }

    #[test]
    fn ties_prefer_fewer_edges_then_lower_ids() {
        let g = hand_graph(&[(0, 1, 1.0), (1, 4, 1.0), (0, 4, 2.0)], 5);
        assert_eq!(dijkstra(&g, 0, 4).unwrap().plan.unwrap().node_ids, vec![0, 4]);
        let g = hand_graph(&[(0, 2, 1.0), (2, 4, 1.0), (0, 1, 1.0), (1, 4, 1.0)], 5);
        assert_eq!(dijkstra(&g, 0, 4).unwrap().plan.unwrap().node_ids, vec![0, 1, 4]);
    }

    /// Minimum cost over every simple path by exhaustive enumeration.
    pub(crate) fn brute_force(g: &ModalGraph, s: usize, t: usize) -> Option<f64> {
        fn go(g: &ModalGraph, u: usize, t: usize, seen: &mut Vec<bool>, acc: f64, best: &mut Option<f64>) {
            if u == t {
                *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
                return;
            }
            for &(v, k) in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    go(g, v, t, seen, acc + g.edges()[k].cost, best);
                    seen[v] = false;
                }
            }
        }
        let mut seen = vec![false; g.nodes().len()];
        seen[s] = true;
        let mut best = None;
        go(g, s, t, &mut seen, 0.0, &mut best);
        best
    }

    proptest! {
        #[test]
        fn dijkstra_matches_brute_force(
            n in 2usize..10,
            raw in proptest::collection::vec((0usize..10, 0usize..10, 0.0f64..10.0), 0..30),
        ) {
            let mut seen = BTreeSet::new();
            let edges: Vec<_> = raw
                .into_iter()
                .map(|(a, b, c)| (a % n, b % n, c))
                .filter(|&(a, b, _)| a != b && seen.insert((a.min(b), a.max(b))))
                .collect();
            let g = hand_graph(&edges, n);
            let r = dijkstra(&g, 0, n - 1).unwrap();
            let oracle = brute_force(&g, 0, n - 1);
            prop_assert_eq!(r.plan.as_ref().map(|p| p.total_cost), oracle);
            if let Some(p) = r.plan {
                p.validate().unwrap();
            }
        }

        #[test]
        fn heuristic_is_consistent_on_roadmaps(seed in 0u64..10_000, pick in 0usize..10_000) {
            let env = Environment::new(
                0.0,
                Aabb::new(Point3::new(0.0, -1.5, 0.0), Point3::new(4.0, 1.5, 2.5)),
                vec![Aabb::new(Point3::new(1.8, -1.5, 0.0), Point3::new(2.2, 1.5, 1.2))],
            )
            .unwrap();
            let cost = CostModel::default();
            let g = discretize_mmprm(&env, 150, 1.0, seed, &cost, &PlannerConfig::default()).unwrap();
            let goal = g.nodes()[pick % g.nodes().len()].position;
            let rate = heuristic_rate(&g, &cost);
            let h = |i: usize| rate * (g.nodes()[i].position - goal).norm();
            for e in g.edges() {
                prop_assert!(e.cost + 1e-9 >= (h(e.a) - h(e.b)).abs(), "{e:?}");
            }
        }
    }

    #[test]
    fn zero_heuristic_reproduces_dijkstra_order() {
        let env = box_env(3.0, 2.0, 2.0);
        let g = discretize_uniform(&env, 0.5, &CostModel::default(), &cfg0()).unwrap();
        let d = dijkstra(&g, 0, 20).unwrap();
        let z = best_first(&g, 0, 20, |_| 0.0).unwrap();
        assert_eq!(d.expansion_order, z.expansion_order);
    }

    #[test]
    fn astar_agrees_and_expands_less_on_empty_grid() {
        let env = box_env(6.0, 4.0, 2.0);
        let cost = CostModel::default();
        let mut g = discretize_uniform(&env, 0.5, &cost, &PlannerConfig::default()).unwrap();
        let s = g.insert_anchor(&env, 0.5, 2.0, 0.75).unwrap();
        let t = g.insert_anchor(&env, 5.5, 2.0, 0.75).unwrap();
        assert!(consistency_gap(&g, t, &cost) <= 1e-9);
        let d = dijkstra(&g, s, t).unwrap();
        let a = astar(&g, s, t, &cost).unwrap();
        let (dp, ap) = (d.plan.unwrap(), a.plan.unwrap());
        assert!((dp.total_cost - ap.total_cost).abs() <= 1e-9);
        assert!(a.expansions <= d.expansions);
        assert!((dp.total_cost - cost.legged_rate() * 5.0).abs() < 1e-9);
    }

    #[test]
    fn roadmap_is_deterministic_and_respects_invariants() {
        let env = Environment::new(
            0.0,
            Aabb::new(Point3::new(0.0, -1.5, 0.0), Point3::new(4.0, 1.5, 2.5)),
            vec![Aabb::new(Point3::new(1.8, -1.5, 0.0), Point3::new(2.2, 1.5, 1.1))],
        )
        .unwrap();
        let cost = CostModel::default();
        let cfg = PlannerConfig::default();
        let a = discretize_mmprm(&env, 300, 1.0, 42, &cost, &cfg).unwrap();
        let b = discretize_mmprm(&env, 300, 1.0, 42, &cost, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        a.check_invariants(&env).unwrap();
        let c = discretize_mmprm(&env, 300, 1.0, 43, &cost, &cfg).unwrap();
        assert_ne!(a.to_json(), c.to_json());
        for e in a.edges() {
            let (p, q) = (a.nodes()[e.a].position, a.nodes()[e.b].position);
            if e.mode == ModeTag::Transition {
                assert!(xy_dist(&p, &q) <= cfg.z_tol);
            } else {
                assert!(e.length <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let env = box_env(2.0, 2.0, 2.0);
        let g = discretize_uniform(&env, 0.5, &CostModel::default(), &cfg0()).unwrap();
        let back = ModalGraph::from_json_str(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let mut v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        v["edges"][0]["b"] = serde_json::json!(10_000);
        assert!(ModalGraph::from_json_str(&v.to_string()).is_err());

        let p = dijkstra(&back, 0, 5).unwrap().plan.unwrap();
        assert_eq!(Plan::from_json_str(&p.to_json()).unwrap(), p);
        let mut bad = p.clone();
        bad.total_cost += 1.0;
        assert!(Plan::from_json_str(&bad.to_json()).is_err());
    }

    #[test]
    fn halving_spacing_never_increases_cost_on_empty_ground() {
        let env = box_env(6.0, 4.0, 3.0);
        let cost = CostModel::default();
        let mut prev = f64::INFINITY;
        for s in [1.0, 0.5, 0.25] {
            let mut g = discretize_uniform(&env, s, &cost, &PlannerConfig::default()).unwrap();
            let a = g.insert_anchor(&env, 0.0, 1.0, s * 1.5).unwrap();
            let b = g.insert_anchor(&env, 6.0, 3.0, s * 1.5).unwrap();
            let c = dijkstra(&g, a, b).unwrap().plan.unwrap().total_cost;
            assert!(c <= prev + 1e-9);
            prev = c;
        }
    }
}
