use std::path::PathBuf;

use mmloco::config::RobotConfig;
use mmloco::env::Environment;
use mmloco::mission::{follow_plan, validate_log, MissionPhase};
use mmloco::planner::{plan_route, Discretization, ModeTag, Plan, RouteRequest, SearchAlgorithm};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn plan(env: &Environment, start: [f64; 2], goal: [f64; 2], spacing: f64, cfg: &RobotConfig) -> Option<Plan> {
    let req = RouteRequest {
        start,
        goal,
        discretization: Discretization::Uniform { spacing },
        algorithm: SearchAlgorithm::Astar,
        legged_only: false,
    };
    plan_route(env, &req, &cfg.cost, &cfg.planner).unwrap().search.plan
}

#[test]
fn robot_asset_is_the_default_config() {
    assert_eq!(RobotConfig::load(asset("robot.json")).unwrap(), RobotConfig::default());
}

#[test]
fn wall_is_crossed_by_air() {
    let cfg = RobotConfig::default();
    let env = Environment::load(asset("wall.json")).unwrap();
    let p = plan(&env, [0.5, 0.0], [3.5, 0.0], 0.5, &cfg).expect("wall plan");
    assert_eq!(p.transitions.len(), 2);

    let log = follow_plan(&p, &env, &cfg).unwrap();
    assert!(!log.fell && log.aborted.is_none(), "{:?}", log.aborted);
    validate_log(&log).unwrap();
    assert!(log.max_altitude() > 1.2);
    let last = log.rows.last().unwrap();
    assert!((last.position - p.waypoints.last().unwrap().coords).norm() < 0.1);
    assert_eq!(last.phase, MissionPhase::Stand);
}

#[test]
fn open_ground_is_walked() {
    let cfg = RobotConfig::default();
    let env = Environment::load(asset("empty.json")).unwrap();
    let p = plan(&env, [0.5, 0.0], [2.0, 0.5], 0.5, &cfg).expect("flat plan");
    assert!(p.edge_modes.iter().all(|&m| m == ModeTag::Legged));

    let log = follow_plan(&p, &env, &cfg).unwrap();
    assert!(!log.fell && log.aborted.is_none(), "{:?}", log.aborted);
    validate_log(&log).unwrap();
    assert_eq!(log.flight_time(), 0.0);
    assert!(log
        .rows
        .iter()
        .all(|r| matches!(r.phase, MissionPhase::Walk | MissionPhase::Stand)));
    assert!(log.rows.iter().all(|r| r.energy_aerial == 0.0));
    let last = log.rows.last().unwrap();
    assert!((last.position.xy() - p.waypoints.last().unwrap().coords.xy()).norm() < 0.1);
}

#[test]
fn halving_the_lattice_never_costs_more() {
    let cfg = RobotConfig::default();
    let env = Environment::load(asset("empty.json")).unwrap();
    let (start, goal): ([f64; 2], [f64; 2]) = ([0.5, 0.0], [5.5, 1.0]);
    let lower = cfg.cost.min_rate() * ((goal[0] - start[0]).hypot(goal[1] - start[1]));
    let mut prev = f64::INFINITY;
    for spacing in [1.0, 0.5, 0.25] {
        let c = plan(&env, start, goal, spacing, &cfg).unwrap().total_cost;
        assert!(c <= prev + 1e-9, "spacing {spacing}: {c} > {prev}");
        assert!(c >= lower - 1e-9);
        prev = c;
    }
    assert!(prev <= 1.1 * lower, "{prev} vs {lower}");
}
