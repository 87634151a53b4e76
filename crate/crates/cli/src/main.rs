use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mmloco::compare::{compare_discretizations, CompareParams};
use mmloco::config::RobotConfig;
use mmloco::env::Environment;
use mmloco::gait::GaitSchedule;
use mmloco::mission::{follow_plan, limit_cycle_metric, trot_in_place, validate_log, MissionLog};
use mmloco::planner::{plan_route, Discretization, Plan, RouteRequest, SearchAlgorithm};

#[derive(Parser)]
#[command(name = "mmloco", version, about = "Legged/aerial robot planning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Robot configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the simulation step (s).
    #[arg(long)]
    dt: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RobotConfig> {
        let mut cfg = match &self.config {
            Some(p) => RobotConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RobotConfig::default(),
        };
        if let Some(dt) = self.dt {
            cfg.mission.dt = dt;
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Uniform,
    Mmprm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algorithm {
    Dijkstra,
    Astar,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph and search it for a start-goal plan.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Environment (JSON).
        #[arg(long)]
        env: PathBuf,
        /// Start point as x,y.
        #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
        start: [f64; 2],
        /// Goal point as x,y.
        #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
        goal: [f64; 2],
        #[arg(long, value_enum, default_value = "uniform")]
        method: Method,
        #[arg(long, value_enum, default_value = "astar")]
        algorithm: Algorithm,
        /// Lattice spacing (m).
        #[arg(long, default_value_t = 0.5)]
        spacing: f64,
        /// Roadmap sample count.
        #[arg(long, default_value_t = 800)]
        samples: usize,
        /// Roadmap connection radius (m).
        #[arg(long, default_value_t = 0.8)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use legged edges only.
        #[arg(long)]
        legged_only: bool,
        /// Output file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Execute a plan in the simulator and write the trajectory log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Environment (JSON).
        #[arg(long)]
        env: PathBuf,
        /// Plan written by `mmloco plan`.
        #[arg(long)]
        plan: PathBuf,
        /// Output file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Trot in place on flat ground.
    Trot {
        #[command(flatten)]
        common: Common,
        /// Gait frequency (Hz).
        #[arg(long, default_value_t = 2.0)]
        freq: f64,
        #[arg(long, default_value_t = 0.5)]
        duty: f64,
        /// Simulated time (s).
        #[arg(long, default_value_t = 15.0)]
        duration: f64,
        /// Swing apex height (m); gait default when omitted.
        #[arg(long)]
        step_height: Option<f64>,
        /// Output file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare lattice spacings and roadmap seeds on one query.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Environment (JSON).
        #[arg(long)]
        env: PathBuf,
        #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
        start: [f64; 2],
        #[arg(long, value_parser = parse_xy, allow_hyphen_values = true)]
        goal: [f64; 2],
        /// Comma-separated lattice spacings (m).
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.25")]
        spacings: Vec<f64>,
        /// Comma-separated roadmap seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 800)]
        samples: usize,
        #[arg(long, default_value_t = 0.8)]
        radius: f64,
        #[arg(long)]
        legged_only: bool,
        /// Report as JSON.
        #[arg(long)]
        json: PathBuf,
        /// Per-run table as CSV.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Write the built-in robot configuration as JSON.
    DefaultConfig {
        /// Output file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check a trajectory log: finite values, time order, phase changes, energy.
    ValidateLog { log: PathBuf },
}

fn parse_xy(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y but got {s:?}"));
    }
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok([num(parts[0])?, num(parts[1])?])
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_env(path: &Path) -> Result<Environment> {
    Environment::load(path).with_context(|| format!("loading {}", path.display()))
}

/// Ok(true) on full success, Ok(false) when the command ran but the outcome
/// is a failure (no path, fall, invalid log).
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Plan {
            common,
            env,
            start,
            goal,
            method,
            algorithm,
            spacing,
            samples,
            radius,
            seed,
            legged_only,
            output,
        } => {
            let cfg = common.load()?;
            let env = load_env(&env)?;
            let discretization = match method {
                Method::Uniform => Discretization::Uniform { spacing },
                Method::Mmprm => Discretization::Mmprm {
                    n_samples: samples,
                    connect_radius: radius,
                    seed,
                },
            };
            let req = RouteRequest {
                start,
                goal,
                discretization,
                algorithm: match algorithm {
                    Algorithm::Dijkstra => SearchAlgorithm::Dijkstra,
                    Algorithm::Astar => SearchAlgorithm::Astar,
                },
                legged_only,
            };
            let route = plan_route(&env, &req, &cfg.cost, &cfg.planner)?;
            match route.search.plan {
                Some(plan) => {
                    write(&output, &plan.to_json())?;
                    println!(
                        "plan: {} waypoints, {} transitions, cost {:.3} J, {} expansions",
                        plan.len(),
                        plan.transitions.len(),
                        plan.total_cost,
                        route.search.expansions
                    );
                    Ok(true)
                }
                None => {
                    println!("no path ({} expansions)", route.search.expansions);
                    Ok(false)
                }
            }
        }
        Command::Simulate {
            common,
            env,
            plan,
            output,
        } => {
            let cfg = common.load()?;
            let env = load_env(&env)?;
            let text = std::fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let plan = Plan::from_json_str(&text)?;
            let log = follow_plan(&plan, &env, &cfg)?;
            log.save_csv(&output)?;
            let last = log.rows.last().context("empty log")?;
            let goal = plan.waypoints.last().expect("validated plan is nonempty");
            println!(
                "simulated {:.3} s, flight {:.3} s, max altitude {:.3} m, final error {:.4} m",
                log.duration(),
                log.flight_time(),
                log.max_altitude(),
                (last.position - goal.coords).norm()
            );
            if let Some(reason) = &log.aborted {
                println!("mission failed: {reason}");
                return Ok(false);
            }
            Ok(true)
        }
        Command::Trot {
            common,
            freq,
            duty,
            duration,
            step_height,
            output,
        } => {
            let cfg = common.load()?;
            let mut sched = GaitSchedule::trot(freq, duty);
            if duty >= 0.75 {
                // one leg at a time once three feet can stay down
                sched.phase_offset = GaitSchedule::three_contact(freq).phase_offset;
            }
            if let Some(h) = step_height {
                sched.step_height = h;
            }
            let log = trot_in_place(duration, &sched, &cfg)?;
            log.save_csv(&output)?;
            if log.fell {
                println!("fell at t = {:.3} s", log.duration());
                return Ok(false);
            }
            match limit_cycle_metric(&log, &sched, &cfg.mission.poincare) {
                Ok(lc) => println!(
                    "limit cycle: converged at {:?}, d_1 = {:.3e}, final ratio {:.3e}",
                    lc.converged_at,
                    lc.distances.first().copied().unwrap_or(0.0),
                    lc.final_ratio()
                ),
                Err(e) => println!("limit cycle not evaluated: {e}"),
            }
            Ok(true)
        }
        Command::Compare {
            common,
            env,
            start,
            goal,
            spacings,
            seeds,
            samples,
            radius,
            legged_only,
            json,
            csv,
        } => {
            let cfg = common.load()?;
            let env = load_env(&env)?;
            let params = CompareParams {
                start,
                goal,
                spacings,
                seeds,
                n_samples: samples,
                connect_radius: radius,
                legged_only,
            };
            let report = compare_discretizations(&env, &params, &cfg.cost, &cfg.planner)?;
            write(&json, &report.to_json())?;
            write(&csv, &report.to_csv())?;
            println!("lower bound {:.3} J", report.lower_bound);
            for s in &report.summaries {
                println!(
                    "{}: {}/{} solved, mean cost {}, min cost {}",
                    s.method,
                    s.solved,
                    s.runs,
                    s.cost_mean.map_or("-".into(), |c| format!("{c:.3}")),
                    s.cost_min.map_or("-".into(), |c| format!("{c:.3}"))
                );
            }
            Ok(true)
        }
        Command::DefaultConfig { output } => {
            write(&output, &RobotConfig::default().to_json())?;
            Ok(true)
        }
        Command::ValidateLog { log } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let parsed = MissionLog::from_csv(&text)?;
            match validate_log(&parsed) {
                Ok(()) => {
                    println!("valid: {} rows", parsed.rows.len());
                    Ok(true)
                }
                Err(e) => {
                    println!("invalid: {e}");
                    Ok(false)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
