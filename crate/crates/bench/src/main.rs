use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use beliefgrasp::kinematics::JointConfig;
use beliefgrasp::planner::{plan_baseline, plan_ir3ne, GoalModel};
use beliefgrasp::sim::{grasp_goal, GraspSpec, Strategy};
use beliefgrasp::tactile::{Aggregation, Attribution};
use beliefgrasp::{derive_seed, Error, Result};
use beliefgrasp_bench::objects::{make_object, ObjectKind, ObjectParams};
use beliefgrasp_bench::run::{prepare_trial, read_jsonl, run_bench, run_trial, write_jsonl};
use beliefgrasp_bench::{BenchSummary, LoadedObject, Scenario};

#[derive(Parser)]
#[command(name = "beliefgrasp", version, about = "Belief-space reach-to-grasp benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic object cloud as PLY.
    MakeObject {
        #[arg(long)]
        kind: ObjectKind,
        #[arg(long)]
        out: PathBuf,
        /// Object parameters as JSON, e.g. '{"radius":0.06}'.
        #[arg(long)]
        params: Option<String>,
    },
    /// Registration only: print the initial fits of one trial as JSON.
    Estimate(TrialArgs),
    /// One plan from home on the initial estimate, written as CSV.
    Plan {
        #[command(flatten)]
        trial: TrialArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// One episode; prints its record as JSON.
    Run(TrialArgs),
    /// The full matrix: trials.jsonl plus the CSV tables.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Record per-episode wall time (makes the log nondeterministic).
        #[arg(long)]
        wall_time: bool,
    },
    /// Tables from an existing trial log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct TrialArgs {
    #[command(flatten)]
    common: Common,
    /// Object name; the scenario's first object when absent.
    #[arg(long)]
    object: Option<String>,
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

/// Scenario selection and overrides shared by every trial command.
#[derive(Args)]
struct Common {
    /// Scenario JSON; the built-in desk scenario when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated strategies (prm, bsp, ir3ne).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Comma-separated view counts.
    #[arg(long, value_delimiter = ',')]
    views: Vec<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    attribution: Option<Attribution>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    neighbor_radius: Option<f64>,
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    n_local_nodes: Option<usize>,
    #[arg(long)]
    target_degree: Option<usize>,
}

enum Failure {
    Scenario(Error),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Common {
    fn scenario(&self) -> std::result::Result<Scenario, Failure> {
        let mut sc = match &self.scenario {
            Some(p) => Scenario::load(p).map_err(Failure::Scenario)?,
            None => Scenario::desk(),
        };
        if let Some(s) = self.seed {
            sc.master_seed = s;
        }
        if !self.strategy.is_empty() {
            sc.strategies = self.strategy.clone();
        }
        if !self.views.is_empty() {
            sc.views = self.views.clone();
        }
        if let Some(t) = self.trials {
            sc.trials = t;
        }
        let ep = &mut sc.episode;
        for tp in [&mut ep.tactile, &mut ep.planner.tactile] {
            if let Some(v) = self.eta {
                tp.eta = v;
            }
            if let Some(v) = self.lambda {
                tp.lambda = v;
            }
            if let Some(v) = self.d_max {
                tp.d_max = v;
                tp.clearance.d_max = v;
            }
            if let Some(v) = self.aggregation {
                tp.aggregation = v;
            }
            if let Some(v) = self.attribution {
                tp.attribution = v;
            }
        }
        let w = &mut ep.planner.weights;
        if let Some(v) = self.alpha {
            w.alpha = v;
        }
        if let Some(v) = self.beta {
            w.beta = v;
        }
        if let Some(v) = self.neighbor_radius {
            w.neighbor_radius = v;
        }
        if let Some(v) = self.n_nodes {
            w.n_nodes = v;
        }
        if let Some(v) = self.n_local_nodes {
            w.n_local_nodes = v;
        }
        if let Some(v) = self.target_degree {
            w.target_degree = v;
        }
        Ok(sc)
    }
}

fn pick_object(objects: Vec<LoadedObject>, name: &Option<String>) -> Result<LoadedObject> {
    match name {
        None => Ok(objects.into_iter().next().expect("validated nonempty")),
        Some(n) => objects
            .into_iter()
            .find(|o| &o.name == n)
            .ok_or_else(|| Error::InvalidInput(format!("no object named {n}"))),
    }
}

fn execute(cmd: Cmd) -> std::result::Result<(), Failure> {
    match cmd {
        Cmd::MakeObject { kind, out, params } => {
            let p: ObjectParams = match params {
                Some(s) => serde_json::from_str(&s).map_err(|e| Failure::Scenario(e.into()))?,
                None => ObjectParams::default(),
            };
            let cloud = make_object(kind, &p).map_err(Failure::Scenario)?;
            cloud.write_ply(&out)?;
            eprintln!("{} points written to {}", cloud.len(), out.display());
        }
        Cmd::Estimate(t) => {
            let mut sc = t.common.scenario()?;
            let (_, objects) = sc.resolve().map_err(Failure::Scenario)?;
            let obj = pick_object(objects, &t.object).map_err(Failure::Scenario)?;
            let prep = prepare_trial(&sc, &obj, sc.views[0], t.trial)?;
            let out = serde_json::json!({
                "true_pose": prep.truth.true_pose,
                "coverage": prep.coverage,
                "fits": prep.fits,
                "mle": prep.belief.mle(),
            });
            println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
        }
        Cmd::Plan { trial: t, out } => {
            let mut sc = t.common.scenario()?;
            let (r, objects) = sc.resolve().map_err(Failure::Scenario)?;
            let obj = pick_object(objects, &t.object).map_err(Failure::Scenario)?;
            let prep = prepare_trial(&sc, &obj, sc.views[0], t.trial)?;
            let ep = &sc.episode;
            let strategy = sc.strategies[0];
            let goal_for = |pose| -> Option<JointConfig> { grasp_goal(&r, &obj.grasp, pose, &ep.ik_seed, &ep.ik) };
            let mle = prep.belief.mle();
            let goal = goal_for(&mle).ok_or_else(|| Error::Unreachable("no IK solution for the estimate".into()))?;
            let closing = GraspSpec::apply_shape(&r, &goal, &obj.grasp.closed_shape);
            let root = GraspSpec::apply_shape(&r, &ep.home, &obj.grasp.pregrasp_shape);
            let seed = derive_seed(prep.seed, 3);
            let traj = match strategy {
                Strategy::Prm | Strategy::Bsp => plan_baseline(
                    &r,
                    &root,
                    &GoalModel::identity(goal, closing),
                    &obj.cloud.with_frame(mle),
                    &ep.planner,
                    seed,
                )?,
                Strategy::Ir3ne => {
                    let hyp = prep.belief.subsample_hypotheses(ep.hypotheses, seed)?;
                    let goals = hyp.poses.iter().filter_map(goal_for).collect();
                    let gm = GoalModel::new(goal, goals, closing, ep.planner.goal_variance_floor)?;
                    let clouds: Vec<_> = hyp.poses.iter().map(|p| obj.cloud.with_frame(*p)).collect();
                    plan_ir3ne(&r, &root, &gm, &clouds, &ep.planner, seed)?
                }
            };
            std::fs::write(&out, traj.to_csv()).map_err(Error::from)?;
            eprintln!("{} waypoints written to {}", traj.waypoints.len(), out.display());
        }
        Cmd::Run(t) => {
            let mut sc = t.common.scenario()?;
            let (r, objects) = sc.resolve().map_err(Failure::Scenario)?;
            let obj = pick_object(objects, &t.object).map_err(Failure::Scenario)?;
            let prep = prepare_trial(&sc, &obj, sc.views[0], t.trial)?;
            for &s in &sc.strategies {
                let rec = run_trial(&r, &sc, &obj, &prep, s, true)?;
                println!("{}", serde_json::to_string(&rec).map_err(Error::from)?);
            }
        }
        Cmd::Bench {
            common,
            out_dir,
            workers,
            wall_time,
        } => {
            let mut sc = common.scenario()?;
            let (r, objects) = sc.resolve().map_err(Failure::Scenario)?;
            std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
            let records = run_bench(&r, &sc, &objects, workers, wall_time)?;
            write_jsonl(&records, out_dir.join("trials.jsonl"))?;
            let summary = BenchSummary::from_records(&records)?;
            summary.write_tables(&out_dir)?;
            std::fs::write(
                out_dir.join("summary.json"),
                serde_json::to_string_pretty(&summary).map_err(Error::from)?,
            )
            .map_err(Error::from)?;
            eprintln!("{} episodes written to {}", records.len(), out_dir.display());
        }
        Cmd::Report { log, out_dir } => {
            let records = read_jsonl(&log)?;
            BenchSummary::from_records(&records)?.write_tables(&out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Scenario(e)) => {
            eprintln!("invalid scenario: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
