//! Seeded trial preparation and the batched benchmark matrix.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use beliefgrasp::belief::{BeliefState, Jitter};
use beliefgrasp::cloud::{apply_view_mask, PointCloudModel, ViewMask};
use beliefgrasp::kinematics::RobotModel;
use beliefgrasp::registration::{build_initial_belief, ScoredPose};
use beliefgrasp::sim::{run_episode, GroundTruth, Strategy, TrialRecord};
use beliefgrasp::{derive_seed, Error, Pose6D, Result};

use crate::scenario::{LoadedObject, Scenario};

/// FNV-1a, stable across platforms and releases.
pub fn name_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of one world (truth, views, initial belief), shared by every
/// strategy so that strategies are compared on identical trials.
pub fn world_seed(master: u64, object: &str, views: usize, trial: usize) -> u64 {
    let s = derive_seed(master, name_hash(object));
    derive_seed(derive_seed(s, views as u64), trial as u64)
}

/// Everything an episode needs that does not depend on the strategy.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub seed: u64,
    pub views: usize,
    pub truth: GroundTruth,
    pub query: PointCloudModel,
    /// Retained fraction of the model's points.
    pub coverage: f64,
    pub fits: Vec<ScoredPose>,
    pub belief: BeliefState,
}

pub fn sample_true_pose(sc: &Scenario, nominal: &Pose6D, rng: &mut ChaCha8Rng) -> Pose6D {
    let o = &sc.offsets;
    let mut dp = Vector3::zeros();
    for i in 0..3 {
        if o.position[i] > 0.0 {
            dp[i] = rng.random_range(-o.position[i]..=o.position[i]);
        }
    }
    let mut yaw = if o.yaw_deg > 0.0 {
        rng.random_range(-o.yaw_deg..=o.yaw_deg).to_radians()
    } else {
        0.0
    };
    if o.symmetry_trap && rng.random_bool(0.5) {
        yaw += std::f64::consts::PI;
    }
    let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * nominal.orientation;
    Pose6D::new(nominal.position + dp, rot)
}

/// Truth pose, partial view and initial belief for one trial.
pub fn prepare_trial(sc: &Scenario, obj: &LoadedObject, views: usize, trial: usize) -> Result<PreparedTrial> {
    let seed = world_seed(sc.master_seed, &obj.name, views, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let true_pose = sample_true_pose(sc, &obj.nominal_pose, &mut rng);
    let truth = GroundTruth::new(&obj.cloud, true_pose, sc.contact_eps);
    let mask = ViewMask::random(sc.view_count, views, &mut rng)?;
    let centre = true_pose.position;
    let query = apply_view_mask(&truth.true_cloud, &mask, &centre)?;
    let coverage = query.len() as f64 / obj.cloud.len() as f64;
    let fits = match build_initial_belief(&obj.cloud, &query, sc.fits, &sc.registration, derive_seed(seed, 1)) {
        Ok(f) => f,
        // Nothing usable in the view: fall back to the nominal placement.
        Err(Error::Registration(_)) => vec![ScoredPose {
            pose: obj.nominal_pose,
            score: 1.0,
            valid: true,
        }],
        Err(e) => return Err(e),
    };
    let seeded = BeliefState::from_scored(&fits, sc.kernel)?;
    // K draws from the fits' KDE: resample, then perturb by the bandwidth.
    let k = &sc.kernel;
    let bandwidth = Jitter {
        sigma_pos: k.sigma_pos.iter().sum::<f64>() / 3.0,
        sigma_rot: k.sigma_rot,
    };
    let belief = seeded
        .update(&vec![1.0; seeded.len()], sc.episode.particles, bandwidth, derive_seed(seed, 2))?
        .belief;
    Ok(PreparedTrial {
        seed,
        views,
        truth,
        query,
        coverage,
        fits,
        belief,
    })
}

/// One episode of `strategy` on a prepared trial.
pub fn run_trial(
    r: &RobotModel,
    sc: &Scenario,
    obj: &LoadedObject,
    prep: &PreparedTrial,
    strategy: Strategy,
    wall_time: bool,
) -> Result<TrialRecord> {
    let mut rec = run_episode(
        r,
        &obj.cloud,
        &prep.belief,
        &obj.grasp,
        &prep.truth,
        strategy,
        &sc.episode,
        derive_seed(prep.seed, 3),
    )?;
    rec.object = obj.name.clone();
    rec.views = prep.views;
    rec.coverage = prep.coverage;
    if !wall_time {
        rec.wall_time_s = None;
    }
    Ok(rec)
}

/// One (object, views, trial) cell of the matrix in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub object: usize,
    pub views: usize,
    pub trial: usize,
}

pub fn cells(sc: &Scenario, n_objects: usize) -> Vec<Cell> {
    let mut out = Vec::new();
    for object in 0..n_objects {
        for &views in &sc.views {
            for trial in 0..sc.trials {
                out.push(Cell { object, views, trial });
            }
        }
    }
    out
}

/// Runs every cell for every strategy. Records come back ordered by
/// object, views, trial and then the scenario's strategy order, whatever
/// the worker count.
pub fn run_bench(
    r: &RobotModel,
    sc: &Scenario,
    objects: &[LoadedObject],
    workers: usize,
    wall_time: bool,
) -> Result<Vec<TrialRecord>> {
    let cells = cells(sc, objects.len());
    let job = |c: &Cell| -> Result<Vec<TrialRecord>> {
        let obj = &objects[c.object];
        let prep = prepare_trial(sc, obj, c.views, c.trial)?;
        sc.strategies
            .iter()
            .map(|&s| run_trial(r, sc, obj, &prep, s, wall_time))
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let per_cell: Vec<Result<Vec<TrialRecord>>> = pool.install(|| cells.par_iter().map(job).collect());
    let mut out = Vec::with_capacity(cells.len() * sc.strategies.len());
    for r in per_cell {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_jsonl(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
