//! Closed-loop grasp episodes against a hidden ground-truth pose: plan,
//! execute with contact detection, update the belief on contact, re-plan.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::time::Instant;

use crate::belief::{kl_divergence, BeliefState, Jitter};
use crate::cloud::PointCloudModel;
use crate::contact::{link_clearance, ClearanceParams};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::kinematics::{interpolate, IkParams, JointConfig, RobotModel};
use crate::planner::{plan_baseline, plan_ir3ne, GoalModel, Phase, PlanContext, PlannerParams, Trajectory};
use crate::se3::Pose6D;
use crate::tactile::{contact_likelihood_at, TactileParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Prm,
    Bsp,
    Ir3ne,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Prm, Strategy::Bsp, Strategy::Ir3ne];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Prm => "prm",
            Strategy::Bsp => "bsp",
            Strategy::Ir3ne => "ir3ne",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prm" => Ok(Strategy::Prm),
            "bsp" => Ok(Strategy::Bsp),
            "ir3ne" => Ok(Strategy::Ir3ne),
            _ => Err(Error::InvalidInput(format!("unknown strategy {s}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The hidden object. Only the contact oracle reads it.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub true_pose: Pose6D,
    pub true_cloud: PointCloudModel,
    pub contact_eps: f64,
}

impl GroundTruth {
    /// `model` is the object in its own frame; it is placed at `true_pose`.
    pub fn new(model: &PointCloudModel, true_pose: Pose6D, contact_eps: f64) -> Self {
        Self {
            true_pose,
            true_cloud: model.with_frame(true_pose),
            contact_eps,
        }
    }
}

/// A grasp relative to the object model frame. Finger shapes list the
/// finger joints in configuration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspSpec {
    pub wrist_pose: Pose6D,
    pub pregrasp_shape: Vec<f64>,
    pub closed_shape: Vec<f64>,
    pub required_fingers: BTreeSet<usize>,
    /// Further wrist poses for the same closing, used when they face the
    /// robot better or the primary one is out of reach.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<Pose6D>,
}

impl GraspSpec {
    pub fn validate(&self, r: &RobotModel) -> Result<()> {
        let n: usize = r.finger_dofs.iter().map(Vec::len).sum();
        if self.pregrasp_shape.len() != n || self.closed_shape.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.closed_shape.len(),
            });
        }
        let lim = r.joint_limits();
        for (shape, name) in [(&self.pregrasp_shape, "pre-grasp"), (&self.closed_shape, "closed")] {
            for (v, d) in shape.iter().zip(r.finger_dofs.iter().flatten()) {
                if *v < lim[*d].0 || *v > lim[*d].1 {
                    return Err(Error::InvalidInput(format!("{name} shape outside joint limits")));
                }
            }
        }
        if self.required_fingers.iter().any(|&f| f >= r.n_fingers()) || self.required_fingers.is_empty() {
            return Err(Error::InvalidInput("required fingers must name existing fingers".into()));
        }
        Ok(())
    }

    /// `q` with its finger joints replaced by `shape`.
    pub fn apply_shape(r: &RobotModel, q: &JointConfig, shape: &[f64]) -> JointConfig {
        let mut out = q.clone();
        for (v, d) in shape.iter().zip(r.finger_dofs.iter().flatten()) {
            out.0[*d] = *v;
        }
        out
    }

    /// World wrist target when the object sits at `object_pose`.
    pub fn wrist_target(&self, object_pose: &Pose6D) -> Pose6D {
        object_pose.compose(&self.wrist_pose)
    }

    /// Every candidate wrist target, ordered by how directly the palm
    /// approach axis points away from the robot base.
    pub fn wrist_targets(&self, r: &RobotModel, object_pose: &Pose6D) -> Vec<Pose6D> {
        let base = r.base_pose.position;
        let mut c: Vec<(f64, usize, Pose6D)> = std::iter::once(&self.wrist_pose)
            .chain(&self.alternatives)
            .enumerate()
            .map(|(i, w)| {
                let t = object_pose.compose(w);
                let mut out = t.position - base;
                out.z = 0.0;
                let approach = t.transform_vector(&nalgebra::Vector3::x());
                let score = if out.norm() > 1e-9 { -approach.dot(&out.normalize()) } else { 0.0 };
                (score, i, t)
            })
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c.into_iter().map(|x| x.2).collect()
    }
}

/// Pre-grasp configuration for the object at `pose`: IK on the candidate
/// wrist targets in preference order; `None` when none converges.
pub fn grasp_goal(
    r: &RobotModel,
    grasp: &GraspSpec,
    pose: &Pose6D,
    ik_seed: &JointConfig,
    ik: &IkParams,
) -> Option<JointConfig> {
    let shape = GraspSpec::apply_shape(r, ik_seed, &grasp.pregrasp_shape);
    grasp.wrist_targets(r, pose).into_iter().find_map(|t| {
        let res = r.ik_goal(&t, &shape, ik_seed, ik).ok()?;
        res.converged.then_some(res.config)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    /// Index of the dense execution state.
    pub step: usize,
    /// Link with the smallest clearance.
    pub link: usize,
    /// Every hand link within contact range.
    pub links: BTreeSet<usize>,
    pub config: JointConfig,
    pub phase: Phase,
}

#[derive(Clone, Debug)]
pub enum ExecutionOutcome {
    /// The approach finished and the fingers closed.
    Completed {
        final_config: JointConfig,
        /// Fingers that stopped on contact.
        touching_fingers: BTreeSet<usize>,
        /// Hand links in contact at the end of closing.
        touching_links: BTreeSet<usize>,
        /// Min clearance over each finger's links at the end.
        finger_clearance: Vec<f64>,
    },
    Contact(ContactEvent),
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub outcome: ExecutionOutcome,
    /// Dense states visited without contact, in order.
    pub visited: Vec<JointConfig>,
}

fn hand_clearances(r: &RobotModel, q: &JointConfig, cloud: &PointCloudModel, cp: &ClearanceParams) -> Result<Vec<(usize, f64)>> {
    let poses = r.fk_links(q)?;
    let mut out = Vec::new();
    for (i, l) in r.links.iter().enumerate() {
        if let (true, Some((off, mesh))) = (l.is_hand(), &l.mesh) {
            let c = link_clearance(mesh, &poses[i].compose(off), cloud, cp)?;
            out.push((i, c.d_obs));
        }
    }
    Ok(out)
}

fn finger_clearances(r: &RobotModel, clear: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; r.n_fingers()];
    for &(i, d) in clear {
        if let Some(f) = r.links[i].finger {
            out[f] = out[f].min(d);
        }
    }
    out
}

/// Executes `traj` against the truth with dense (≤ `workspace_step`)
/// interpolation. The approach stops at the first state where a hand link
/// is within `contact_eps`; during closing each finger stops on its own
/// first contact.
pub fn step_execute(
    r: &RobotModel,
    traj: &Trajectory,
    gt: &GroundTruth,
    params: &PlannerParams,
) -> Result<Execution> {
    let empty: [PointCloudModel; 0] = [];
    let ctx = PlanContext::new(r, &gt.true_cloud, &empty, params);
    let cp = &params.clearance;
    let mut visited = Vec::new();
    let mut step = 0;
    let approach = traj.approach();
    let contact_at = |q: &JointConfig, step: usize, phase: Phase| -> Result<Option<ContactEvent>> {
        let clear = hand_clearances(r, q, &gt.true_cloud, cp)?;
        let links: BTreeSet<usize> = clear.iter().filter(|c| c.1 <= gt.contact_eps).map(|c| c.0).collect();
        if links.is_empty() {
            return Ok(None);
        }
        let link = clear
            .iter()
            .filter(|c| links.contains(&c.0))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|c| c.0)
            .expect("nonempty");
        Ok(Some(ContactEvent {
            step,
            link,
            links,
            config: q.clone(),
            phase,
        }))
    };
    if let Some(ev) = contact_at(&approach[0], 0, Phase::Approach)? {
        return Ok(Execution {
            outcome: ExecutionOutcome::Contact(ev),
            visited,
        });
    }
    visited.push(approach[0].clone());
    for w in approach.windows(2) {
        let n = ctx.segments(&w[0], &w[1]);
        for s in 1..=n {
            step += 1;
            let q = interpolate(&w[0], &w[1], s as f64 / n as f64)?;
            if let Some(ev) = contact_at(&q, step, Phase::Approach)? {
                return Ok(Execution {
                    outcome: ExecutionOutcome::Contact(ev),
                    visited,
                });
            }
            visited.push(q);
        }
    }
    // Guarded closing: fingers advance independently and stop on contact.
    let closing = traj.closing();
    let mut q = approach.last().expect("nonempty approach").clone();
    let mut stopped = vec![false; r.n_fingers()];
    for w in closing.windows(2) {
        let n = ctx.segments(&w[0], &w[1]);
        for s in 1..=n {
            let target = interpolate(&w[0], &w[1], s as f64 / n as f64)?;
            for (f, dofs) in r.finger_dofs.iter().enumerate() {
                if stopped[f] {
                    continue;
                }
                let mut cand = q.clone();
                for &d in dofs {
                    cand.0[d] = target[d];
                }
                let clear = hand_clearances(r, &cand, &gt.true_cloud, cp)?;
                q = cand;
                if finger_clearances(r, &clear)[f] <= gt.contact_eps {
                    stopped[f] = true;
                }
            }
        }
    }
    let clear = hand_clearances(r, &q, &gt.true_cloud, cp)?;
    let finger_clearance = finger_clearances(r, &clear);
    let touching_fingers = (0..r.n_fingers()).filter(|&f| finger_clearance[f] <= gt.contact_eps).collect();
    let touching_links = clear.iter().filter(|c| c.1 <= gt.contact_eps).map(|c| c.0).collect();
    Ok(Execution {
        outcome: ExecutionOutcome::Completed {
            final_config: q,
            touching_fingers,
            touching_links,
            finger_clearance,
        },
        visited,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeParams {
    pub max_iterations: usize,
    /// k, hypotheses per planning iteration (MLE included).
    pub hypotheses: usize,
    /// K, particles after each update.
    pub particles: usize,
    pub jitter: Jitter,
    pub planner: PlannerParams,
    /// Observation model for belief updates.
    pub tactile: TactileParams,
    pub ik: IkParams,
    /// Start configuration; also where the robot returns after a failed grasp.
    pub home: JointConfig,
    /// IK seed for every goal computation.
    pub ik_seed: JointConfig,
    /// Executed states undone after a contact before re-planning, on top
    /// of whatever the new estimate needs to be collision free.
    pub retreat_steps: usize,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            hypotheses: 5,
            particles: 100,
            jitter: Jitter::default(),
            planner: PlannerParams::default(),
            tactile: TactileParams::default(),
            ik: IkParams::default(),
            home: JointConfig::default(),
            ik_seed: JointConfig::default(),
            retreat_steps: 10,
        }
    }
}

impl EpisodeParams {
    pub fn validate(&self, r: &RobotModel) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if self.hypotheses < 2 || self.particles == 0 {
            return Err(Error::InvalidInput("need k ≥ 2 hypotheses and K ≥ 1 particles".into()));
        }
        if self.home.dim() != r.dof || self.ik_seed.dim() != r.dof {
            return Err(Error::DimensionMismatch {
                expected: r.dof,
                got: self.home.dim(),
            });
        }
        self.planner.validate()?;
        self.tactile.validate()
    }
}

/// What one re-planning iteration ended with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IterationOutcome {
    /// No reachable goal or no path; the belief is unchanged.
    PlanningFailure,
    /// Unexpected contact during the approach.
    Contact { links: BTreeSet<usize>, step: usize },
    /// The hand closed; `success` when every required finger touches.
    Grasp { fingers: BTreeSet<usize>, success: bool },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub object: String,
    pub strategy: Option<Strategy>,
    pub views: usize,
    /// Fraction of model points retained by the view mask.
    pub coverage: f64,
    pub iterations: usize,
    pub success: bool,
    pub first_attempt_success: bool,
    pub grasp_attempts: usize,
    pub contacts: usize,
    pub kl_per_contact: Vec<f64>,
    pub kl_clamped: usize,
    pub degenerate_updates: usize,
    pub planning_failures: usize,
    pub outcomes: Vec<IterationOutcome>,
    pub initial_error_m: f64,
    pub initial_error_rad: f64,
    pub final_error_m: f64,
    pub final_error_rad: f64,
    /// Hand configuration after the successful closing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_config: Option<JointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Goal configurations from IK; `None` when IK fails.
fn goal_for(r: &RobotModel, grasp: &GraspSpec, pose: &Pose6D, p: &EpisodeParams) -> Option<JointConfig> {
    grasp_goal(r, grasp, pose, &p.ik_seed, &p.ik)
}

/// Belief update from an observed set of contacted links at `q`.
fn observe(
    r: &RobotModel,
    belief: &BeliefState,
    model: &PointCloudModel,
    q: &JointConfig,
    contacted: &BTreeSet<usize>,
    p: &EpisodeParams,
    seed: u64,
) -> Result<crate::belief::UpdateOutcome> {
    let poses = r.fk_links(q)?;
    let lik = belief
        .particles()
        .iter()
        .map(|part| contact_likelihood_at(r, &poses, contacted, &model.with_frame(part.pose), &p.tactile))
        .collect::<Result<Vec<_>>>()?;
    belief.update(&lik, p.particles, p.jitter, seed)
}

/// One closed-loop episode. `model` is the object in its own frame; the
/// belief is over its world pose.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    r: &RobotModel,
    model: &PointCloudModel,
    initial_belief: &BeliefState,
    grasp: &GraspSpec,
    gt: &GroundTruth,
    strategy: Strategy,
    params: &EpisodeParams,
    seed: u64,
) -> Result<TrialRecord> {
    params.validate(r)?;
    grasp.validate(r)?;
    let start = Instant::now();
    let mut belief = initial_belief.clone();
    let mle0 = belief.mle();
    let mut rec = TrialRecord {
        seed,
        strategy: Some(strategy),
        initial_error_m: mle0.translation_distance(&gt.true_pose),
        initial_error_rad: mle0.angle_to(&gt.true_pose),
        ..Default::default()
    };
    let home = GraspSpec::apply_shape(r, &params.home, &grasp.pregrasp_shape);
    // States executed since the robot last left home, for retreating.
    let mut history: Vec<JointConfig> = vec![home.clone()];
    let mut retreat = 0usize;
    let max_iter = if strategy == Strategy::Prm { 1 } else { params.max_iterations };
    for it in 0..max_iter {
        rec.iterations = it + 1;
        let it_seed = derive_seed(seed, it as u64);
        let mle = belief.mle();
        let hyp = belief.subsample_hypotheses(params.hypotheses, derive_seed(it_seed, 1))?;
        let mle_cloud = model.with_frame(mle);
        let Some(goal_q) = goal_for(r, grasp, &mle, params) else {
            rec.planning_failures += 1;
            rec.outcomes.push(IterationOutcome::PlanningFailure);
            continue;
        };
        let closing = GraspSpec::apply_shape(r, &goal_q, &grasp.closed_shape);
        // Retreat along the executed states until the start is free under
        // the current estimate.
        let ctx_params = &params.planner;
        {
            let empty: [PointCloudModel; 0] = [];
            let ctx = PlanContext::new(r, &mle_cloud, &empty, ctx_params);
            while history.len() > 1 && (retreat > 0 || !ctx.state_valid(history.last().expect("nonempty"))?) {
                history.pop();
                retreat = retreat.saturating_sub(1);
            }
            retreat = 0;
        }
        let root = history.last().expect("nonempty").clone();
        let planned = match strategy {
            Strategy::Prm | Strategy::Bsp => {
                let gm = GoalModel::identity(goal_q.clone(), closing.clone());
                plan_baseline(r, &root, &gm, &mle_cloud, ctx_params, derive_seed(it_seed, 2))
            }
            Strategy::Ir3ne => {
                let hyp_goals: Vec<JointConfig> = hyp.poses.iter().filter_map(|p| goal_for(r, grasp, p, params)).collect();
                let gm = GoalModel::new(goal_q.clone(), hyp_goals, closing.clone(), ctx_params.goal_variance_floor)?;
                let clouds: Vec<PointCloudModel> = hyp.poses.iter().map(|p| model.with_frame(*p)).collect();
                plan_ir3ne(r, &root, &gm, &clouds, ctx_params, derive_seed(it_seed, 2))
            }
        };
        let traj = match planned {
            Ok(t) => t,
            Err(Error::Planning(_)) | Err(Error::Unreachable(_)) => {
                rec.planning_failures += 1;
                rec.outcomes.push(IterationOutcome::PlanningFailure);
                continue;
            }
            Err(e) => return Err(e),
        };
        let exec = step_execute(r, &traj, gt, ctx_params)?;
        history.extend(exec.visited.iter().skip(1).cloned());
        let (contacted, q_obs, grasped) = match &exec.outcome {
            ExecutionOutcome::Contact(ev) => {
                rec.contacts += 1;
                retreat = params.retreat_steps;
                rec.outcomes.push(IterationOutcome::Contact {
                    links: ev.links.clone(),
                    step: ev.step,
                });
                (ev.links.clone(), ev.config.clone(), None)
            }
            ExecutionOutcome::Completed {
                final_config,
                touching_fingers,
                touching_links,
                ..
            } => {
                rec.grasp_attempts += 1;
                let ok = grasp.required_fingers.is_subset(touching_fingers);
                rec.outcomes.push(IterationOutcome::Grasp {
                    fingers: touching_fingers.clone(),
                    success: ok,
                });
                (touching_links.clone(), final_config.clone(), Some(ok))
            }
        };
        if let Some(ok) = grasped {
            if rec.grasp_attempts == 1 {
                rec.first_attempt_success = ok;
            }
            if ok {
                rec.success = true;
                rec.final_config = Some(q_obs);
                break;
            }
        }
        if strategy == Strategy::Prm {
            break;
        }
        let up = observe(r, &belief, model, &q_obs, &contacted, params, derive_seed(it_seed, 3))?;
        let kl = kl_divergence(&up.belief, &belief, &hyp);
        rec.kl_per_contact.push(kl.value);
        rec.kl_clamped += kl.clamped as usize;
        rec.degenerate_updates += up.degenerate as usize;
        belief = up.belief;
        if grasped.is_some() {
            // Open the hand and go back home.
            history = vec![home.clone()];
        }
    }
    let mle = belief.mle();
    rec.final_error_m = mle.translation_distance(&gt.true_pose);
    rec.final_error_rad = mle.angle_to(&gt.true_pose);
    rec.wall_time_s = Some(start.elapsed().as_secs_f64());
    Ok(rec)
}
