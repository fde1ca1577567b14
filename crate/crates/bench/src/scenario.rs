//! Versioned scenario files describing a benchmark matrix.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use beliefgrasp::cloud::PointCloudModel;
use beliefgrasp::kinematics::{presets, JointConfig, RobotModel};
use beliefgrasp::registration::RegistrationParams;
use beliefgrasp::sim::{EpisodeParams, GraspSpec, Strategy};
use beliefgrasp::{Error, Pose6D, Result, SE3Kernel};

use crate::objects::{make_object, ObjectKind, ObjectParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    /// Built-in generator; exactly one of `kind` and `ply` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ObjectKind>,
    #[serde(default)]
    pub params: ObjectParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ply: Option<PathBuf>,
    /// Where the object is expected to stand; truth = nominal + offset.
    pub nominal_pose: Pose6D,
    /// Defaults to a side grasp derived from the object's bounding box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp: Option<GraspSpec>,
}

/// Uniform true-pose offsets around the nominal pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetSpec {
    /// Half-widths of the position box, m.
    pub position: [f64; 3],
    /// Half-width of the yaw range, degrees.
    pub yaw_deg: f64,
    /// Adds a 180° yaw flip with probability one half.
    pub symmetry_trap: bool,
}

impl Default for OffsetSpec {
    fn default() -> Self {
        Self {
            position: [0.05, 0.05, 0.0],
            yaw_deg: 30.0,
            symmetry_trap: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Robot description file; the built-in three-finger arm when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<PathBuf>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub offsets: OffsetSpec,
    /// Views kept out of `view_count` sectors, one coverage cell each.
    pub views: Vec<usize>,
    #[serde(default = "default_view_count")]
    pub view_count: usize,
    /// N, registration fits seeding the belief.
    #[serde(default = "default_fits")]
    pub fits: usize,
    pub trials: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_contact_eps")]
    pub contact_eps: f64,
    #[serde(default)]
    pub registration: RegistrationParams,
    #[serde(default)]
    pub kernel: SE3Kernel,
    /// Empty `home`/`ik_seed` take the built-in robot's defaults.
    #[serde(default)]
    pub episode: EpisodeParams,
}

fn default_view_count() -> usize {
    7
}
fn default_fits() -> usize {
    5
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_contact_eps() -> f64 {
    0.003
}

/// Arm posture raised to the robot's right, hand open.
pub fn default_home(r: &RobotModel) -> JointConfig {
    let mut q = JointConfig::zeros(r.dof);
    for (i, v) in [-0.6, -0.5, 1.5, 0.0, -1.0, 0.0].into_iter().enumerate() {
        if let Some(&d) = r.arm_dofs.get(i) {
            q.0[d] = v;
        }
    }
    q
}

/// Elbow-up posture with the palm level and facing forward.
pub fn default_ik_seed(r: &RobotModel) -> JointConfig {
    let mut q = JointConfig::zeros(r.dof);
    for (i, v) in [0.0, -0.2, 1.2, 0.0, -1.0, 0.0].into_iter().enumerate() {
        if let Some(&d) = r.arm_dofs.get(i) {
            q.0[d] = v;
        }
    }
    q
}

/// Side grasps at 45° yaw steps about the object's vertical axis, kept
/// where the object's width in the hand's band fits between the open
/// fingers. Palm faces the object at its mid height (at most 10 cm up).
pub fn default_grasp(r: &RobotModel, cloud: &PointCloudModel) -> GraspSpec {
    let mesh_extent = |link: usize, axis: usize| -> Vec<f64> {
        r.links[link]
            .mesh
            .as_ref()
            .map(|(off, m)| m.vertices().iter().map(|v| off.transform_point(v)[axis]).collect())
            .unwrap_or_default()
    };
    let palm_front = mesh_extent(r.wrist, 0).into_iter().fold(0.0, f64::max);
    // Lateral half-opening between fingers on opposite sides of the palm.
    let poses = r.fk_links(&JointConfig::zeros(r.dof)).expect("zero config is valid");
    let to_wrist = poses[r.wrist].inverse();
    let mut inner = f64::INFINITY;
    for (i, l) in r.links.iter().enumerate() {
        if let (Some(_), Some((off, m))) = (l.finger, &l.mesh) {
            for v in m.vertices() {
                let p = to_wrist.transform_point(&poses[i].compose(off).transform_point(v));
                inner = inner.min(p.y.abs());
            }
        }
    }
    let margin = 0.008;
    let gap = 0.02;
    let b = cloud.local_aabb();
    let height = (0.5 * (b.min.z + b.max.z)).min(b.min.z + 0.1);
    let band = 0.06;
    let mut candidates = Vec::new();
    for k in 0..8 {
        let yaw = k as f64 * std::f64::consts::FRAC_PI_4;
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let (mut x_min, mut y_lo, mut y_hi) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in cloud.local_points() {
            if (p.position.z - height).abs() > band {
                continue;
            }
            let q = rot.inverse_transform_vector(&p.position);
            x_min = x_min.min(q.x);
            y_lo = y_lo.min(q.y);
            y_hi = y_hi.max(q.y);
        }
        if !x_min.is_finite() || 0.5 * (y_hi - y_lo) > inner - margin {
            continue;
        }
        let local = Vector3::new(x_min - gap - palm_front, 0.5 * (y_lo + y_hi), height);
        candidates.push(Pose6D::new(rot * local, rot));
    }
    if candidates.is_empty() {
        candidates.push(Pose6D::from_translation(b.min.x - gap - palm_front, 0.0, height));
    }
    let mut pre = Vec::new();
    let mut closed = Vec::new();
    for f in &r.finger_dofs {
        for (k, _) in f.iter().enumerate() {
            pre.push(if k == 0 { -0.2 } else { 0.0 });
            closed.push(1.4);
        }
    }
    let wrist_pose = candidates.remove(0);
    GraspSpec {
        wrist_pose,
        pregrasp_shape: pre,
        closed_shape: closed,
        required_fingers: (0..r.n_fingers()).collect::<BTreeSet<_>>(),
        alternatives: candidates,
    }
}

/// An object ready for trials: its cloud in its own frame and its grasp.
#[derive(Clone, Debug)]
pub struct LoadedObject {
    pub name: String,
    pub cloud: PointCloudModel,
    pub nominal_pose: Pose6D,
    pub grasp: GraspSpec,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn robot_model(&self) -> Result<RobotModel> {
        match &self.robot {
            Some(p) => RobotModel::load(p),
            None => RobotModel::from_description(presets::default_12dof()),
        }
    }

    /// Checks every field and fills robot-dependent defaults. Runs before
    /// any trial.
    pub fn resolve(&mut self) -> Result<(RobotModel, Vec<LoadedObject>)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.objects.is_empty() || self.views.is_empty() || self.strategies.is_empty() {
            return Err(Error::InvalidInput("objects, views and strategies must be nonempty".into()));
        }
        if self.view_count == 0 || self.views.iter().any(|&v| v == 0 || v > self.view_count) {
            return Err(Error::InvalidInput(format!("views must lie in 1..={}", self.view_count)));
        }
        if self.fits == 0 || !(self.contact_eps > 0.0) {
            return Err(Error::InvalidInput("fits ≥ 1 and contact_eps > 0 required".into()));
        }
        if self.offsets.position.iter().any(|v| !(*v >= 0.0)) || !(self.offsets.yaw_deg >= 0.0) {
            return Err(Error::InvalidInput("offset half-widths must be nonnegative".into()));
        }
        let mut names = BTreeSet::new();
        if self.objects.iter().any(|o| !names.insert(o.name.clone())) {
            return Err(Error::InvalidInput("object names must be unique".into()));
        }
        self.kernel.validate()?;
        let r = self.robot_model()?;
        if self.episode.home.dim() == 0 {
            self.episode.home = default_home(&r);
        }
        if self.episode.ik_seed.dim() == 0 {
            self.episode.ik_seed = default_ik_seed(&r);
        }
        self.episode.validate(&r)?;
        if self.episode.hypotheses - 1 > self.episode.particles {
            return Err(Error::InvalidInput("k − 1 must not exceed K".into()));
        }
        let mut objects = Vec::new();
        for o in &self.objects {
            let cloud = match (&o.kind, &o.ply) {
                (Some(k), None) => make_object(*k, &o.params)?,
                (None, Some(p)) => PointCloudModel::read(p)?.with_frame(Pose6D::identity()),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "object {} needs exactly one of kind and ply",
                        o.name
                    )))
                }
            };
            let grasp = o.grasp.clone().unwrap_or_else(|| default_grasp(&r, &cloud));
            grasp.validate(&r)?;
            objects.push(LoadedObject {
                name: o.name.clone(),
                cloud,
                nominal_pose: o.nominal_pose,
                grasp,
            });
        }
        Ok((r, objects))
    }

    /// The desk-scale bench: jug and L-shape at 1 and 3 views.
    pub fn desk() -> Self {
        let nominal = Pose6D::from_translation(0.5, 0.0, 0.0);
        let obj = |name: &str, kind| ObjectSpec {
            name: name.into(),
            kind: Some(kind),
            params: ObjectParams::default(),
            ply: None,
            nominal_pose: nominal,
            grasp: None,
        };
        let mut episode = EpisodeParams::default();
        episode.planner.clearance.exact_plane_offset = true;
        episode.planner.collision_tol = -0.008;
        episode.planner.tactile.clearance.exact_plane_offset = true;
        episode.tactile.clearance.exact_plane_offset = true;
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "desk".into(),
            robot: None,
            objects: vec![obj("jug", ObjectKind::Jug), obj("lshape", ObjectKind::Lshape)],
            offsets: OffsetSpec::default(),
            views: vec![1, 3],
            view_count: 7,
            fits: 5,
            trials: 50,
            strategies: Strategy::ALL.to_vec(),
            master_seed: 1,
            contact_eps: 0.003,
            registration: RegistrationParams {
                upright_tolerance: Some(15f64.to_radians()),
                ..Default::default()
            },
            kernel: SE3Kernel::default(),
            episode,
        }
    }
}
