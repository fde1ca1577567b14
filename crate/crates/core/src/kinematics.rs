//! Kinematic tree of revolute joints (arm chain plus multi-finger hand):
//! forward kinematics, damped-least-squares IK for the wrist, and joint-space
//! interpolation.
//!
//! Robots are described in JSON:
//!
//! ```json
//! { "name": "...", "base_pose": [px,py,pz,qw,qx,qy,qz], "wrist": "palm",
//!   "links": [ { "name": "shoulder", "parent": null, "group": "arm",
//!                "axis": [0,0,1], "limits": [-3.1, 3.1],
//!                "offset_pose": [0,0,0.35,1,0,0,0],
//!                "mesh_box": { "half_extents": [0.05,0.05,0.1], "offset": [0,0,0,1,0,0,0] },
//!                "fingertip": { "offset_pose": [...], "inward_normal": [0,-1,0] } } ] }
//! ```
//!
//! `group` is `"arm"`, `"palm"` or `"finger"` (with `"finger": j`). A link
//! without `axis` is rigidly attached to its parent. Parents must appear
//! before their children. `fingertip` marks a contact-sensing frame with the
//! inward (palmar) normal of that phalanx; the last sensing link of each
//! finger is that finger's tip.

use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::ops::{Deref, Index};
use std::path::Path;

use crate::contact::ConvexMesh;
use crate::error::{Error, Result};
use crate::se3::Pose6D;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(q: Vec<f64>) -> Self {
        Self(q)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Deref for JointConfig {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for JointConfig {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Linear per-joint interpolation; `s` is clamped to [0, 1].
pub fn interpolate(a: &JointConfig, b: &JointConfig, s: f64) -> Result<JointConfig> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let s = s.clamp(0.0, 1.0);
    Ok(JointConfig(
        a.0.iter().zip(&b.0).map(|(x, y)| x + (y - x) * s).collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkGroup {
    Arm,
    Palm,
    Finger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshBoxDesc {
    pub half_extents: [f64; 3],
    #[serde(default = "identity_array")]
    pub offset: [f64; 7],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingertipDesc {
    pub offset_pose: [f64; 7],
    pub inward_normal: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkDesc {
    pub name: String,
    pub parent: Option<String>,
    pub group: LinkGroup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finger: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
    #[serde(default = "identity_array")]
    pub offset_pose: [f64; 7],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_box: Option<MeshBoxDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingertip: Option<FingertipDesc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotDescription {
    pub name: String,
    #[serde(default = "identity_array")]
    pub base_pose: [f64; 7],
    /// Link whose frame is the IK target.
    pub wrist: String,
    pub links: Vec<LinkDesc>,
}

fn identity_array() -> [f64; 7] {
    Pose6D::identity().to_array()
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub limits: (f64, f64),
    /// Position in the configuration vector.
    pub dof: usize,
}

/// Contact-sensing frame of a link with the inward normal of its palmar face.
#[derive(Clone, Debug)]
pub struct ContactSensor {
    pub offset: Pose6D,
    pub inward_normal: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    pub group: LinkGroup,
    pub finger: Option<usize>,
    pub offset: Pose6D,
    pub joint: Option<Joint>,
    /// Convex bound in the link frame, with its centre frame.
    pub mesh: Option<(Pose6D, ConvexMesh)>,
    pub sensor: Option<ContactSensor>,
}

impl Link {
    pub fn is_hand(&self) -> bool {
        matches!(self.group, LinkGroup::Palm | LinkGroup::Finger)
    }
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    pub name: String,
    pub base_pose: Pose6D,
    pub links: Vec<Link>,
    pub wrist: usize,
    /// Indices of configuration entries belonging to arm joints.
    pub arm_dofs: Vec<usize>,
    /// Configuration indices per finger.
    pub finger_dofs: Vec<Vec<usize>>,
    /// Tip link per finger.
    pub finger_tips: Vec<usize>,
    pub dof: usize,
    description: RobotDescription,
}

impl RobotModel {
    pub fn from_description(desc: RobotDescription) -> Result<Self> {
        let mut links: Vec<Link> = Vec::with_capacity(desc.links.len());
        let mut dof = 0;
        let mut arm_dofs = Vec::new();
        let mut finger_dofs: Vec<Vec<usize>> = Vec::new();
        let mut finger_tips: Vec<Option<usize>> = Vec::new();
        for (i, l) in desc.links.iter().enumerate() {
            if links.iter().any(|o| o.name == l.name) {
                return Err(Error::InvalidInput(format!("duplicate link {}", l.name)));
            }
            let parent = match &l.parent {
                None => {
                    if i != 0 {
                        return Err(Error::InvalidInput(format!(
                            "link {} has no parent; only the first link may be the root",
                            l.name
                        )));
                    }
                    None
                }
                Some(p) => Some(links.iter().position(|o| &o.name == p).ok_or_else(|| {
                    Error::InvalidInput(format!("parent {p} of {} must be listed before it", l.name))
                })?),
            };
            if i == 0 && parent.is_some() {
                return Err(Error::InvalidInput("first link must be the root".into()));
            }
            if l.group == LinkGroup::Finger && l.finger.is_none() {
                return Err(Error::InvalidInput(format!("finger link {} needs a finger index", l.name)));
            }
            let joint = match (l.axis, l.limits) {
                (Some(axis), limits) => {
                    let a = Vector3::from(axis);
                    if a.norm() < 1e-12 {
                        return Err(Error::InvalidInput(format!("zero axis on {}", l.name)));
                    }
                    let (lo, hi) = limits.map(|x| (x[0], x[1])).unwrap_or((-std::f64::consts::PI, std::f64::consts::PI));
                    if !(lo < hi) {
                        return Err(Error::InvalidInput(format!("empty joint limits on {}", l.name)));
                    }
                    let j = Joint {
                        axis: Unit::new_normalize(a),
                        limits: (lo, hi),
                        dof,
                    };
                    match (l.group, l.finger) {
                        (LinkGroup::Finger, Some(f)) => {
                            if finger_dofs.len() <= f {
                                finger_dofs.resize(f + 1, Vec::new());
                            }
                            finger_dofs[f].push(dof);
                        }
                        _ => arm_dofs.push(dof),
                    }
                    dof += 1;
                    Some(j)
                }
                (None, Some(_)) => {
                    return Err(Error::InvalidInput(format!("limits without axis on {}", l.name)))
                }
                (None, None) => None,
            };
            let mesh = match &l.mesh_box {
                Some(b) => {
                    if b.half_extents.iter().any(|h| !(*h > 0.0)) {
                        return Err(Error::InvalidInput(format!("bad box on {}", l.name)));
                    }
                    let m = ConvexMesh::from_box(Vector3::from(b.half_extents));
                    m.validate()?;
                    Some((Pose6D::from_array(b.offset)?, m))
                }
                None => None,
            };
            let sensor = match &l.fingertip {
                Some(t) => {
                    let n = Vector3::from(t.inward_normal);
                    if n.norm() < 1e-12 {
                        return Err(Error::InvalidInput(format!("zero inward normal on {}", l.name)));
                    }
                    if let Some(f) = l.finger {
                        if finger_tips.len() <= f {
                            finger_tips.resize(f + 1, None);
                        }
                        finger_tips[f] = Some(i);
                    }
                    Some(ContactSensor {
                        offset: Pose6D::from_array(t.offset_pose)?,
                        inward_normal: n.normalize(),
                    })
                }
                None => None,
            };
            links.push(Link {
                name: l.name.clone(),
                parent,
                group: l.group,
                finger: l.finger,
                offset: Pose6D::from_array(l.offset_pose)?,
                joint,
                mesh,
                sensor,
            });
        }
        if links.is_empty() {
            return Err(Error::InvalidInput("robot has no links".into()));
        }
        let wrist = links
            .iter()
            .position(|l| l.name == desc.wrist)
            .ok_or_else(|| Error::InvalidInput(format!("unknown wrist link {}", desc.wrist)))?;
        if finger_tips.len() < finger_dofs.len() {
            finger_tips.resize(finger_dofs.len(), None);
        }
        let finger_tips = finger_tips
            .into_iter()
            .enumerate()
            .map(|(f, t)| t.ok_or_else(|| Error::InvalidInput(format!("finger {f} has no fingertip"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: desc.name.clone(),
            base_pose: Pose6D::from_array(desc.base_pose)?,
            links,
            wrist,
            arm_dofs,
            finger_dofs,
            finger_tips,
            dof,
            description: desc,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_description(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn description(&self) -> &RobotDescription {
        &self.description
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.description).expect("description serializes")
    }

    pub fn n_fingers(&self) -> usize {
        self.finger_tips.len()
    }

    pub fn joint_limits(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.dof];
        for l in &self.links {
            if let Some(j) = &l.joint {
                out[j.dof] = j.limits;
            }
        }
        out
    }

    /// Clamps into joint limits; the flag reports whether anything moved.
    pub fn clamp(&self, q: &JointConfig) -> Result<(JointConfig, bool)> {
        self.check_dim(q)?;
        let lim = self.joint_limits();
        let mut clamped = false;
        let v = q
            .0
            .iter()
            .zip(&lim)
            .map(|(&x, &(lo, hi))| {
                let c = x.clamp(lo, hi);
                clamped |= c != x;
                c
            })
            .collect();
        Ok((JointConfig(v), clamped))
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.dim() == self.dof
            && q.0
                .iter()
                .zip(self.joint_limits())
                .all(|(&x, (lo, hi))| x >= lo - 1e-12 && x <= hi + 1e-12)
    }

    fn check_dim(&self, q: &JointConfig) -> Result<()> {
        if q.dim() != self.dof {
            return Err(Error::DimensionMismatch {
                expected: self.dof,
                got: q.dim(),
            });
        }
        Ok(())
    }

    /// World pose of every link frame.
    pub fn fk_links(&self, q: &JointConfig) -> Result<Vec<Pose6D>> {
        self.check_dim(q)?;
        Ok(self.fk_unchecked(q))
    }

    fn fk_unchecked(&self, q: &[f64]) -> Vec<Pose6D> {
        let mut poses: Vec<Pose6D> = Vec::with_capacity(self.links.len());
        for l in &self.links {
            let parent = l.parent.map(|p| poses[p]).unwrap_or(self.base_pose);
            let mut pose = parent.compose(&l.offset);
            if let Some(j) = &l.joint {
                let r = UnitQuaternion::from_axis_angle(&j.axis, q[j.dof]);
                pose = pose.compose(&Pose6D::new(Vector3::zeros(), r));
            }
            poses.push(pose);
        }
        poses
    }

    /// World pose of a link's sensing frame.
    pub fn sensor_pose(&self, link: usize, link_poses: &[Pose6D]) -> Option<Pose6D> {
        self.links[link]
            .sensor
            .as_ref()
            .map(|s| link_poses[link].compose(&s.offset))
    }

    pub fn wrist_pose(&self, q: &JointConfig) -> Result<Pose6D> {
        Ok(self.fk_links(q)?[self.wrist])
    }

    /// Links on the path from the root to `link`, inclusive.
    fn chain(&self, link: usize) -> Vec<usize> {
        let mut c = vec![link];
        let mut cur = link;
        while let Some(p) = self.links[cur].parent {
            c.push(p);
            cur = p;
        }
        c.reverse();
        c
    }

    /// Geometric Jacobian (6 × dof; linear rows first) of a link frame origin.
    pub fn jacobian(&self, q: &JointConfig, link: usize) -> Result<DMatrix<f64>> {
        let poses = self.fk_links(q)?;
        let target = poses[link].position;
        let mut j = DMatrix::zeros(6, self.dof);
        for &i in &self.chain(link) {
            if let Some(joint) = &self.links[i].joint {
                let axis = poses[i].transform_vector(&joint.axis);
                let lin = axis.cross(&(target - poses[i].position));
                for r in 0..3 {
                    j[(r, joint.dof)] = lin[r];
                    j[(r + 3, joint.dof)] = axis[r];
                }
            }
        }
        Ok(j)
    }

    /// Rough reach radius: sum of offset lengths along the wrist chain.
    pub fn reach(&self) -> f64 {
        self.chain(self.wrist)
            .iter()
            .map(|&i| self.links[i].offset.position.norm())
            .sum()
    }

    /// Solves for arm joints placing the wrist frame at `target`; finger
    /// joints are taken from `finger_shape` (full-length config whose finger
    /// entries are used).
    pub fn ik_goal(
        &self,
        target: &Pose6D,
        finger_shape: &JointConfig,
        seed: &JointConfig,
        params: &IkParams,
    ) -> Result<IkResult> {
        self.check_dim(seed)?;
        self.check_dim(finger_shape)?;
        let root_pos = self.base_pose.transform_point(&self.links[0].offset.position);
        if (target.position - root_pos).norm() > self.reach() + params.workspace_margin {
            return Err(Error::Unreachable(format!(
                "target {:.3} m from the base exceeds reach {:.3} m",
                (target.position - root_pos).norm(),
                self.reach()
            )));
        }
        let (mut q, _) = self.clamp(seed)?;
        for f in &self.finger_dofs {
            for &d in f {
                q.0[d] = finger_shape[d];
            }
        }
        let (q0, _) = self.clamp(&q)?;
        q = q0;
        let lim = self.joint_limits();
        let err_of = |q: &JointConfig| -> (Vector3<f64>, Vector3<f64>) {
            let w = self.fk_unchecked(q)[self.wrist];
            let ep = target.position - w.position;
            let er = (target.orientation * w.orientation.inverse()).scaled_axis();
            (ep, er)
        };
        let n = self.arm_dofs.len();
        let mut best = q.clone();
        let (ep, er) = err_of(&q);
        let mut best_err = ep.norm() + params.rot_weight * er.norm();
        let mut prev_err = best_err;
        let mut worse_streak = 0;
        let mut converged = ep.norm() <= params.pos_tol && er.norm() <= params.rot_tol;
        let mut iterations = 0;
        while !converged && iterations < params.max_iterations {
            iterations += 1;
            let (ep, er) = err_of(&q);
            let full = self.jacobian(&q, self.wrist)?;
            let mut j = DMatrix::zeros(6, n);
            for (c, &d) in self.arm_dofs.iter().enumerate() {
                j.set_column(c, &full.column(d));
            }
            let e = DVector::from_iterator(6, ep.iter().chain(er.iter()).copied());
            let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * params.damping;
            let Some(chol) = jjt.cholesky() else { break };
            let mut dq = j.transpose() * chol.solve(&e);
            let m = dq.amax();
            if m > params.max_step {
                dq *= params.max_step / m;
            }
            for (c, &d) in self.arm_dofs.iter().enumerate() {
                q.0[d] = (q.0[d] + dq[c]).clamp(lim[d].0, lim[d].1);
            }
            let (ep, er) = err_of(&q);
            let err = ep.norm() + params.rot_weight * er.norm();
            if err < best_err {
                best_err = err;
                best = q.clone();
            }
            worse_streak = if err > prev_err { worse_streak + 1 } else { 0 };
            prev_err = err;
            if worse_streak >= params.divergence_window {
                return Err(Error::Unreachable("IK diverged".into()));
            }
            converged = ep.norm() <= params.pos_tol && er.norm() <= params.rot_tol;
            if converged {
                best = q.clone();
            }
        }
        let (ep, er) = err_of(&best);
        Ok(IkResult {
            converged: ep.norm() <= params.pos_tol && er.norm() <= params.rot_tol,
            config: best,
            position_error: ep.norm(),
            rotation_error: er.norm(),
            iterations,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkParams {
    pub damping: f64,
    pub pos_tol: f64,
    pub rot_tol: f64,
    pub max_iterations: usize,
    pub divergence_window: usize,
    pub max_step: f64,
    /// m per rad when ranking intermediate solutions.
    pub rot_weight: f64,
    pub workspace_margin: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            pos_tol: 0.005,
            rot_tol: 2f64.to_radians(),
            max_iterations: 500,
            divergence_window: 50,
            max_step: 0.2,
            rot_weight: 0.1,
            workspace_margin: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IkResult {
    pub config: JointConfig,
    /// False when the tolerance was not met; `config` is then best effort.
    pub converged: bool,
    pub position_error: f64,
    pub rotation_error: f64,
    pub iterations: usize,
}

/// Parametric builder for the shipped hand-arm models.
pub mod presets {
    use super::*;

    fn pose(p: [f64; 3]) -> [f64; 7] {
        [p[0], p[1], p[2], 1.0, 0.0, 0.0, 0.0]
    }

    fn bx(h: [f64; 3], c: [f64; 3]) -> Option<MeshBoxDesc> {
        Some(MeshBoxDesc {
            half_extents: h,
            offset: pose(c),
        })
    }

    fn arm() -> Vec<LinkDesc> {
        let pi = std::f64::consts::PI;
        let link = |name: &str, parent: Option<&str>, axis: [f64; 3], lim: [f64; 2], off: [f64; 3], mesh| LinkDesc {
            name: name.into(),
            parent: parent.map(Into::into),
            group: LinkGroup::Arm,
            finger: None,
            axis: Some(axis),
            limits: Some(lim),
            offset_pose: pose(off),
            mesh_box: mesh,
            fingertip: None,
        };
        vec![
            link("shoulder_yaw", None, [0., 0., 1.], [-pi, pi], [0., 0., 0.35], bx([0.05, 0.05, 0.17], [0., 0., -0.18])),
            link("shoulder_pitch", Some("shoulder_yaw"), [0., 1., 0.], [-pi / 2.0, 2.0], [0., 0., 0.], bx([0.145, 0.035, 0.035], [0.165, 0., 0.])),
            link("elbow", Some("shoulder_pitch"), [0., 1., 0.], [-2.6, 2.6], [0.33, 0., 0.], bx([0.13, 0.03, 0.03], [0.15, 0., 0.])),
            link("wrist_roll", Some("elbow"), [1., 0., 0.], [-pi, pi], [0.3, 0., 0.], None),
            link("wrist_pitch", Some("wrist_roll"), [0., 1., 0.], [-2.0, 2.0], [0., 0., 0.], None),
            link("wrist_roll2", Some("wrist_pitch"), [1., 0., 0.], [-pi, pi], [0., 0., 0.], None),
        ]
    }

    fn palm(half_width: f64, half_height: f64) -> LinkDesc {
        LinkDesc {
            name: "palm".into(),
            parent: Some("wrist_roll2".into()),
            group: LinkGroup::Palm,
            finger: None,
            axis: None,
            limits: None,
            offset_pose: pose([0.06, 0., 0.]),
            mesh_box: bx([0.012, half_width, half_height], [0., 0., 0.]),
            fingertip: Some(FingertipDesc {
                offset_pose: pose([0.012, 0., 0.]),
                inward_normal: [1., 0., 0.],
            }),
        }
    }

    /// A finger rooted on the palm face at lateral offset `y`, height `z`,
    /// flexing toward the palm centreline. `lengths` are phalanx lengths.
    fn finger(idx: usize, y: f64, z: f64, lengths: &[f64]) -> Vec<LinkDesc> {
        let side = if y >= 0.0 { 1.0 } else { -1.0 };
        // Positive flexion turns the finger toward the centreline.
        let axis = [0., 0., -side];
        let inward = [0., -side, 0.];
        let mut out = Vec::new();
        let mut parent = "palm".to_string();
        let mut offset = [0.012, y, z];
        for (k, &len) in lengths.iter().enumerate() {
            let name = format!("f{idx}_l{k}");
            let limits = if k == 0 { [-0.4, 1.7] } else { [0.0, 1.7] };
            out.push(LinkDesc {
                name: name.clone(),
                parent: Some(parent.clone()),
                group: LinkGroup::Finger,
                finger: Some(idx),
                axis: Some(axis),
                limits: Some(limits),
                offset_pose: pose(offset),
                mesh_box: bx([len / 2.0, 0.008, 0.009], [len / 2.0, 0., 0.]),
                fingertip: Some(FingertipDesc {
                    offset_pose: pose([len * 0.6, -side * 0.008, 0.]),
                    inward_normal: inward,
                }),
            });
            parent = name;
            offset = [len, 0., 0.];
        }
        out
    }

    /// 6-DoF arm with a three-finger hand (two joints per finger): thumb on
    /// the −y palm edge, two fingers on the +y edge.
    pub fn default_12dof() -> RobotDescription {
        let mut links = arm();
        links.push(palm(0.098, 0.045));
        links.extend(finger(0, -0.09, 0.0, &[0.055, 0.045]));
        links.extend(finger(1, 0.09, 0.028, &[0.055, 0.045]));
        links.extend(finger(2, 0.09, -0.028, &[0.055, 0.045]));
        RobotDescription {
            name: "desk-arm-3f".into(),
            base_pose: Pose6D::identity().to_array(),
            wrist: "palm".into(),
            links,
        }
    }

    /// 6-DoF arm with a five-finger hand, three joints per finger (21 DoF).
    pub fn dexterous_21dof() -> RobotDescription {
        let mut links = arm();
        links.push(palm(0.07, 0.06));
        links.extend(finger(0, -0.062, 0.0, &[0.04, 0.035, 0.03]));
        for (k, z) in [0.045, 0.015, -0.015, -0.045].into_iter().enumerate() {
            links.extend(finger(k + 1, 0.062, z, &[0.04, 0.03, 0.025]));
        }
        RobotDescription {
            name: "desk-arm-5f".into(),
            base_pose: Pose6D::identity().to_array(),
            wrist: "palm".into(),
            links,
        }
    }
}
