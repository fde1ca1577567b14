//! Expected tactile observations: per-link contact probability from clearance
//! and normal opposition, aggregated over fingers, and the contact likelihood
//! used for belief updates.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::cloud::PointCloudModel;
use crate::contact::{link_clearance, ClearanceParams};
use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::se3::Pose6D;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Product,
    Sum,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Self::Product),
            "sum" => Ok(Self::Sum),
            "max" => Ok(Self::Max),
            _ => Err(Error::InvalidInput(format!("unknown aggregation {s}"))),
        }
    }
}

/// How precisely a detected contact is attributed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribution {
    #[default]
    Link,
    /// Only "some hand link touched" is observed.
    Hand,
}

impl std::str::FromStr for Attribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(Self::Link),
            "hand" => Ok(Self::Hand),
            _ => Err(Error::InvalidInput(format!("unknown attribution {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TactileParams {
    pub eta: f64,
    pub lambda: f64,
    pub d_max: f64,
    pub aggregation: Aggregation,
    pub attribution: Attribution,
    pub clearance: ClearanceParams,
}

impl Default for TactileParams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda: 40.0,
            d_max: 0.05,
            aggregation: Aggregation::Product,
            attribution: Attribution::Link,
            clearance: ClearanceParams::default(),
        }
    }
}

impl TactileParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("lambda", self.lambda), ("d_max", self.d_max)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if self.clearance.n_nearest == 0 {
            return Err(Error::InvalidInput("n_nearest must be at least 1".into()));
        }
        Ok(())
    }

    /// φ for a known clearance and normal dot product. Zero beyond d_max
    /// (a jump of at most η·exp(−λ·d_max)) and when normals do not oppose.
    pub fn phi_value(&self, d: f64, normal_dot: f64) -> f64 {
        if d <= self.d_max && normal_dot < 0.0 {
            self.eta * (-self.lambda * d).exp()
        } else {
            0.0
        }
    }

    fn clearance_params(&self) -> ClearanceParams {
        ClearanceParams {
            d_max: self.d_max,
            ..self.clearance.clone()
        }
    }
}

/// φ of one sensing link given precomputed link poses.
pub fn phi_link(
    r: &RobotModel,
    link_poses: &[Pose6D],
    link: usize,
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    let l = &r.links[link];
    let (Some(sensor), Some((mesh_off, mesh))) = (&l.sensor, &l.mesh) else {
        return Ok(0.0);
    };
    let c = link_clearance(mesh, &link_poses[link].compose(mesh_off), cloud, &params.clearance_params())?;
    if !(c.d_obs <= params.d_max) {
        return Ok(0.0);
    }
    let sensor_pose = link_poses[link].compose(&sensor.offset);
    let n_link = sensor_pose.transform_vector(&sensor.inward_normal);
    let nearest = cloud.nearest(&sensor_pose.position, 1)?;
    Ok(params.phi_value(c.d_obs, n_link.dot(&nearest[0].0.normal)))
}

/// φ of finger `finger`'s tip link.
pub fn phi(
    r: &RobotModel,
    q: &JointConfig,
    finger: usize,
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    let tip = *r
        .finger_tips
        .get(finger)
        .ok_or_else(|| Error::InvalidInput(format!("no finger {finger}")))?;
    phi_link(r, &r.fk_links(q)?, tip, cloud, params)
}

pub fn aggregate(values: &[f64], how: Aggregation) -> f64 {
    match how {
        Aggregation::Product => values.iter().product(),
        Aggregation::Sum => values.iter().sum(),
        Aggregation::Max => values.iter().copied().fold(0.0, f64::max),
    }
}

/// g(x, p): aggregation of fingertip φ over all fingers.
pub fn expected_observation(
    r: &RobotModel,
    q: &JointConfig,
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    expected_observation_at(r, &r.fk_links(q)?, cloud, params)
}

pub fn expected_observation_at(
    r: &RobotModel,
    link_poses: &[Pose6D],
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    let phis = r
        .finger_tips
        .iter()
        .map(|&t| phi_link(r, link_poses, t, cloud, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&phis, params.aggregation))
}

/// Hand links that carry a contact sensor.
pub fn sensing_links(r: &RobotModel) -> Vec<usize> {
    (0..r.links.len())
        .filter(|&i| r.links[i].is_hand() && r.links[i].sensor.is_some() && r.links[i].mesh.is_some())
        .collect()
}

/// P(z | x, y): ∏_{contacted} φ_j · ∏_{others} (1 − φ_j) over sensing links.
/// With hand-level attribution the observation is only whether any link
/// touched: 1 − ∏(1 − φ_j) or ∏(1 − φ_j).
pub fn contact_likelihood(
    r: &RobotModel,
    q: &JointConfig,
    contacted: &BTreeSet<usize>,
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    contact_likelihood_at(r, &r.fk_links(q)?, contacted, cloud, params)
}

pub fn contact_likelihood_at(
    r: &RobotModel,
    link_poses: &[Pose6D],
    contacted: &BTreeSet<usize>,
    cloud: &PointCloudModel,
    params: &TactileParams,
) -> Result<f64> {
    let links = sensing_links(r);
    let mut none = 1.0;
    let mut joint = 1.0;
    for &l in &links {
        let p = phi_link(r, link_poses, l, cloud, params)?;
        none *= 1.0 - p;
        joint *= if contacted.contains(&l) { p } else { 1.0 - p };
    }
    // Contacts on links without a sensor cannot be explained.
    if contacted.iter().any(|c| !links.contains(c)) {
        joint = 0.0;
    }
    Ok(match params.attribution {
        Attribution::Link => joint,
        Attribution::Hand if contacted.is_empty() => none,
        Attribution::Hand => 1.0 - none,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{BeliefState, Jitter};
    use crate::cloud::OrientedPoint;
    use crate::contact::mesh_pose;
    use crate::kinematics::presets;
    use crate::se3::SE3Kernel;
    use nalgebra::Vector3;

    fn robot() -> RobotModel {
        RobotModel::from_description(presets::default_12dof()).unwrap()
    }

    #[test]
    fn phi_examples() {
        let p = TactileParams::default();
        assert_eq!(p.phi_value(0.0, -1.0), 1.0);
        assert_eq!(p.phi_value(0.051, -1.0), 0.0);
        assert!((p.phi_value(0.05, -1.0) - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(p.phi_value(0.01, 1.0), 0.0);
        assert_eq!(p.phi_value(0.01, 0.0), 0.0);
        let mut last = f64::INFINITY;
        for i in 0..=500 {
            let v = p.phi_value(i as f64 * 1e-4, -0.5);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn aggregation_examples() {
        assert!((aggregate(&[0.5, 0.5, 1.0], Aggregation::Product) - 0.25).abs() < 1e-15);
        assert_eq!(aggregate(&[0.5, 0.0, 1.0], Aggregation::Product), 0.0);
        assert_eq!(aggregate(&[0.5, 0.2], Aggregation::Max), 0.5);
        assert!((aggregate(&[0.5, 0.2], Aggregation::Sum) - 0.7).abs() < 1e-15);
        for how in [Aggregation::Product, Aggregation::Sum, Aggregation::Max] {
            assert_eq!(aggregate(&[0.3, 0.9, 0.1], how), aggregate(&[0.9, 0.1, 0.3], how));
        }
    }

    /// Cloud of `n` points at `centre` whose normals point along `normal`.
    fn patch(centre: Vector3<f64>, normal: Vector3<f64>) -> PointCloudModel {
        let pts = (0..16)
            .map(|i| {
                let off = Vector3::new(0.0, 0.0, (i as f64 - 7.5) * 1e-4);
                OrientedPoint::new(centre + off, normal)
            })
            .collect();
        PointCloudModel::new(pts, Pose6D::identity()).unwrap()
    }

    #[test]
    fn phi_on_robot_respects_normals_and_range() {
        let r = robot();
        let q = JointConfig::zeros(r.dof);
        let poses = r.fk_links(&q).unwrap();
        let tip = r.finger_tips[0];
        let sensor = r.sensor_pose(tip, &poses).unwrap();
        let inward = sensor.transform_vector(&r.links[tip].sensor.as_ref().unwrap().inward_normal);
        let mut params = TactileParams::default();
        // Corner-distance offsets count a surface 1 cm off the palmar face
        // as touching; exact offsets measure the gap.
        let front = patch(sensor.position + inward * 0.01, -inward);
        assert_eq!(phi(&r, &q, 0, &front, &params).unwrap(), 1.0);
        let farther = patch(sensor.position + inward * 0.04, -inward);
        let v = phi(&r, &q, 0, &farther, &params).unwrap();
        assert!(v > 0.2 && v < 1.0, "{v}");
        params.clearance.exact_plane_offset = true;
        let v = phi(&r, &q, 0, &front, &params).unwrap();
        assert!((v - (-40.0f64 * 0.01).exp()).abs() < 1e-9, "{v}");
        let back = patch(sensor.position + inward * 0.01, inward);
        assert_eq!(phi(&r, &q, 0, &back, &params).unwrap(), 0.0);
        let far = patch(sensor.position + inward * 0.2, -inward);
        assert_eq!(phi(&r, &q, 0, &far, &params).unwrap(), 0.0);
        let centre = mesh_pose(&r, tip, &poses).unwrap().position;
        let inside = patch(centre, -inward);
        assert_eq!(phi(&r, &q, 0, &inside, &params).unwrap(), 1.0);
    }

    #[test]
    fn likelihood_examples() {
        let r = robot();
        let q = JointConfig::zeros(r.dof);
        let poses = r.fk_links(&q).unwrap();
        let tip = r.finger_tips[0];
        let sensor = r.sensor_pose(tip, &poses).unwrap();
        let inward = sensor.transform_vector(&r.links[tip].sensor.as_ref().unwrap().inward_normal);
        let params = TactileParams::default();
        let contacted: BTreeSet<usize> = [tip].into();
        let far = patch(sensor.position + Vector3::new(2.0, 0.0, 0.0), -inward);
        assert_eq!(contact_likelihood(&r, &q, &contacted, &far, &params).unwrap(), 0.0);
        let centre = mesh_pose(&r, tip, &poses).unwrap().position;
        let touching = patch(centre, -inward);
        let l = contact_likelihood(&r, &q, &contacted, &touching, &params).unwrap();
        // Other links are several centimetres away: their (1 − φ) factors
        // are below one but the explainer dominates.
        assert!(l > 0.0 && l <= 1.0);
        let hand = TactileParams {
            attribution: Attribution::Hand,
            ..params.clone()
        };
        assert!(contact_likelihood(&r, &q, &contacted, &touching, &hand).unwrap() >= l);
        assert_eq!(contact_likelihood(&r, &q, &BTreeSet::new(), &far, &params).unwrap(), 1.0);
    }

    #[test]
    fn two_hypothesis_bayes_update() {
        let r = robot();
        let q = JointConfig::zeros(r.dof);
        let poses = r.fk_links(&q).unwrap();
        let tip = r.finger_tips[0];
        let sensor = r.sensor_pose(tip, &poses).unwrap();
        let inward = sensor.transform_vector(&r.links[tip].sensor.as_ref().unwrap().inward_normal);
        let params = TactileParams::default();
        let contacted: BTreeSet<usize> = [tip].into();
        let model = patch(Vector3::zeros(), -inward);
        let centre = mesh_pose(&r, tip, &poses).unwrap().position;
        let explain = Pose6D::new(centre, Default::default());
        let other = Pose6D::new(centre + Vector3::new(0.0, 0.0, 0.5), Default::default());
        let l: Vec<f64> = [explain, other]
            .iter()
            .map(|p| contact_likelihood(&r, &q, &contacted, &model.with_frame(*p), &params).unwrap())
            .collect();
        assert_eq!(l[1], 0.0);
        let prior = BeliefState::new(vec![(explain, 0.3), (other, 0.7)], SE3Kernel::default()).unwrap();
        // Hand arithmetic: posterior ∝ prior · likelihood.
        let post_explain = 0.3 * l[0] / (0.3 * l[0] + 0.7 * l[1]);
        assert_eq!(post_explain, 1.0);
        let out = prior.update(&l, 100, Jitter::NONE, 1).unwrap();
        assert!(out.belief.particles().iter().all(|p| p.pose == explain));
    }
}
