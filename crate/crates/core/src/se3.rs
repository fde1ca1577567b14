//! Rigid-body poses, SE(3) distances and the separable pose kernel.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: renormalize(orientation),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::new(Vector3::zeros(), UnitQuaternion::from_axis_angle(&axis, angle))
    }

    pub fn from_euler(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(position, UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    /// Builds a pose from `px py pz qw qx qy qz`. The quaternion is normalized.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || v[..3].iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid pose {v:?}")));
        }
        Ok(Self::new(
            Vector3::new(v[0], v[1], v[2]),
            UnitQuaternion::from_quaternion(q),
        ))
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose6D {
        let inv = self.orientation.inverse();
        Pose6D::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * v
    }

    /// Homogeneous 4×4 matrix of the transform.
    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = self.orientation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    pub fn translation_distance(&self, other: &Pose6D) -> f64 {
        (self.position - other.position).norm()
    }

    pub fn angle_to(&self, other: &Pose6D) -> f64 {
        geodesic_angle(&self.orientation, &other.orientation)
    }
}

impl std::ops::Mul for Pose6D {
    type Output = Pose6D;
    fn mul(self, rhs: Pose6D) -> Pose6D {
        self.compose(&rhs)
    }
}

impl Serialize for Pose6D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose6D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose6D::from_array(a).map_err(serde::de::Error::custom)
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Angle of the relative rotation between two orientations, in `[0, π]`.
/// `q` and `-q` describe the same orientation.
pub fn geodesic_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    // 2·acos loses precision near identity; the atan2 form is stable everywhere.
    let rel = a.inverse() * b;
    let v = rel.quaternion().imag().norm();
    let w = rel.quaternion().w.abs();
    2.0 * v.atan2(w)
}

/// Weighted sum of translation and geodesic rotation distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SE3Metric {
    /// 1/m
    pub w_pos: f64,
    /// 1/rad
    pub w_rot: f64,
}

impl Default for SE3Metric {
    fn default() -> Self {
        Self {
            w_pos: 1.0,
            w_rot: 0.2,
        }
    }
}

impl SE3Metric {
    pub fn new(w_pos: f64, w_rot: f64) -> Result<Self> {
        let m = Self { w_pos, w_rot };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_pos >= 0.0 && self.w_rot >= 0.0) || (self.w_pos == 0.0 && self.w_rot == 0.0) {
            return Err(Error::InvalidInput(format!(
                "metric weights must be nonnegative and not both zero: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn distance(&self, a: &Pose6D, b: &Pose6D) -> f64 {
        se3_distance(a, b, self)
    }
}

pub fn se3_distance(a: &Pose6D, b: &Pose6D, m: &SE3Metric) -> f64 {
    m.w_pos * a.translation_distance(b) + m.w_rot * a.angle_to(b)
}

/// Separable Gaussian kernel on poses: per-axis position bandwidth times a
/// Gaussian in the geodesic angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SE3Kernel {
    /// m, per world axis
    pub sigma_pos: [f64; 3],
    /// rad
    pub sigma_rot: f64,
}

impl Default for SE3Kernel {
    fn default() -> Self {
        Self {
            sigma_pos: [0.01; 3],
            sigma_rot: 0.1,
        }
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl SE3Kernel {
    pub fn new(sigma_pos: [f64; 3], sigma_rot: f64) -> Result<Self> {
        let k = Self {
            sigma_pos,
            sigma_rot,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_pos.iter().chain([&self.sigma_rot]).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "kernel bandwidths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Kernel value at zero displacement.
    pub fn normalizer(&self) -> f64 {
        self.sigma_pos
            .iter()
            .chain([&self.sigma_rot])
            .map(|s| INV_SQRT_2PI / s)
            .product()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.normalizer().ln()
    }

    /// Log of the kernel value; finite for any displacement.
    pub fn log_eval(&self, y: &Pose6D, center: &Pose6D) -> f64 {
        let d = y.position - center.position;
        let mut e = 0.0;
        for i in 0..3 {
            let z = d[i] / self.sigma_pos[i];
            e += z * z;
        }
        let a = y.angle_to(center) / self.sigma_rot;
        self.log_normalizer() - 0.5 * (e + a * a)
    }

    pub fn eval(&self, y: &Pose6D, center: &Pose6D) -> f64 {
        self.log_eval(y, center).exp()
    }
}

pub fn kernel_eval(y: &Pose6D, center: &Pose6D, k: &SE3Kernel) -> f64 {
    k.eval(y, center)
}

/// Uniformly distributed random orientation.
pub fn random_orientation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * 2.0 * PI;
    let u3: f64 = rng.random::<f64>() * 2.0 * PI;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::from_quaternion(Quaternion::new(
        a * u2.sin(),
        a * u2.cos(),
        b * u3.sin(),
        b * u3.cos(),
    ))
}

/// Perturbs a pose by per-axis Gaussian translation noise and a rotation
/// vector whose components have standard deviation `sigma_rot / √3`, so the
/// RMS geodesic perturbation equals `sigma_rot`.
pub fn jitter_pose<R: Rng + ?Sized>(
    rng: &mut R,
    pose: &Pose6D,
    sigma_pos: f64,
    sigma_rot: f64,
) -> Pose6D {
    if sigma_pos == 0.0 && sigma_rot == 0.0 {
        return *pose;
    }
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    let dp = Vector3::new(g(), g(), g()) * sigma_pos;
    let s = sigma_rot / 3f64.sqrt();
    let w = Vector3::new(g(), g(), g()) * s;
    Pose6D::new(
        pose.position + dp,
        UnitQuaternion::from_scaled_axis(w) * pose.orientation,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose6D {
        let p = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose6D::new(p, random_orientation(rng))
    }

    fn assert_pose_eq(a: &Pose6D, b: &Pose6D, tol: f64) {
        assert!((a.position - b.position).norm() < tol, "{a:?} vs {b:?}");
        assert!(a.angle_to(b) < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = random_pose(&mut rng);
            assert_pose_eq(&Pose6D::identity().compose(&p), &p, 1e-12);
            let e = p.compose(&p.inverse());
            assert!(e.position.norm() < 1e-9);
            assert!(e.angle_to(&Pose6D::identity()) < 1e-7);
            assert!((e.orientation.quaternion().norm() - 1.0).abs() < 1e-9);
            let back = p.inverse().inverse();
            for (x, y) in back.to_array().iter().zip(p.to_array()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translations_commute() {
        let c = Pose6D::from_translation(1.0, 0.0, 0.0) * Pose6D::from_translation(2.0, 0.0, 0.0);
        assert_pose_eq(&c, &Pose6D::from_translation(3.0, 0.0, 0.0), 1e-15);
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let l = (a * b) * c;
            let r = a * (b * c);
            assert!((l.position - r.position).abs().max() < 1e-9);
            let dq = l.orientation.quaternion().dot(r.orientation.quaternion()).abs();
            assert!((dq - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_examples() {
        let p = Pose6D::from_euler(Vector3::new(0.3, -0.2, 0.1), 0.2, 0.4, -1.0);
        assert_eq!(se3_distance(&p, &p, &SE3Metric::default()), 0.0);
        let d = se3_distance(
            &Pose6D::identity(),
            &Pose6D::from_translation(1.0, 0.0, 0.0),
            &SE3Metric::new(1.0, 0.0).unwrap(),
        );
        assert!((d - 1.0).abs() < 1e-15);
        let rz = Pose6D::from_axis_angle(&Vector3::z(), PI);
        let d = se3_distance(&Pose6D::identity(), &rz, &SE3Metric::new(0.0, 1.0).unwrap());
        assert!((d - PI).abs() < 1e-12);
        assert!(SE3Metric::new(0.0, 0.0).is_err());
        assert!(SE3Metric::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn sign_invariance_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SE3Metric::default();
        let k = SE3Kernel::default();
        for _ in 0..10_000 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let neg = Pose6D {
                position: a.position,
                orientation: UnitQuaternion::new_unchecked(-a.orientation.into_inner()),
            };
            assert!((m.distance(&a, &b) - m.distance(&neg, &b)).abs() < 1e-12);
            assert!((k.log_eval(&a, &b) - k.log_eval(&neg, &b)).abs() < 1e-9);
            assert!(m.distance(&a, &c) <= m.distance(&a, &b) + m.distance(&b, &c) + 1e-12);
            assert!((m.distance(&a, &b) - m.distance(&b, &a)).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_peak_and_shift() {
        let k = SE3Kernel::new([0.01, 0.02, 0.03], 0.1).unwrap();
        let p = Pose6D::from_euler(Vector3::new(0.1, 0.2, 0.3), 0.1, 0.2, 0.3);
        assert!((kernel_eval(&p, &p, &k) / k.normalizer() - 1.0).abs() < 1e-12);
        let shifted = Pose6D::from_translation(0.03, 0.0, 0.0) * p;
        let ratio = kernel_eval(&shifted, &p, &k) / k.normalizer();
        assert!((ratio - (-4.5f64).exp()).abs() < 1e-12);
        assert!(SE3Kernel::new([0.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn kernel_matches_direct_formula() {
        // Scratch formula: product of four 1-D Gaussian densities.
        fn gauss(x: f64, s: f64) -> f64 {
            (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = SE3Kernel::new([0.05, 0.07, 0.04], 0.3).unwrap();
        for _ in 0..1000 {
            let mut a = random_pose(&mut rng);
            a.position *= 0.1;
            let mut b = random_pose(&mut rng);
            b.position *= 0.1;
            let qa = a.orientation.quaternion();
            let qb = b.orientation.quaternion();
            let cosh = (qa.w * qb.w + qa.i * qb.i + qa.j * qb.j + qa.k * qb.k).abs().min(1.0);
            let theta = 2.0 * cosh.acos();
            let oracle = gauss(a.position.x - b.position.x, 0.05)
                * gauss(a.position.y - b.position.y, 0.07)
                * gauss(a.position.z - b.position.z, 0.04)
                * gauss(theta, 0.3);
            let v = kernel_eval(&a, &b, &k);
            assert!((v - oracle).abs() <= 1e-12 * oracle.max(1.0), "{v} vs {oracle}");
        }
    }

    #[test]
    fn array_round_trip() {
        let p = Pose6D::from_euler(Vector3::new(1.0, 2.0, 3.0), 0.3, -0.2, 0.9);
        let q = Pose6D::from_array(p.to_array()).unwrap();
        assert_pose_eq(&p, &q, 1e-15);
        assert!(Pose6D::from_array([0.0; 7]).is_err());
    }
}
