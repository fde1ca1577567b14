//! Synthetic object clouds with analytic normals. Every object stands on the
//! plane z = 0 of its own frame; sampling is deterministic.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use beliefgrasp::cloud::{OrientedPoint, PointCloudModel};
use beliefgrasp::{Error, Pose6D, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Jug,
    Bottle,
    Stapler,
    Spray,
    Box,
    Lshape,
}

impl std::str::FromStr for ObjectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "jug" => Self::Jug,
            "bottle" => Self::Bottle,
            "stapler" => Self::Stapler,
            "spray" => Self::Spray,
            "box" => Self::Box,
            "lshape" => Self::Lshape,
            _ => return Err(Error::InvalidInput(format!("unknown object kind {s}"))),
        })
    }
}

/// Size parameters (metres). Unused fields are ignored by a kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectParams {
    /// Points per square metre of surface.
    pub density: f64,
    pub radius: f64,
    pub height: f64,
    /// Box edge lengths.
    pub size: [f64; 3],
    /// Jug handle: major radius of the torus arc and tube radius.
    pub handle_radius: f64,
    pub handle_tube: f64,
}

impl Default for ObjectParams {
    fn default() -> Self {
        Self {
            density: 1.0e5,
            radius: 0.05,
            height: 0.16,
            size: [0.1, 0.1, 0.1],
            handle_radius: 0.04,
            handle_tube: 0.008,
        }
    }
}

impl ObjectParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        if !ok(self.density, 1e3, 1e7)
            || !ok(self.radius, 0.005, 0.5)
            || !ok(self.height, 0.01, 1.0)
            || !self.size.iter().all(|&s| ok(s, 0.005, 1.0))
            || !ok(self.handle_radius, 0.005, 0.3)
            || !ok(self.handle_tube, 0.001, self.handle_radius)
        {
            return Err(Error::InvalidInput("object parameters out of range".into()));
        }
        Ok(())
    }
}

/// Low-discrepancy points in the unit square.
fn unit_square(n: usize) -> impl Iterator<Item = (f64, f64)> {
    // R2 sequence (plastic-number lattice).
    let g = 1.324_717_957_244_746;
    let (a1, a2) = (1.0 / g, 1.0 / (g * g));
    (0..n).map(move |i| ((0.5 + a1 * i as f64).fract(), (0.5 + a2 * i as f64).fract()))
}

fn count(area: f64, density: f64) -> usize {
    ((area * density).round() as usize).max(1)
}

/// A solid with a sampled boundary and an interior test.
trait Part {
    fn sample(&self, density: f64) -> Vec<OrientedPoint>;
    fn contains(&self, p: &Vector3<f64>) -> bool;
}

struct Cuboid {
    min: Vector3<f64>,
    max: Vector3<f64>,
    /// Faces (axis, side) left unsampled, e.g. where parts meet.
    skip: Vec<(usize, usize)>,
}

impl Cuboid {
    fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self {
            min: Vector3::from(min),
            max: Vector3::from(max),
            skip: Vec::new(),
        }
    }
}

impl Part for Cuboid {
    fn sample(&self, density: f64) -> Vec<OrientedPoint> {
        let ext = self.max - self.min;
        let mut out = Vec::new();
        for axis in 0..3 {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2 {
                if self.skip.contains(&(axis, side)) {
                    continue;
                }
                let mut n = Vector3::zeros();
                n[axis] = if side == 0 { -1.0 } else { 1.0 };
                for (a, b) in unit_square(count(ext[u] * ext[w], density)) {
                    let mut p = Vector3::zeros();
                    p[axis] = if side == 0 { self.min[axis] } else { self.max[axis] };
                    p[u] = self.min[u] + a * ext[u];
                    p[w] = self.min[w] + b * ext[w];
                    out.push(OrientedPoint::new(p, n));
                }
            }
        }
        out
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] > self.min[i] + 1e-9 && p[i] < self.max[i] - 1e-9)
    }
}

/// Vertical cylinder (or frustum when the radii differ) on the z axis.
struct Frustum {
    r0: f64,
    r1: f64,
    z0: f64,
    z1: f64,
    bottom: bool,
    top: bool,
}

impl Part for Frustum {
    fn sample(&self, density: f64) -> Vec<OrientedPoint> {
        let h = self.z1 - self.z0;
        let slant = ((self.r1 - self.r0).powi(2) + h * h).sqrt();
        let mut out = Vec::new();
        let side_area = PI * (self.r0 + self.r1) * slant;
        // Outward normal of the slanted side, in the (radial, z) plane.
        let (nr, nz) = (h / slant, (self.r0 - self.r1) / slant);
        for (a, b) in unit_square(count(side_area, density)) {
            let th = a * TAU;
            let r = self.r0 + (self.r1 - self.r0) * b;
            let (s, c) = th.sin_cos();
            out.push(OrientedPoint::new(
                Vector3::new(r * c, r * s, self.z0 + b * h),
                Vector3::new(nr * c, nr * s, nz),
            ));
        }
        for (cap, r, z, nz) in [(self.bottom, self.r0, self.z0, -1.0), (self.top, self.r1, self.z1, 1.0)] {
            if !cap {
                continue;
            }
            for (a, b) in unit_square(count(PI * r * r, density)) {
                let th = a * TAU;
                let rr = r * b.sqrt();
                out.push(OrientedPoint::new(Vector3::new(rr * th.cos(), rr * th.sin(), z), Vector3::new(0.0, 0.0, nz)));
            }
        }
        out
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        if p.z <= self.z0 + 1e-9 || p.z >= self.z1 - 1e-9 {
            return false;
        }
        let t = (p.z - self.z0) / (self.z1 - self.z0);
        let r = self.r0 + (self.r1 - self.r0) * t;
        p.x.hypot(p.y) < r - 1e-9
    }
}

/// Arc of a torus in the xz plane around `centre`, spanning polar angles
/// [a0, a1] measured from +x toward +z.
struct TorusArc {
    centre: Vector3<f64>,
    major: f64,
    minor: f64,
    a0: f64,
    a1: f64,
}

impl Part for TorusArc {
    fn sample(&self, density: f64) -> Vec<OrientedPoint> {
        let area = (self.a1 - self.a0) * self.major * TAU * self.minor;
        unit_square(count(area, density))
            .map(|(a, b)| {
                let t = self.a0 + a * (self.a1 - self.a0);
                let s = b * TAU;
                let ring = Vector3::new(t.cos(), 0.0, t.sin());
                let n = ring * s.cos() + Vector3::y() * s.sin();
                OrientedPoint::new(self.centre + ring * self.major + n * self.minor, n)
            })
            .collect()
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.centre;
        let t = d.z.atan2(d.x);
        if t < self.a0 || t > self.a1 {
            return false;
        }
        let ring = Vector3::new(t.cos(), 0.0, t.sin()) * self.major;
        (d - ring).norm() < self.minor - 1e-9
    }
}

/// Boundary points of a union of parts: each part's samples that are not
/// strictly inside another part.
fn union(parts: &[&dyn Part], density: f64) -> Vec<OrientedPoint> {
    let mut out = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        for s in p.sample(density) {
            if !parts.iter().enumerate().any(|(j, q)| j != i && q.contains(&s.position)) {
                out.push(s);
            }
        }
    }
    out
}

/// Extruded polygon (counter-clockwise, xy plane) from z = 0 to `height`.
fn prism(poly: &[[f64; 2]], height: f64, density: f64) -> Vec<OrientedPoint> {
    let mut out = Vec::new();
    for k in 0..poly.len() {
        let a = Vector3::new(poly[k][0], poly[k][1], 0.0);
        let b = Vector3::new(poly[(k + 1) % poly.len()][0], poly[(k + 1) % poly.len()][1], 0.0);
        let e = b - a;
        let n = Vector3::new(e.y, -e.x, 0.0).normalize();
        for (u, v) in unit_square(count(e.norm() * height, density)) {
            out.push(OrientedPoint::new(a + e * u + Vector3::z() * (v * height), n));
        }
    }
    // Caps: rejection sampling over the bounding rectangle.
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poly {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let rect = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    for (z, nz) in [(0.0, -1.0), (height, 1.0)] {
        for (u, v) in unit_square(count(rect, density)) {
            let (x, y) = (lo[0] + u * (hi[0] - lo[0]), lo[1] + v * (hi[1] - lo[1]));
            if point_in_polygon(x, y, poly) {
                out.push(OrientedPoint::new(Vector3::new(x, y, z), Vector3::new(0.0, 0.0, nz)));
            }
        }
    }
    out
}

fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi, xj, yj) = (poly[i][0], poly[i][1], poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// The L-shaped cross-section used by `lshape`: a front slab with a foot
/// running back along its −y edge.
pub const LSHAPE_POLY: [[f64; 2]; 6] = [
    [-0.03, -0.05],
    [0.11, -0.05],
    [0.11, -0.01],
    [0.03, -0.01],
    [0.03, 0.05],
    [-0.03, 0.05],
];

/// Builds the object cloud in its own frame (identity placement).
pub fn make_object(kind: ObjectKind, params: &ObjectParams) -> Result<PointCloudModel> {
    params.validate()?;
    let d = params.density;
    let pts = match kind {
        ObjectKind::Box => {
            let s = params.size;
            Cuboid::new([-s[0] / 2.0, -s[1] / 2.0, 0.0], [s[0] / 2.0, s[1] / 2.0, s[2]]).sample(d)
        }
        ObjectKind::Jug => {
            let (r, h) = (params.radius, params.height);
            let body = Frustum { r0: r, r1: r, z0: 0.0, z1: h, bottom: true, top: true };
            // Handle ends sit inside the body wall; the arc bulges out along +x.
            let handle = TorusArc {
                centre: Vector3::new(r - params.handle_tube, 0.0, h * 0.55),
                major: params.handle_radius,
                minor: params.handle_tube,
                a0: -PI / 2.0,
                a1: PI / 2.0,
            };
            union(&[&body, &handle], d)
        }
        ObjectKind::Bottle => {
            let (r, h) = (params.radius, params.height);
            let neck_r = r * 0.4;
            let body = Frustum { r0: r, r1: r, z0: 0.0, z1: h * 0.65, bottom: true, top: false };
            let shoulder = Frustum { r0: r, r1: neck_r, z0: h * 0.65, z1: h * 0.8, bottom: false, top: false };
            let neck = Frustum { r0: neck_r, r1: neck_r, z0: h * 0.8, z1: h, bottom: false, top: true };
            union(&[&body, &shoulder, &neck], d)
        }
        ObjectKind::Spray => {
            let (r, h) = (params.radius, params.height);
            let body = Frustum { r0: r, r1: r, z0: 0.0, z1: h * 0.75, bottom: true, top: true };
            let mut head = Cuboid::new([-r * 0.5, -r * 0.45, h * 0.75], [r * 0.6, r * 0.45, h]);
            head.skip.push((2, 0));
            let mut nozzle = Cuboid::new([r * 0.6, -r * 0.15, h * 0.87], [r * 1.1, r * 0.15, h * 0.95]);
            nozzle.skip.push((0, 0));
            union(&[&body, &head, &nozzle], d)
        }
        ObjectKind::Stapler => {
            let mut base = Cuboid::new([-0.08, -0.02, 0.0], [0.08, 0.02, 0.02]);
            base.skip.push((2, 1));
            let mut top = Cuboid::new([-0.075, -0.017, 0.02], [0.07, 0.017, 0.048]);
            top.skip.push((2, 0));
            let mut out = union(&[&base, &top], d);
            // The base's top face is exposed outside the top part's footprint.
            let exposed = Cuboid::new([-0.08, -0.02, 0.0], [0.08, 0.02, 0.02]).sample(d);
            out.extend(exposed.into_iter().filter(|p| {
                p.normal.z > 0.5 && !(p.position.x > -0.075 && p.position.x < 0.07 && p.position.y.abs() < 0.017)
            }));
            out
        }
        ObjectKind::Lshape => prism(&LSHAPE_POLY, params.height.min(0.15), d),
    };
    PointCloudModel::new(pts, Pose6D::identity())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_counts_and_normals() {
        let p = ObjectParams {
            size: [0.1, 0.1, 0.1],
            ..Default::default()
        };
        let c = make_object(ObjectKind::Box, &p).unwrap();
        assert_eq!(c.len(), 6000);
        for q in c.local_points() {
            let n = q.normal;
            assert_eq!(n.iter().filter(|v| v.abs() == 1.0).count(), 1);
            assert_eq!(n.iter().filter(|v| **v == 0.0).count(), 2);
        }
    }

    #[test]
    fn cylinder_normals_are_radial() {
        let c = make_object(ObjectKind::Jug, &ObjectParams::default()).unwrap();
        let r = ObjectParams::default().radius;
        let mut side = 0;
        for q in c.local_points() {
            let p = q.position;
            if (p.x.hypot(p.y) - r).abs() < 1e-12 && p.z > 1e-9 && p.z < 0.16 - 1e-9 && q.normal.z.abs() < 1e-12 {
                side += 1;
                let radial = Vector3::new(p.x, p.y, 0.0).normalize();
                assert!((q.normal - radial).norm() < 1e-6);
            }
        }
        assert!(side > 1000);
    }

    #[test]
    fn deterministic_and_unknown_kind() {
        let a = make_object(ObjectKind::Lshape, &ObjectParams::default()).unwrap();
        let b = make_object(ObjectKind::Lshape, &ObjectParams::default()).unwrap();
        assert_eq!(a.local_points(), b.local_points());
        assert!("teapot".parse::<ObjectKind>().is_err());
        for k in ["jug", "bottle", "stapler", "spray", "box", "lshape"] {
            let c = make_object(k.parse().unwrap(), &ObjectParams::default()).unwrap();
            assert!(c.len() > 500, "{k}");
            assert!(c.local_aabb().min.z >= -1e-12);
        }
    }
}
