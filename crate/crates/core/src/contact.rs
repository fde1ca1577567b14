//! Point-cloud vs convex link clearance: triangle-averaged depth of the cloud
//! points nearest a link, and configuration collision checks built on it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::{Aabb, PointCloudModel};
use crate::error::{Error, Result};
use crate::kinematics::{JointConfig, RobotModel};
use crate::se3::Pose6D;

#[derive(Clone, Debug, PartialEq)]
pub struct Triangle {
    pub v: [Vector3<f64>; 3],
    /// Outward unit normal.
    pub normal: Vector3<f64>,
}

/// Closed convex triangle mesh in its own centre frame.
#[derive(Clone, Debug)]
pub struct ConvexMesh {
    triangles: Vec<Triangle>,
    vertices: Vec<Vector3<f64>>,
    /// max_i (‖v_i1‖ − n_iᵀv_i1): how far the corner-distance plane offsets
    /// push faces outward.
    corner_slack: f64,
    /// Vertex bounding box in the mesh frame.
    local_box: Aabb,
    /// Smallest face-plane distance from the centre.
    min_offset: f64,
    /// Every face normal is a coordinate axis.
    axis_aligned: bool,
}

impl ConvexMesh {
    /// Builds from counter-clockwise (seen from outside) triangles.
    pub fn from_triangles(tris: Vec<[Vector3<f64>; 3]>) -> Result<Self> {
        let mut triangles = Vec::with_capacity(tris.len());
        let mut vertices: Vec<Vector3<f64>> = Vec::new();
        for v in tris {
            let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
            if n.norm() < 1e-15 {
                return Err(Error::InvalidInput("degenerate triangle".into()));
            }
            for p in &v {
                if !vertices.iter().any(|q| (q - p).norm() < 1e-12) {
                    vertices.push(*p);
                }
            }
            triangles.push(Triangle {
                v,
                normal: n.normalize(),
            });
        }
        let corner_slack = triangles
            .iter()
            .map(|t| t.v[0].norm() - t.normal.dot(&t.v[0]))
            .fold(0.0, f64::max);
        let local_box = Aabb::from_points(&vertices);
        let min_offset = triangles
            .iter()
            .map(|t| t.normal.dot(&t.v[0]))
            .fold(f64::INFINITY, f64::min);
        let axis_aligned = triangles
            .iter()
            .all(|t| t.normal.iter().filter(|c| c.abs() > 1e-12).count() == 1);
        let m = Self {
            triangles,
            vertices,
            corner_slack,
            local_box,
            min_offset,
            axis_aligned,
        };
        m.validate()?;
        Ok(m)
    }

    /// Axis-aligned box centred on the origin, 12 triangles.
    pub fn from_box(half: Vector3<f64>) -> Self {
        let c = |sx: f64, sy: f64, sz: f64| Vector3::new(sx * half.x, sy * half.y, sz * half.z);
        let mut tris = Vec::with_capacity(12);
        for axis in 0..3 {
            for s in [-1.0, 1.0] {
                let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                let corner = |a: f64, b: f64| {
                    let mut k = [0.0; 3];
                    k[axis] = s;
                    k[u] = a;
                    k[w] = b;
                    c(k[0], k[1], k[2])
                };
                let (p00, p10, p11, p01) = (corner(-1., -1.), corner(1., -1.), corner(1., 1.), corner(-1., 1.));
                if s > 0.0 {
                    tris.push([p00, p10, p11]);
                    tris.push([p00, p11, p01]);
                } else {
                    tris.push([p00, p11, p10]);
                    tris.push([p00, p01, p11]);
                }
            }
        }
        Self::from_triangles(tris).expect("box mesh is valid")
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    /// Closed (every directed edge has its reverse), convex, with outward
    /// normals and the origin strictly inside.
    pub fn validate(&self) -> Result<()> {
        if self.triangles.len() < 4 {
            return Err(Error::InvalidInput("mesh needs at least 4 triangles".into()));
        }
        let key = |p: &Vector3<f64>| self.vertices.iter().position(|q| (q - p).norm() < 1e-12).unwrap();
        let mut edges = Vec::new();
        for t in &self.triangles {
            for k in 0..3 {
                edges.push((key(&t.v[k]), key(&t.v[(k + 1) % 3])));
            }
        }
        for &(a, b) in &edges {
            if !edges.contains(&(b, a)) {
                return Err(Error::InvalidInput("mesh is not closed".into()));
            }
        }
        let scale = self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for t in &self.triangles {
            let off = t.normal.dot(&t.v[0]);
            if off <= 0.0 {
                return Err(Error::InvalidInput("normals must point away from the centre".into()));
            }
            if self.vertices.iter().any(|v| t.normal.dot(v) > off + 1e-9 * scale) {
                return Err(Error::InvalidInput("mesh is not convex".into()));
            }
        }
        Ok(())
    }

    pub fn aabb(&self, pose: &Pose6D) -> Aabb {
        let mut b = Aabb::empty();
        for v in &self.vertices {
            b.grow(&pose.transform_point(v));
        }
        b
    }

    /// World box holding every point whose depth against this mesh can
    /// exceed `tol`: the faces pushed out by `max(−tol, 0)` plus, with
    /// corner-distance offsets, the corner slack.
    pub fn collision_bounds(&self, pose: &Pose6D, tol: f64, exact_plane_offset: bool) -> Aabb {
        let slack = if exact_plane_offset { 0.0 } else { self.corner_slack };
        let grow = slack + (-tol).max(0.0);
        let local = if self.axis_aligned {
            self.local_box.inflated(grow)
        } else {
            // Each face offset o becomes at most o·(1 + grow/min_offset),
            // so the grown solid is the mesh scaled about its centre.
            let s = 1.0 + grow / self.min_offset;
            Aabb {
                min: self.local_box.min * s,
                max: self.local_box.max * s,
            }
        };
        local.transformed(pose)
    }

    /// Exact distance from a mesh-frame point to the solid (0 inside).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        if self.triangles.iter().all(|t| t.normal.dot(&(p - t.v[0])) <= 0.0) {
            return 0.0;
        }
        self.triangles
            .iter()
            .map(|t| point_triangle_distance(p, &t.v))
            .fold(f64::INFINITY, f64::min)
    }
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

fn point_triangle_distance(p: &Vector3<f64>, v: &[Vector3<f64>; 3]) -> f64 {
    let n = (v[1] - v[0]).cross(&(v[2] - v[0])).normalize();
    let h = n.dot(&(p - v[0]));
    let proj = p - n * h;
    let inside = (0..3).all(|k| n.dot(&(v[(k + 1) % 3] - v[k]).cross(&(proj - v[k]))) >= 0.0);
    if inside {
        return h.abs();
    }
    (0..3)
        .map(|k| point_segment_distance(p, &v[k], &v[(k + 1) % 3]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClearanceParams {
    /// |A|, the number of cloud points averaged per triangle.
    pub n_nearest: usize,
    /// Use nᵀv₁ as the face offset instead of the corner distance ‖v₁‖.
    pub exact_plane_offset: bool,
    pub fast_reject: bool,
    /// AABB inflation for the fast-reject test (the tactile sensing range).
    pub d_max: f64,
}

impl Default for ClearanceParams {
    fn default() -> Self {
        Self {
            n_nearest: 8,
            exact_plane_offset: false,
            fast_reject: true,
            d_max: 0.05,
        }
    }
}

pub const DEFAULT_COLLISION_TOL: f64 = 0.002;

#[derive(Clone, Debug, PartialEq)]
pub struct ClearanceResult {
    /// Min over triangles of the mean depth; negative when A lies outside.
    pub d_signed: f64,
    /// Separation: |d_signed| when negative, else 0. +∞ when fast-rejected.
    pub d_obs: f64,
    /// A, in the mesh frame.
    pub nearest_points: Vec<Vector3<f64>>,
    pub triangle_index: Option<usize>,
}

impl ClearanceResult {
    fn rejected() -> Self {
        Self {
            d_signed: f64::NEG_INFINITY,
            d_obs: f64::INFINITY,
            nearest_points: Vec::new(),
            triangle_index: None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        self.triangle_index.is_none()
    }
}

/// Clearance of `cloud` to a convex link bound placed at `mesh_pose` (the
/// mesh centre frame, whose origin selects A).
pub fn link_clearance(
    mesh: &ConvexMesh,
    mesh_pose: &Pose6D,
    cloud: &PointCloudModel,
    params: &ClearanceParams,
) -> Result<ClearanceResult> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if params.n_nearest == 0 {
        return Err(Error::InvalidInput("n_nearest must be at least 1".into()));
    }
    if params.fast_reject {
        let slack = if params.exact_plane_offset { 0.0 } else { mesh.corner_slack };
        let link_box = mesh.aabb(mesh_pose);
        if !cloud.aabb().inflated(params.d_max + slack).intersects(&link_box) {
            return Ok(ClearanceResult::rejected());
        }
    }
    // Mesh frame -> cloud local frame, and back for the selected points.
    let to_local = cloud.frame().inverse().compose(mesh_pose);
    let to_mesh = to_local.inverse();
    let nearest = cloud.nearest_local(&to_local.position, params.n_nearest);
    let a: Vec<Vector3<f64>> = nearest
        .iter()
        .map(|&(i, _)| to_mesh.transform_point(&cloud.local_points()[i].position))
        .collect();
    let inv = 1.0 / a.len() as f64;
    let mean_a = a.iter().sum::<Vector3<f64>>() * inv;
    let mut best = (f64::INFINITY, 0);
    for (i, t) in mesh.triangles().iter().enumerate() {
        let off = if params.exact_plane_offset {
            t.normal.dot(&t.v[0])
        } else {
            t.v[0].norm()
        };
        // mean(off − nᵀa) = off − nᵀ mean(a)
        let d = off - t.normal.dot(&mean_a);
        if d < best.0 {
            best = (d, i);
        }
    }
    let d_signed = best.0;
    Ok(ClearanceResult {
        d_signed,
        d_obs: if d_signed < 0.0 { -d_signed } else { 0.0 },
        nearest_points: a,
        triangle_index: Some(best.1),
    })
}

/// World pose of a link's mesh centre.
pub fn mesh_pose(r: &RobotModel, link: usize, link_poses: &[Pose6D]) -> Option<Pose6D> {
    r.links[link].mesh.as_ref().map(|(off, _)| link_poses[link].compose(off))
}

/// Clearance of every meshed link (None for links without a mesh).
pub fn link_clearances(
    r: &RobotModel,
    link_poses: &[Pose6D],
    cloud: &PointCloudModel,
    params: &ClearanceParams,
    hand_only: bool,
) -> Result<Vec<Option<ClearanceResult>>> {
    r.links
        .iter()
        .enumerate()
        .map(|(i, l)| match &l.mesh {
            Some((off, mesh)) if !hand_only || l.is_hand() => {
                link_clearance(mesh, &link_poses[i].compose(off), cloud, params).map(Some)
            }
            _ => Ok(None),
        })
        .collect()
}

/// True iff some link has d_signed > tol.
pub fn config_in_collision(
    r: &RobotModel,
    q: &JointConfig,
    cloud: &PointCloudModel,
    params: &ClearanceParams,
    tol: f64,
) -> Result<bool> {
    let poses = r.fk_links(q)?;
    poses_in_collision(r, &poses, cloud, params, tol)
}

pub fn poses_in_collision(
    r: &RobotModel,
    link_poses: &[Pose6D],
    cloud: &PointCloudModel,
    params: &ClearanceParams,
    tol: f64,
) -> Result<bool> {
    let cloud_box = cloud.aabb();
    // The sensing-range reject inside link_clearance is not a collision
    // bound; the exact one below replaces it.
    let exact = ClearanceParams {
        fast_reject: false,
        ..params.clone()
    };
    for (i, l) in r.links.iter().enumerate() {
        if let Some((off, mesh)) = &l.mesh {
            let pose = link_poses[i].compose(off);
            // The mean of A lies in the cloud's box; a state can only
            // collide where that box meets the grown link.
            if params.fast_reject && !cloud_box.intersects(&mesh.collision_bounds(&pose, tol, params.exact_plane_offset)) {
                continue;
            }
            let c = link_clearance(mesh, &pose, cloud, &exact)?;
            if c.d_signed > tol {
                return Ok(true);
            }
        }
    }
    Ok(false)
}
