//! Oriented point clouds: nearest-neighbour queries, bounding boxes, view
//! masking, normal estimation and PLY/CSV I/O.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::se3::Pose6D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl OrientedPoint {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { position, normal }
    }

    fn transformed(&self, pose: &Pose6D) -> Self {
        Self {
            position: pose.transform_point(&self.position),
            normal: pose.transform_vector(&self.normal),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vector3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }

    /// Axis-aligned box enclosing this box after a rigid transform.
    pub fn transformed(&self, pose: &Pose6D) -> Self {
        if self.min.x > self.max.x {
            return *self;
        }
        let c = pose.transform_point(&self.center());
        // Padded so rounding never leaves a transformed corner outside.
        let h = (pose.orientation.to_rotation_matrix().matrix().abs() * ((self.max - self.min) * 0.5)).add_scalar(1e-12);
        Self { min: c - h, max: c + h }
    }
}

/// An oriented point cloud stored in its own frame and placed in the world
/// by `frame`. Re-placing the cloud is O(1): points and index are shared.
#[derive(Clone, Debug)]
pub struct PointCloudModel {
    points: Arc<Vec<OrientedPoint>>,
    index: Arc<KdTree>,
    local_aabb: Aabb,
    world_aabb: Aabb,
    frame: Pose6D,
}

impl PointCloudModel {
    /// Builds a cloud from points given in the cloud's local frame.
    pub fn new(points: Vec<OrientedPoint>, frame: Pose6D) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut points = points;
        for p in points.iter_mut() {
            let n = p.normal.norm();
            if !n.is_finite() || n < 1e-9 || !p.position.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("degenerate point {p:?}")));
            }
            if (n - 1.0).abs() > 1e-9 {
                p.normal /= n;
            }
        }
        let positions: Vec<_> = points.iter().map(|p| p.position).collect();
        let local_aabb = Aabb::from_points(&positions);
        Ok(Self {
            index: Arc::new(KdTree::build(&positions)),
            points: Arc::new(points),
            local_aabb,
            world_aabb: local_aabb.transformed(&frame),
            frame,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame(&self) -> &Pose6D {
        &self.frame
    }

    /// Points in the cloud's own frame.
    pub fn local_points(&self) -> &[OrientedPoint] {
        &self.points
    }

    pub fn local_aabb(&self) -> &Aabb {
        &self.local_aabb
    }

    pub fn point(&self, i: usize) -> OrientedPoint {
        self.points[i].transformed(&self.frame)
    }

    pub fn world_points(&self) -> Vec<OrientedPoint> {
        self.points.iter().map(|p| p.transformed(&self.frame)).collect()
    }

    /// The same cloud placed at a different frame.
    pub fn with_frame(&self, frame: Pose6D) -> Self {
        Self {
            frame,
            world_aabb: self.local_aabb.transformed(&frame),
            ..self.clone()
        }
    }

    /// The cloud moved rigidly by `t` (world-frame transform).
    pub fn transformed(&self, t: &Pose6D) -> Self {
        self.with_frame(t.compose(&self.frame))
    }

    /// World-frame bounding box; contains every point.
    pub fn aabb(&self) -> Aabb {
        self.world_aabb
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let c = self.points.iter().map(|p| p.position).sum::<Vector3<f64>>() / self.len() as f64;
        self.frame.transform_point(&c)
    }

    /// The `n` closest points to the world point `q`, ascending by distance.
    pub fn nearest(&self, q: &Vector3<f64>, n: usize) -> Result<Vec<(OrientedPoint, f64)>> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        let local = self.frame.inverse().transform_point(q);
        Ok(self
            .index
            .nearest(&local, n)
            .into_iter()
            .map(|(i, d2)| (self.points[i].transformed(&self.frame), d2.sqrt()))
            .collect())
    }

    /// Indices of the `n` closest points to a point given in the cloud's
    /// local frame, with squared distances.
    pub fn nearest_local(&self, local_q: &Vector3<f64>, n: usize) -> Vec<(usize, f64)> {
        self.index.nearest(local_q, n)
    }

    pub fn within_local(&self, local_q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.index.within(local_q, radius)
    }

    /// A cloud made of the selected points, in the same frame.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices.iter().map(|&i| self.points[i]).collect();
        Self::new(pts, self.frame)
    }

    /// Uniform random subsample of at most `n` points.
    pub fn downsample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut idx = sample(rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Fraction of this cloud's points lying within `radius` of `other`.
    pub fn coverage_of(&self, other: &PointCloudModel, radius: f64) -> f64 {
        let to_other = other.frame.inverse().compose(&self.frame);
        let hits = self
            .points
            .iter()
            .filter(|p| {
                let q = to_other.transform_point(&p.position);
                other
                    .index
                    .nearest(&q, 1)
                    .first()
                    .is_some_and(|&(_, d2)| d2 <= radius * radius)
            })
            .count();
        hits as f64 / self.len() as f64
    }

    pub fn read_ply(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(parse_ply(&text)?, Pose6D::identity())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(parse_csv(&text)?, Pose6D::identity())
    }

    /// Reads `.ply`, falling back to CSV for any other extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => Self::read_ply(path),
            _ => Self::read_csv(path),
        }
    }

    /// Writes world-frame points as ASCII PLY.
    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ply_string())?;
        Ok(())
    }

    pub fn to_ply_string(&self) -> String {
        let pts = self.world_points();
        let mut s = String::with_capacity(pts.len() * 64);
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", pts.len());
        for p in ["x", "y", "z", "nx", "ny", "nz"] {
            let _ = writeln!(s, "property double {p}");
        }
        s.push_str("end_header\n");
        for p in &pts {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z
            );
        }
        s
    }
}

fn parse_row(fields: &[&str], line_no: usize) -> Result<OrientedPoint> {
    if fields.len() < 6 {
        return Err(Error::Parse(format!(
            "line {line_no}: expected 6 values, got {}",
            fields.len()
        )));
    }
    let mut v = [0.0; 6];
    for (k, f) in fields.iter().take(6).enumerate() {
        v[k] = f
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {line_no}: bad number {f:?}")))?;
    }
    Ok(OrientedPoint::new(
        Vector3::new(v[0], v[1], v[2]),
        Vector3::new(v[3], v[4], v[5]),
    ))
}

pub fn parse_ply(text: &str) -> Result<Vec<OrientedPoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::Parse("missing ply magic".into())),
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut ascii = false;
    for (_, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ..] => ascii = true,
            ["format", ..] => return Err(Error::Parse("only ASCII PLY is supported".into())),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Parse("bad vertex count".into()))?)
            }
            ["property", _, name] if count.is_some() => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::Parse("missing format line".into()));
    }
    let count = count.ok_or_else(|| Error::Parse("missing vertex element".into()))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parse(format!("missing property {name}")))
    };
    let cols = [col("x")?, col("y")?, col("z")?, col("nx")?, col("ny")?, col("nz")?];
    let mut out = Vec::with_capacity(count);
    for (no, line) in lines.take(count) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < props.len() {
            return Err(Error::Parse(format!("line {}: short row", no + 1)));
        }
        let picked: Vec<&str> = cols.iter().map(|&c| toks[c]).collect();
        out.push(parse_row(&picked, no + 1)?);
    }
    if out.len() != count {
        return Err(Error::Parse(format!("expected {count} vertices, found {}", out.len())));
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<Vec<OrientedPoint>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if no == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue; // header
        }
        out.push(parse_row(&fields, no + 1)?);
    }
    Ok(out)
}

/// Selected azimuthal sectors out of `view_count` equal wedges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewMask {
    pub view_count: usize,
    pub selected: BTreeSet<usize>,
}

impl ViewMask {
    pub fn new(view_count: usize, selected: impl IntoIterator<Item = usize>) -> Result<Self> {
        let m = Self {
            view_count,
            selected: selected.into_iter().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn all(view_count: usize) -> Self {
        Self {
            view_count,
            selected: (0..view_count).collect(),
        }
    }

    /// `n_views` distinct sectors chosen uniformly at random.
    pub fn random<R: Rng + ?Sized>(view_count: usize, n_views: usize, rng: &mut R) -> Result<Self> {
        if n_views == 0 || n_views > view_count {
            return Err(Error::InvalidInput(format!(
                "cannot select {n_views} of {view_count} views"
            )));
        }
        Self::new(view_count, sample(rng, view_count, n_views).into_iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_count == 0 || self.selected.is_empty() {
            return Err(Error::InvalidInput("view mask selects nothing".into()));
        }
        if let Some(&s) = self.selected.iter().find(|&&s| s >= self.view_count) {
            return Err(Error::InvalidInput(format!(
                "sector {s} outside 0..{}",
                self.view_count
            )));
        }
        Ok(())
    }

    /// Sector containing a world point, by azimuth about the vertical axis
    /// through `center`.
    pub fn sector_of(&self, p: &Vector3<f64>, center: &Vector3<f64>) -> usize {
        let d = p - center;
        let az = d.y.atan2(d.x).rem_euclid(std::f64::consts::TAU);
        let s = (az / std::f64::consts::TAU * self.view_count as f64) as usize;
        s.min(self.view_count - 1)
    }
}

pub fn apply_view_mask(
    cloud: &PointCloudModel,
    mask: &ViewMask,
    center: &Vector3<f64>,
) -> Result<PointCloudModel> {
    mask.validate()?;
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| mask.selected.contains(&mask.sector_of(&cloud.point(i).position, center)))
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput("view mask removes every point".into()));
    }
    if keep.len() == cloud.len() {
        return Ok(cloud.clone());
    }
    cloud.subset(&keep)
}

fn plane_normal(pts: &[Vector3<f64>]) -> (Vector3<f64>, [f64; 3]) {
    let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = eig.eigenvectors.column(order[0]).into_owned();
    (
        n.normalize(),
        [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ],
    )
}

/// Per-point normals from a plane fit over the `k` nearest neighbours,
/// oriented away from the cloud centroid.
pub fn estimate_normals(points: &[Vector3<f64>], k: usize) -> Result<PointCloudModel> {
    if k < 2 || points.len() < k + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least k+1 = {} points and k >= 2",
            k + 1
        )));
    }
    let tree = KdTree::build(points);
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let (global, _) = plane_normal(points);
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let hood: Vec<Vector3<f64>> = tree.nearest(p, k + 1).into_iter().map(|(i, _)| points[i]).collect();
        let (mut n, ev) = plane_normal(&hood);
        // Collinear neighbourhood: the two smallest spreads vanish.
        if ev[1] <= 1e-12 * ev[2].max(1e-300) {
            n = global;
        }
        if n.dot(&(p - centroid)) < 0.0 {
            n = -n;
        }
        out.push(OrientedPoint::new(*p, n));
    }
    PointCloudModel::new(out, Pose6D::identity())
}
