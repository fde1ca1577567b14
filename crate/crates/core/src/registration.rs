//! Surflet-pair registration: aligns a model cloud onto a query cloud by
//! matching sampled point-pair features, voting over the implied rigid
//! transforms and verifying the strongest clusters by alignment residual.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{OrientedPoint, PointCloudModel};
use crate::error::{Error, Result};
use crate::se3::Pose6D;
use crate::{derive_seed, rng_from_seed};

/// Distance and angles describing a pair of oriented points; invariant under
/// rigid motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfletPairFeature {
    pub d: f64,
    /// angle(n1, u)
    pub alpha: f64,
    /// angle(n2, u)
    pub beta: f64,
    /// angle(n1, n2)
    pub gamma: f64,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form keeps precision near 0 and π.
    a.cross(b).norm().atan2(a.dot(b))
}

impl SurfletPairFeature {
    pub fn compute(a: &OrientedPoint, b: &OrientedPoint) -> Option<Self> {
        let diff = b.position - a.position;
        let d = diff.norm();
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let u = diff / d;
        Some(Self {
            d,
            alpha: angle_between(&a.normal, &u),
            beta: angle_between(&b.normal, &u),
            gamma: angle_between(&a.normal, &b.normal),
        })
    }

    fn within(&self, o: &Self, d_tol: f64, a_tol: f64) -> bool {
        (self.d - o.d).abs() <= d_tol
            && (self.alpha - o.alpha).abs() <= a_tol
            && (self.beta - o.beta).abs() <= a_tol
            && (self.gamma - o.gamma).abs() <= a_tol
    }

    fn scaled_distance(&self, o: &Self, d_tol: f64, a_tol: f64) -> f64 {
        let dd = (self.d - o.d) / d_tol;
        let da = (self.alpha - o.alpha) / a_tol;
        let db = (self.beta - o.beta) / a_tol;
        let dg = (self.gamma - o.gamma) / a_tol;
        dd * dd + da * da + db * db + dg * dg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPose {
    pub pose: Pose6D,
    /// Inlier fraction in [0, 1].
    pub score: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    /// Query-side features sampled per fit.
    pub n_features: usize,
    /// Model-side features as a multiple of `n_features`.
    pub model_feature_factor: usize,
    /// Pairs closer than this fraction of the cloud's bounding-box diagonal
    /// are resampled; short pairs give poorly conditioned frames.
    pub min_pair_fraction: f64,
    pub d_tol: f64,
    pub angle_tol: f64,
    /// Model matches kept per query feature (nearest first).
    pub matches_per_feature: usize,
    pub cluster_pos: f64,
    pub cluster_rot: f64,
    /// Densest clusters verified by alignment residual.
    pub clusters_verified: usize,
    /// Leading clusters refined before the final choice.
    pub refine_clusters: usize,
    /// Candidates per refined cluster compared by residual; 0 keeps the
    /// cluster means.
    pub refine_candidates: usize,
    pub inlier_radius: f64,
    /// Model points used for scoring (evenly strided).
    pub score_points: usize,
    /// When set, candidates tilting the model's +z axis further than this
    /// from world +z are discarded (objects resting upright on a table).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upright_tolerance: Option<f64>,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            n_features: 1000,
            model_feature_factor: 12,
            min_pair_fraction: 0.15,
            d_tol: 0.005,
            angle_tol: 10f64.to_radians(),
            matches_per_feature: 8,
            cluster_pos: 0.02,
            cluster_rot: 10f64.to_radians(),
            clusters_verified: 60,
            refine_clusters: 3,
            refine_candidates: 100,
            inlier_radius: 0.01,
            score_points: 600,
            upright_tolerance: None,
        }
    }
}

/// Samples `n_pairs` features from uniformly drawn distinct point pairs.
/// Features are computed on world-frame points.
pub fn extract_features(
    cloud: &PointCloudModel,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<(SurfletPairFeature, (usize, usize))>> {
    sample_features(cloud, n_pairs, 0.0, seed)
}

fn sample_features(
    cloud: &PointCloudModel,
    n_pairs: usize,
    min_d: f64,
    seed: u64,
) -> Result<Vec<(SurfletPairFeature, (usize, usize))>> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n_pairs);
    let mut attempts = 0usize;
    while out.len() < n_pairs {
        attempts += 1;
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (cloud.point(i), cloud.point(j));
        let relax = attempts > 50 * n_pairs.max(1);
        match SurfletPairFeature::compute(&a, &b) {
            Some(f) if f.d >= min_d || relax => out.push((f, (i, j))),
            _ => {}
        }
    }
    Ok(out)
}

/// Frame attached to an oriented pair: origin at the first point, x along its
/// normal, y along the pair direction projected off the normal.
fn pair_frame(a: &OrientedPoint, b: &OrientedPoint) -> Option<Pose6D> {
    let x = a.normal;
    let u = b.position - a.position;
    let y = u - x * x.dot(&u);
    let yn = y.norm();
    if yn < 1e-9 * u.norm().max(1e-12) {
        return None;
    }
    let y = y / yn;
    let z = x.cross(&y);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Some(Pose6D::new(a.position, UnitQuaternion::from_rotation_matrix(&rot)))
}

fn close(a: &Pose6D, b: &Pose6D, pos: f64, rot: f64) -> bool {
    (a.position - b.position).norm_squared() <= pos * pos && a.angle_to(b) <= rot
}

fn mean_pose(poses: &[Pose6D]) -> Pose6D {
    let p = poses.iter().map(|x| x.position).sum::<Vector3<f64>>() / poses.len() as f64;
    let q0 = poses[0].orientation.into_inner();
    let mut acc = nalgebra::Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for x in poses {
        let q = x.orientation.into_inner();
        acc += if q.dot(&q0) < 0.0 { -q } else { q };
    }
    Pose6D::new(p, UnitQuaternion::from_quaternion(acc))
}

/// Fraction of (strided) model points lying within `radius` of the query
/// after applying the world-frame correction `xi`.
pub fn alignment_score(
    model: &PointCloudModel,
    query: &PointCloudModel,
    xi: &Pose6D,
    radius: f64,
    max_points: usize,
) -> f64 {
    let stride = (model.len() / max_points.max(1)).max(1);
    // model local -> world -> corrected -> query local
    let to_query = query.frame().inverse().compose(&xi.compose(model.frame()));
    let mut hits = 0usize;
    let mut total = 0usize;
    for p in model.local_points().iter().step_by(stride) {
        total += 1;
        let q = to_query.transform_point(&p.position);
        if query
            .nearest_local(&q, 1)
            .first()
            .is_some_and(|&(_, d2)| d2 <= radius * radius)
        {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Mean squared nearest-query distance of the strided model points under
/// `xi`, each term capped at `radius²`.
fn alignment_residual(model: &PointCloudModel, query: &PointCloudModel, xi: &Pose6D, radius: f64, max_points: usize) -> f64 {
    let stride = (model.len() / max_points.max(1)).max(1);
    let to_query = query.frame().inverse().compose(&xi.compose(model.frame()));
    let cap = radius * radius;
    let mut acc = 0.0;
    let mut total = 0usize;
    for p in model.local_points().iter().step_by(stride) {
        total += 1;
        let q = to_query.transform_point(&p.position);
        acc += query.nearest_local(&q, 1).first().map_or(cap, |&(_, d2)| d2.min(cap));
    }
    acc / total as f64
}

/// Estimates the world-frame correction ξ such that `ξ · model` best aligns
/// with `query`.
pub fn fit_pose(
    model: &PointCloudModel,
    query: &PointCloudModel,
    params: &RegistrationParams,
    seed: u64,
) -> Result<ScoredPose> {
    if model.len() < 2 || query.len() < 2 {
        return Err(Error::InvalidInput("clouds need at least two points".into()));
    }
    let diag = |c: &PointCloudModel| {
        let b = c.aabb();
        (b.max - b.min).norm()
    };
    let min_d = params.min_pair_fraction * diag(query).min(diag(model));
    let mut model_feats = sample_features(
        model,
        params.n_features * params.model_feature_factor.max(1),
        min_d,
        derive_seed(seed, 1),
    )?;
    let query_feats = sample_features(query, params.n_features, min_d, derive_seed(seed, 2))?;
    model_feats.sort_by(|a, b| a.0.d.total_cmp(&b.0.d));

    let mut candidates = Vec::new();
    let mut matches: Vec<(f64, usize)> = Vec::new();
    for (qf, (qi, qj)) in &query_feats {
        let lo = model_feats.partition_point(|m| m.0.d < qf.d - params.d_tol);
        matches.clear();
        for (k, (mf, _)) in model_feats[lo..].iter().enumerate() {
            if mf.d > qf.d + params.d_tol {
                break;
            }
            if qf.within(mf, params.d_tol, params.angle_tol) {
                matches.push((qf.scaled_distance(mf, params.d_tol, params.angle_tol), lo + k));
            }
        }
        matches.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (qa, qb) = (query.point(*qi), query.point(*qj));
        let Some(fq) = pair_frame(&qa, &qb) else { continue };
        for &(_, mi) in matches.iter().take(params.matches_per_feature.max(1)) {
            let (i, j) = model_feats[mi].1;
            if let Some(fm) = pair_frame(&model.point(i), &model.point(j)) {
                candidates.push(fq.compose(&fm.inverse()));
            }
        }
    }
    if let Some(tol) = params.upright_tolerance {
        let up = model.frame().transform_vector(&Vector3::z());
        candidates.retain(|c| c.transform_vector(&up).z >= tol.cos());
    }
    if candidates.is_empty() {
        return Ok(ScoredPose {
            pose: Pose6D::identity(),
            score: 0.0,
            valid: false,
        });
    }

    // Neighbour counts in SE(3); greedy extraction of the densest clusters.
    let n = candidates.len();
    let mut counts = vec![0usize; n];
    for a in 0..n {
        for b in (a + 1)..n {
            if close(&candidates[a], &candidates[b], params.cluster_pos, params.cluster_rot) {
                counts[a] += 1;
                counts[b] += 1;
            }
        }
    }
    let residual = |xi: &Pose6D| alignment_residual(model, query, xi, params.inlier_radius, params.score_points);
    let mut taken = vec![false; n];
    let mut clusters: Vec<(Pose6D, f64)> = Vec::new();
    for _ in 0..params.clusters_verified.max(1) {
        let Some(seed_idx) = (0..n)
            .filter(|&i| !taken[i])
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        else {
            break;
        };
        let members: Vec<usize> = (0..n)
            .filter(|&i| {
                !taken[i] && close(&candidates[i], &candidates[seed_idx], params.cluster_pos, params.cluster_rot)
            })
            .collect();
        let mut centre = mean_pose(&members.iter().map(|&i| candidates[i]).collect::<Vec<_>>());
        // One mean-shift step around the cluster mean.
        let around: Vec<Pose6D> = (0..n)
            .filter(|&i| close(&candidates[i], &centre, params.cluster_pos, params.cluster_rot))
            .map(|i| candidates[i])
            .collect();
        if !around.is_empty() {
            centre = mean_pose(&around);
        }
        for &i in &members {
            taken[i] = true;
        }
        clusters.push((centre, residual(&centre)));
    }
    // Stable: equal residuals keep vote order.
    clusters.sort_by(|a, b| a.1.total_cmp(&b.1));
    // The inlier fraction saturates near the optimum, so the leading clusters
    // are refined to their best member by truncated residual before the final
    // comparison.
    let mut best = clusters[0];
    for &(centre, r0) in clusters.iter().take(params.refine_clusters.max(1)) {
        let mut local = (centre, r0);
        if params.refine_candidates > 0 {
            let near: Vec<Pose6D> = candidates
                .iter()
                .filter(|c| close(c, &centre, params.cluster_pos, params.cluster_rot))
                .copied()
                .collect();
            let stride = (near.len() / params.refine_candidates).max(1);
            for c in near.iter().step_by(stride) {
                let r = residual(c);
                if r < local.1 {
                    local = (*c, r);
                }
            }
        }
        if local.1 < best.1 {
            best = local;
        }
    }
    Ok(ScoredPose {
        pose: best.0,
        score: alignment_score(model, query, &best.0, params.inlier_radius, params.score_points),
        valid: true,
    })
}

/// Runs `n` independent fits and returns the object's world poses
/// `y_j = ξ_j · frame(model)` weighted by alignment score.
pub fn build_initial_belief(
    model: &PointCloudModel,
    query: &PointCloudModel,
    n: usize,
    params: &RegistrationParams,
    seed: u64,
) -> Result<Vec<ScoredPose>> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let fit = fit_pose(model, query, params, derive_seed(seed, 1000 + j as u64))?;
        out.push(ScoredPose {
            pose: fit.pose.compose(model.frame()),
            ..fit
        });
    }
    if out.iter().all(|s| !s.valid || s.score <= 0.0) {
        return Err(Error::Registration("every fit was invalid".into()));
    }
    Ok(out)
}
