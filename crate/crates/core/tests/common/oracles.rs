//! Brute-force reference implementations and randomized comparison sweeps.
//! Shared by the integration tests and the acceptance report; every oracle
//! here recomputes from raw coordinates rather than calling library math.

#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use beliefgrasp::belief::{kl_discrete, kl_divergence, BeliefState, HypothesisSet, Jitter};
use beliefgrasp::cloud::{OrientedPoint, PointCloudModel};
use beliefgrasp::contact::{link_clearance, ClearanceParams, ConvexMesh};
use beliefgrasp::kinematics::{presets, JointConfig, RobotModel};
use beliefgrasp::planner::{astar, Roadmap};
use beliefgrasp::{Pose6D, SE3Kernel};

/// Outcome of one randomized sweep.
#[derive(Clone, Copy, Debug)]
pub struct Sweep {
    pub instances: usize,
    pub max_err: f64,
    pub failures: usize,
}

impl Sweep {
    fn new() -> Self {
        Sweep {
            instances: 0,
            max_err: 0.0,
            failures: 0,
        }
    }

    fn record(&mut self, err: f64, tol: f64) {
        self.instances += 1;
        if err.is_nan() || err > tol {
            self.failures += 1;
        }
        if !(err <= self.max_err) {
            self.max_err = err;
        }
    }

    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform rotation from a normalized 4D Gaussian.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return UnitQuaternion::new_normalize(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]));
        }
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> Pose6D {
    let p = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
    Pose6D::new(p, random_rotation(rng))
}

/// Rotation matrix from raw quaternion components (w, x, y, z).
pub fn quat_matrix(a: &[f64; 7]) -> Matrix3<f64> {
    let (w, x, y, z) = (a[3], a[4], a[5], a[6]);
    let n = (w * w + x * x + y * y + z * z).sqrt();
    let (w, x, y, z) = (w / n, x / n, y / n, z / n);
    Matrix3::new(
        1. - 2. * (y * y + z * z), 2. * (x * y - w * z), 2. * (x * z + w * y),
        2. * (x * y + w * z), 1. - 2. * (x * x + z * z), 2. * (y * z - w * x),
        2. * (x * z - w * y), 2. * (y * z + w * x), 1. - 2. * (x * x + y * y),
    )
}

pub fn homogeneous(a: &[f64; 7]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&quat_matrix(a));
    m[(0, 3)] = a[0];
    m[(1, 3)] = a[1];
    m[(2, 3)] = a[2];
    m
}

/// Relative rotation angle from the Hamilton product of raw components.
pub fn angle_between(a: &Pose6D, b: &Pose6D) -> f64 {
    let (p, q) = (a.to_array(), b.to_array());
    let (aw, ax, ay, az) = (p[3], -p[4], -p[5], -p[6]);
    let (bw, bx, by, bz) = (q[3], q[4], q[5], q[6]);
    let w = aw * bw - ax * bx - ay * by - az * bz;
    let x = aw * bx + ax * bw + ay * bz - az * by;
    let y = aw * by - ax * bz + ay * bw + az * bx;
    let z = aw * bz + ax * by - ay * bx + az * bw;
    2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
}

fn gauss(d: f64, s: f64) -> f64 {
    (-0.5 * (d / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// Direct weighted sum of separable Gaussians.
pub fn kde_oracle(particles: &[(Pose6D, f64)], k: &SE3Kernel, y: &Pose6D) -> f64 {
    let total: f64 = particles.iter().map(|p| p.1).sum();
    particles
        .iter()
        .map(|(c, w)| {
            let mut v = w / total;
            for i in 0..3 {
                v *= gauss(y.position[i] - c.position[i], k.sigma_pos[i]);
            }
            v * gauss(angle_between(y, c), k.sigma_rot)
        })
        .sum()
}

pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i] / q[i].max(1e-12)).ln();
        }
    }
    s.max(0.0)
}

fn random_dist(rng: &mut ChaCha8Rng, n: usize, zeros: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if zeros && rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn random_kernel(rng: &mut ChaCha8Rng) -> SE3Kernel {
    SE3Kernel::new(
        std::array::from_fn(|_| rng.random_range(0.005..0.05)),
        rng.random_range(0.05..0.5),
    )
    .unwrap()
}

/// Relative error of the belief density on random beliefs and queries.
pub fn kde_sweep(instances: usize, seed: u64, tol: f64) -> Sweep {
    let mut rng = rng(seed);
    let mut s = Sweep::new();
    while s.instances < instances {
        let k = random_kernel(&mut rng);
        let n = rng.random_range(1..=50);
        let centre = random_pose(&mut rng, 0.5);
        let pw: Vec<_> = (0..n)
            .map(|_| {
                let d = random_pose(&mut rng, 0.03);
                let rot = centre.orientation.nlerp(&d.orientation, rng.random_range(0.0..0.3));
                (Pose6D::new(centre.position + d.position, rot), rng.random_range(0.01..1.0))
            })
            .collect();
        let b = BeliefState::new(pw.clone(), k).unwrap();
        for _ in 0..20 {
            let y = Pose6D::new(
                centre.position + Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04)),
                centre.orientation.nlerp(&random_rotation(&mut rng), rng.random_range(0.0..0.2)),
            );
            let want = kde_oracle(&pw, &k, &y);
            let got = b.density(&y);
            let err = if want > 0.0 { (got - want).abs() / want } else { got.abs() };
            s.record(err, tol);
        }
    }
    s
}

/// Discrete KL against the direct sum, and the hypothesis-restricted KL
/// against densities normalized by hand.
pub fn kl_sweep(instances: usize, seed: u64, tol: f64) -> Sweep {
    let mut rng = rng(seed);
    let mut s = Sweep::new();
    let mut i = 0;
    while s.instances < instances {
        i += 1;
        if i % 2 == 0 {
            let n = rng.random_range(2..=8);
            let p = random_dist(&mut rng, n, true);
            let q = random_dist(&mut rng, n, true);
            s.record((kl_discrete(&p, &q).value - kl_oracle(&p, &q)).abs(), tol);
        } else {
            let k = random_kernel(&mut rng);
            let centre = random_pose(&mut rng, 0.5);
            let near = |rng: &mut ChaCha8Rng| {
                let d = random_pose(rng, 0.02);
                let rot = centre.orientation.nlerp(&d.orientation, rng.random_range(0.0..0.15));
                Pose6D::new(centre.position + d.position, rot)
            };
            let mk = |rng: &mut ChaCha8Rng| -> Vec<(Pose6D, f64)> {
                (0..10).map(|_| (near(rng), rng.random_range(0.1..1.0))).collect()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let hyp = HypothesisSet {
                poses: (0..5).map(|_| near(&mut rng)).collect(),
            };
            let dens = |pw: &[(Pose6D, f64)]| hyp.poses.iter().map(|y| kde_oracle(pw, &k, y)).collect::<Vec<_>>();
            let (da, db) = (dens(&a), dens(&b));
            // Direct sums that underflow cannot serve as a reference; redraw.
            if da.iter().chain(&db).any(|x| !(*x > 1e-250)) {
                continue;
            }
            let norm = |v: Vec<f64>| {
                let t: f64 = v.iter().sum();
                v.into_iter().map(|x| x / t).collect::<Vec<_>>()
            };
            let (pa, pb) = (norm(da), norm(db));
            let post = BeliefState::new(a, k).unwrap();
            let pre = BeliefState::new(b, k).unwrap();
            let got = kl_divergence(&post, &pre, &hyp).value;
            s.record((got - kl_oracle(&pa, &pb)).abs(), tol);
        }
    }
    s
}

/// Octahedron with semi-axes `a`, wound outward.
pub fn octahedron(a: [f64; 3]) -> ConvexMesh {
    let mut tris = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let v0 = Vector3::new(sx * a[0], 0.0, 0.0);
                let v1 = Vector3::new(0.0, sy * a[1], 0.0);
                let v2 = Vector3::new(0.0, 0.0, sz * a[2]);
                tris.push(if sx * sy * sz > 0.0 { [v0, v1, v2] } else { [v0, v2, v1] });
            }
        }
    }
    ConvexMesh::from_triangles(tris).unwrap()
}

/// Triangle-averaged depth recomputed from sorted world distances.
pub fn depth_oracle(mesh: &ConvexMesh, mesh_pose: &Pose6D, cloud: &PointCloudModel, n: usize, exact: bool) -> f64 {
    let frame = homogeneous(&cloud.frame().to_array());
    let m = homogeneous(&mesh_pose.to_array());
    let (rm, tm) = (m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned());
    let mut world: Vec<(f64, Vector3<f64>)> = cloud
        .local_points()
        .iter()
        .map(|p| {
            let w = (frame * p.position.push(1.0)).xyz();
            ((w - tm).norm_squared(), w)
        })
        .collect();
    world.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = n.min(world.len());
    let mean: Vector3<f64> = world[..k].iter().map(|(_, w)| rm.transpose() * (w - tm)).sum::<Vector3<f64>>() / k as f64;
    mesh.triangles()
        .iter()
        .map(|t| {
            let off = if exact { t.normal.dot(&t.v[0]) } else { t.v[0].norm() };
            off - t.normal.dot(&mean)
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> PointCloudModel {
    let pts = (0..n)
        .map(|_| {
            OrientedPoint::new(
                Vector3::from_fn(|_, _| rng.random_range(-spread..spread)),
                random_rotation(rng) * Vector3::z(),
            )
        })
        .collect();
    PointCloudModel::new(pts, random_pose(rng, 0.1)).unwrap()
}

/// Signed link depth against the sorted-distance oracle, box and octahedron
/// bounds, both offset conventions.
pub fn depth_sweep(instances: usize, seed: u64, tol: f64) -> Sweep {
    let mut rng = rng(seed);
    let mut s = Sweep::new();
    for i in 0..instances {
        let half: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.005..0.05));
        let mesh = if i % 2 == 0 { ConvexMesh::from_box(Vector3::from(half)) } else { octahedron(half) };
        let n = rng.random_range(10..300);
        let cloud = random_cloud(&mut rng, n, 0.1);
        let pose = random_pose(&mut rng, 0.15);
        let params = ClearanceParams {
            n_nearest: rng.random_range(1..=12),
            exact_plane_offset: i % 4 < 2,
            fast_reject: false,
            d_max: 0.05,
        };
        let got = link_clearance(&mesh, &pose, &cloud, &params).unwrap();
        let want = depth_oracle(&mesh, &pose, &cloud, params.n_nearest, params.exact_plane_offset);
        let obs = if want < 0.0 { -want } else { 0.0 };
        s.record((got.d_signed - want).abs().max((got.d_obs - obs).abs()), tol);
    }
    s
}

/// O(n²) Dijkstra from node 0 to node 1.
pub fn dijkstra(map: &Roadmap, cost: &dyn Fn(usize, usize, f64) -> f64, valid: &dyn Fn(usize, usize) -> bool) -> Option<f64> {
    let n = map.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[0] = 0.0;
    loop {
        let u = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        let Some(u) = u else { break };
        done[u] = true;
        for &(v, d) in &map.neighbors[u] {
            if valid(u, v) {
                dist[v] = dist[v].min(dist[u] + cost(u, v, d));
            }
        }
    }
    dist[1].is_finite().then_some(dist[1])
}

/// Optimal cost from A* (admissible heuristic, blocked edges, per-node
/// discounts) against Dijkstra. Reachability mismatches count as infinite
/// error.
pub fn astar_sweep(instances: usize, seed: u64, tol: f64) -> Sweep {
    let mut rng = rng(seed);
    let mut s = Sweep::new();
    for inst in 0..instances {
        let n = rng.random_range(5..40);
        let dim = rng.random_range(2..7);
        let nodes = (0..n)
            .map(|_| JointConfig::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let map = Roadmap::connect(nodes, 0.0, rng.random_range(3..8));
        let alpha = rng.random_range(0.1..1.0);
        let blocked: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.15)).collect();
        let disc: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let use_disc = inst % 2 == 1;
        // With discounts only the zero heuristic is admissible.
        let beta = if use_disc { 0.0 } else { alpha * rng.random_range(0.0..1.0) };
        let cost = |_: usize, v: usize, d: f64| if use_disc { alpha * disc[v] * d } else { alpha * d };
        let valid = |u: usize, v: usize| !blocked[u.min(v) * n + u.max(v)];
        let goal = map.nodes[1].clone();
        let got = astar(
            &map,
            0,
            1,
            |u, v, d| Ok(cost(u, v, d)),
            |v| Ok(beta * map.nodes[v].distance(&goal)),
            |u, v| Ok(valid(u, v)),
            usize::MAX,
        )
        .unwrap();
        let err = match (got, dijkstra(&map, &cost, &valid)) {
            (Some(g), Some(e)) => {
                let along: f64 = g
                    .path
                    .windows(2)
                    .map(|w| cost(w[0], w[1], map.nodes[w[0]].distance(&map.nodes[w[1]])))
                    .sum();
                let blocked_edge = g.path.windows(2).any(|w| !valid(w[0], w[1]));
                if blocked_edge {
                    f64::INFINITY
                } else {
                    (g.cost - e).abs().max((along - e).abs())
                }
            }
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        s.record(err, tol);
    }
    s
}

/// World matrix of `link` from the description alone: offsets as raw
/// quaternions, joints by Rodrigues' formula.
pub fn fk_oracle(r: &RobotModel, q: &JointConfig, link: usize) -> Matrix4<f64> {
    let desc = r.description();
    let mut chain = vec![link];
    while let Some(p) = &desc.links[*chain.last().unwrap()].parent {
        chain.push(desc.links.iter().position(|l| &l.name == p).unwrap());
    }
    chain.reverse();
    let mut dof_of = Vec::new();
    let mut next = 0;
    for l in &desc.links {
        dof_of.push(l.axis.map(|_| {
            next += 1;
            next - 1
        }));
    }
    let mut m = homogeneous(&desc.base_pose);
    for &i in &chain {
        let l = &desc.links[i];
        m *= homogeneous(&l.offset_pose);
        if let Some(axis) = l.axis {
            let k = Vector3::from(axis).normalize();
            let th = q.0[dof_of[i].unwrap()];
            let kx = Matrix3::new(0., -k.z, k.y, k.z, 0., -k.x, -k.y, k.x, 0.);
            let rot = Matrix3::identity() + kx * th.sin() + kx * kx * (1. - th.cos());
            let mut h = Matrix4::identity();
            h.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
            m *= h;
        }
    }
    m
}

pub fn random_q(r: &RobotModel, rng: &mut ChaCha8Rng) -> JointConfig {
    JointConfig::new(r.joint_limits().iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
}

/// Largest matrix-entry gap between FK and the chain oracle, per config,
/// over both shipped hand presets.
pub fn fk_sweep(instances: usize, seed: u64, tol: f64) -> Sweep {
    let mut rng = rng(seed);
    let robots = [
        RobotModel::from_description(presets::default_12dof()).unwrap(),
        RobotModel::from_description(presets::dexterous_21dof()).unwrap(),
    ];
    let mut s = Sweep::new();
    for i in 0..instances {
        let r = &robots[i % 2];
        let q = random_q(r, &mut rng);
        let poses = r.fk_links(&q).unwrap();
        let err = (0..poses.len())
            .map(|l| (homogeneous(&poses[l].to_array()) - fk_oracle(r, &q, l)).abs().max())
            .fold(0.0, f64::max);
        s.record(err, tol);
    }
    s
}

/// KL ≥ 0 on random pairs, including zero entries on either side.
pub fn kl_nonnegative(instances: usize, seed: u64) -> Sweep {
    let mut rng = rng(seed);
    let mut s = Sweep::new();
    for _ in 0..instances {
        let n = rng.random_range(2..=10);
        let p = random_dist(&mut rng, n, true);
        let q = random_dist(&mut rng, n, true);
        let v = kl_discrete(&p, &q).value;
        s.record(if v >= 0.0 && v.is_finite() { 0.0 } else { f64::INFINITY }, 0.0);
    }
    s
}

/// Fraction of resampled particles within 3σ of the one pose a likelihood
/// vector supports: per position axis and in geodesic angle.
pub fn concentration(belief: &BeliefState, lik: &[f64], explaining: &Pose6D, jitter: Jitter, n_out: usize, seed: u64) -> f64 {
    let out = belief.update(lik, n_out, jitter, seed).unwrap().belief;
    let near = out
        .particles()
        .iter()
        .filter(|p| {
            (0..3).all(|i| (p.pose.position[i] - explaining.position[i]).abs() <= 3.0 * jitter.sigma_pos)
                && angle_between(&p.pose, explaining) <= 3.0 * jitter.sigma_rot
        })
        .count();
    near as f64 / out.len() as f64
}

/// A box with an off-centre block on top; no rotation maps it to itself.
pub fn asymmetric_cloud() -> PointCloudModel {
    let mut pts = Vec::new();
    let mut face = |c: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, n: Vector3<f64>, steps: usize| {
        for i in 0..steps {
            for j in 0..steps {
                let a = (i as f64 + 0.5) / steps as f64 - 0.5;
                let b = (j as f64 + 0.5) / steps as f64 - 0.5;
                pts.push(OrientedPoint::new(c + u * a + v * b, n));
            }
        }
    };
    let mut cuboid = |c: Vector3<f64>, h: Vector3<f64>, steps: usize| {
        for ax in 0..3 {
            let (u, v) = ((ax + 1) % 3, (ax + 2) % 3);
            for s in [-1.0, 1.0] {
                let mut n = Vector3::zeros();
                n[ax] = s;
                let mut du = Vector3::zeros();
                du[u] = 2.0 * h[u];
                let mut dv = Vector3::zeros();
                dv[v] = 2.0 * h[v];
                face(c + n.component_mul(&h), du, dv, n, steps);
            }
        }
    };
    cuboid(Vector3::zeros(), Vector3::new(0.06, 0.04, 0.025), 24);
    cuboid(Vector3::new(0.035, 0.02, 0.04), Vector3::new(0.02, 0.015, 0.015), 10);
    PointCloudModel::new(pts, Pose6D::identity()).unwrap()
}
