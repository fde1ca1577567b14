#[path = "common/oracles.rs"]
mod oracles;

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::Rng;

use beliefgrasp::belief::{kl_discrete, BeliefState, Jitter};
use beliefgrasp::cloud::{OrientedPoint, PointCloudModel};
use beliefgrasp::kinematics::{presets, RobotModel};
use beliefgrasp::planner::info_reward;
use beliefgrasp::registration::{fit_pose, RegistrationParams};
use beliefgrasp::tactile::{expected_observation, TactileParams};
use beliefgrasp::{Pose6D, SE3Kernel};

use oracles::*;

#[test]
fn kde_density_matches_direct_sum() {
    let s = kde_sweep(1000, 1, 1e-12);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn kl_matches_direct_sum() {
    let s = kl_sweep(1000, 2, 1e-12);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn link_depth_matches_sorted_distance_oracle() {
    let s = depth_sweep(1000, 3, 1e-9);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn astar_matches_dijkstra() {
    let s = astar_sweep(1000, 4, 1e-9);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn fk_matches_matrix_chain() {
    let s = fk_sweep(1000, 5, 1e-9);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn kl_is_never_negative() {
    let s = kl_nonnegative(10_000, 6);
    assert!(s.ok(), "{s:?}");
}

#[test]
fn unique_explanation_concentrates_the_belief() {
    let mut rng = rng(7);
    for t in 0..20 {
        let poses: Vec<_> = (0..100).map(|_| random_pose(&mut rng, 0.2)).collect();
        let b = BeliefState::uniform(poses.clone(), SE3Kernel::default()).unwrap();
        let hit = rng.random_range(0..poses.len());
        let mut lik = vec![0.0; poses.len()];
        lik[hit] = rng.random_range(0.01..1.0);
        let f = concentration(&b, &lik, &poses[hit], Jitter::default(), 500, t);
        assert!(f >= 0.95, "{f}");
    }
}

fn sphere(centre: Vector3<f64>, r: f64, n: usize) -> PointCloudModel {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            let nrm = Vector3::new(rho * a.cos(), rho * a.sin(), z);
            OrientedPoint::new(centre + nrm * r, nrm)
        })
        .collect();
    PointCloudModel::new(pts, Pose6D::identity()).unwrap()
}

#[test]
fn information_reward_bounds_and_formula() {
    let r = RobotModel::from_description(presets::default_12dof()).unwrap();
    let p = TactileParams::default();
    let mut rng = rng(8);
    let mut informative = 0;
    for _ in 0..200 {
        let q = random_q(&r, &mut rng);
        let poses = r.fk_links(&q).unwrap();
        let tip = r.finger_tips[rng.random_range(0..r.finger_tips.len())];
        let k = rng.random_range(2..6);
        let clouds: Vec<_> = (0..k)
            .map(|_| {
                let off = Vector3::from_fn(|_, _| rng.random_range(-0.04..0.04));
                sphere(poses[tip].position + off, 0.02, 200)
            })
            .collect();
        let j = info_reward(&r, &q, &clouds, &p).unwrap();
        assert!(j > 0.0 && j <= 1.0, "{j}");
        let g: Vec<f64> = clouds.iter().map(|c| expected_observation(&r, &q, c, &p).unwrap()).collect();
        let want = g[1..].iter().map(|gi| (-(gi - g[0]).abs()).exp()).sum::<f64>() / (k - 1) as f64;
        assert!((j - want).abs() < 1e-12);
        if j < 1.0 {
            informative += 1;
        }

        // Every hypothesis out of sensing range: no observation, J = 1.
        let far: Vec<_> = (0..k).map(|i| sphere(Vector3::new(5.0 + i as f64, 5.0, 5.0), 0.02, 50)).collect();
        assert_eq!(info_reward(&r, &q, &far, &p).unwrap(), 1.0);
    }
    assert!(informative > 0);
}

#[test]
fn fit_pose_recovers_a_known_transform() {
    let model = asymmetric_cloud();
    let params = RegistrationParams::default();
    assert_eq!(params.n_features, 1000);
    let mut rng = rng(9);
    let runs = 10;
    let mut hits = 0;
    for seed in 0..runs {
        let t = random_pose(&mut rng, 0.1);
        let query = model.transformed(&t);
        let fit = fit_pose(&model, &query, &params, seed).unwrap();
        if fit.pose.translation_distance(&t) <= 0.005 && angle_between(&fit.pose, &t) <= 5f64.to_radians() {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.95 * runs as f64, "{hits}/{runs}");
}

proptest! {
    #[test]
    fn kl_vanishes_on_identical_distributions(w in prop::collection::vec(0.01f64..1.0, 2..10)) {
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        prop_assert!(kl_discrete(&p, &p).value.abs() < 1e-12);
    }

    #[test]
    fn depth_is_invariant_to_a_shared_rigid_motion(seed in 0u64..1000) {
        let mut rng = rng(seed);
        let mesh = octahedron([0.03, 0.02, 0.04]);
        let pts = (0..60)
            .map(|_| OrientedPoint::new(Vector3::from_fn(|_, _| rng.random_range(-0.08..0.08)), Vector3::z()))
            .collect();
        let cloud = PointCloudModel::new(pts, Pose6D::identity()).unwrap();
        let pose = random_pose(&mut rng, 0.05);
        let g = random_pose(&mut rng, 0.3);
        let a = depth_oracle(&mesh, &pose, &cloud, 8, true);
        let b = depth_oracle(&mesh, &g.compose(&pose), &cloud.with_frame(g), 8, true);
        prop_assert!((a - b).abs() < 1e-9);
    }
}
