use beliefgrasp_bench::objects::{make_object, ObjectKind, ObjectParams};
use nalgebra::Vector3;

fn radial(p: &Vector3<f64>) -> f64 {
    p.x.hypot(p.y)
}

/// Midpoints of point pairs from an every-`stride`-th subsample.
fn midpoints(points: &[Vector3<f64>], stride: usize) -> Vec<Vector3<f64>> {
    let s: Vec<_> = points.iter().step_by(stride).collect();
    let mut out = Vec::new();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            out.push((s[i] + s[j]) * 0.5);
        }
    }
    out
}

#[test]
fn jug_handle_encloses_empty_space() {
    let p = ObjectParams::default();
    let cloud = make_object(ObjectKind::Jug, &p).unwrap();
    let pts: Vec<_> = cloud.local_points().iter().map(|q| q.position).collect();
    // A midpoint outside the body cylinder and clear of every surface point
    // by more than the tube radius is in the hull but not in the solid.
    let clear = p.handle_tube + 0.004;
    let hole = midpoints(&pts, 20).into_iter().find(|m| {
        radial(m) > p.radius + 1e-3 && pts.iter().all(|q| (q - m).norm() > clear)
    });
    assert!(hole.is_some(), "every sampled midpoint lies in the solid");
}

#[test]
fn bottle_midpoints_never_leave_its_radius() {
    let p = ObjectParams::default();
    let cloud = make_object(ObjectKind::Bottle, &p).unwrap();
    let pts: Vec<_> = cloud.local_points().iter().map(|q| q.position).collect();
    assert!(pts.iter().all(|q| radial(q) <= p.radius + 1e-9));
    assert!(midpoints(&pts, 20).iter().all(|m| radial(m) <= p.radius + 1e-9));
}

#[test]
fn box_face_density_gives_the_expected_count() {
    // 1 dm² faces at 1e5 points/m² are 1,000 points each.
    let p = ObjectParams {
        size: [0.1, 0.1, 0.1],
        density: 1.0e5,
        ..Default::default()
    };
    let cloud = make_object(ObjectKind::Box, &p).unwrap();
    assert_eq!(cloud.len(), 6000);
    for q in cloud.local_points() {
        assert_eq!(q.normal.iter().filter(|c| c.abs() > 1e-12).count(), 1);
    }
}
