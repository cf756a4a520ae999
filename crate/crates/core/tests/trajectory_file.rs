use swarmplan::trajectory_io::{load_trajectories, save_trajectories};
use swarmplan::{PiecewiseBezier, Point3};

#[test]
fn file_round_trip_is_exact() {
    let knots = [0.0, 0.3, 1.1];
    let trajs: Vec<PiecewiseBezier> = (0..3)
        .map(|a| {
            let pts = (0..2)
                .map(|m| (0..6).map(|k| Point3::new(0.1 * a as f64, 1.0 / (1 + m + k) as f64, std::f64::consts::PI * k as f64)).collect())
                .collect();
            PiecewiseBezier::from_control_points(a, pts, &knots).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    save_trajectories(&trajs, &path).unwrap();
    let back = load_trajectories(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in trajs.iter().zip(&back) {
        assert_eq!(a.flat_control_points(), b.flat_control_points());
        assert_eq!(a.knots(), b.knots());
    }
}
