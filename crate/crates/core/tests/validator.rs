mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmplan::bernstein::objective_hessian;
use swarmplan::validate::{flight_distance, objective_cost};
use swarmplan::{PiecewiseBezier, Point3};

fn random_trajectory(rng: &mut ChaCha8Rng, segments: usize) -> PiecewiseBezier {
    let knots: Vec<f64> = (0..=segments).map(|i| 0.7 * i as f64).collect();
    let pts = (0..segments).map(|_| (0..6).map(|_| common::random_point(rng, 2.0)).collect()).collect();
    PiecewiseBezier::from_control_points(0, pts, &knots).unwrap()
}

#[test]
fn objective_cost_matches_hessian_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let traj = random_trajectory(&mut rng, 3);
        let mut energy = 0.0;
        for seg in traj.segments() {
            let q = objective_hessian(5, 3, &[seg.t_start(), seg.t_end()]).unwrap();
            for a in 0..3 {
                energy += q.quad_form(&seg.control_points().iter().map(|p| p[a]).collect::<Vec<_>>());
            }
        }
        let cost = objective_cost(&traj, 3);
        assert!((cost - energy).abs() <= 1e-6 * energy, "{cost} vs {energy}");
    }
}

/// Arc length of a quarter-circle-like curve, extrapolated from two
/// Simpson resolutions.
#[test]
fn flight_distance_matches_extrapolated_arc_length() {
    let k = 0.5523;
    let cps = vec![
        Point3::new(1.0, 0.0, 1.0),
        Point3::new(1.0, 0.6 * k, 1.0),
        Point3::new(1.0, k, 1.0),
        Point3::new(k, 1.0, 1.0),
        Point3::new(0.6 * k, 1.0, 1.0),
        Point3::new(0.0, 1.0, 1.0),
    ];
    let traj = PiecewiseBezier::from_control_points(0, vec![cps.clone()], &[0.0, 2.0]).unwrap();
    let coefs: Vec<Vec<f64>> = (0..3).map(|a| common::power_coefficients(&cps.iter().map(|p| p[a]).collect::<Vec<_>>())).collect();
    let speed = |tau: f64| coefs.iter().map(|c| common::power_derivative(c, 1, tau, 1.0).powi(2)).sum::<f64>().sqrt();
    let coarse = common::simpson(speed, 0.0, 1.0, 200);
    let fine = common::simpson(speed, 0.0, 1.0, 400);
    let reference = fine + (fine - coarse) / 15.0;
    let d = flight_distance(&traj);
    assert!((d - reference).abs() <= 1e-3 * reference, "{d} vs {reference}");
}
