use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rank3::laminate::*;
use rank3::recon::*;

fn boundary_point(beta: f64, t: f64) -> [f64; 3] {
    [beta.cos() * t.cos(), beta.sin() * t.sin(), (2.0 * beta).cos()]
}

proptest! {
    #[test]
    fn boundary_round_trip(beta in 1e-3f64..(FRAC_PI_2 - 1e-3), t in -PI..PI) {
        let b = boundary_point(beta, t);
        prop_assert!(boundary_residual(&b).abs() < 1e-12);
        let r = boundary_to_rank2(&b).unwrap();
        prop_assert!((r.p1 + r.p2 - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&r.p1));
        let m = MomentVector::from_layers(&[(r.p1, r.theta1), (r.p2, r.theta2)]);
        prop_assert!(m.max_abs_diff(&MomentVector::new(b[0], b[1], b[2], 0.0)) <= 1e-7);
    }

    #[test]
    fn rotation_is_a_group_action(m1 in -1.0f64..1.0, m2 in -1.0f64..1.0, m3 in -1.0f64..1.0, m4 in -1.0f64..1.0, g in -3.0f64..3.0) {
        let m = MomentVector::new(m1, m2, m3, m4);
        prop_assert!(m.rotated(g).rotated(-g).max_abs_diff(&m) <= 1e-12);
    }

    #[test]
    fn single_layer_rotation(theta in -PI..PI, gamma in -PI..PI) {
        let m = MomentVector::from_layers(&[(1.0, theta)]).rotated(gamma);
        let expected = MomentVector::from_layers(&[(1.0, theta + gamma)]);
        prop_assert!(m.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn reconstruction_reproduces_layer_moments(
        raw in prop::collection::vec((0.01f64..1.0, -PI..PI), 1..6),
        f in 0.05f64..1.0,
    ) {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let layers: Vec<_> = raw.iter().map(|&(p, t)| (p / total, t)).collect();
        let m = MomentVector::from_layers(&layers);
        let lam = reconstruct(&m, f).unwrap();
        prop_assert!(lam.moments().max_abs_diff(&m) <= 1e-6);
        prop_assert!((lam.stiff_fraction() - f).abs() <= 1e-10);
        prop_assert!((lam.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for k in 0..3 {
            prop_assert!(lam.p[k] >= 0.0);
            prop_assert!((0.0..=1.0).contains(&lam.mu[k]));
            prop_assert!(lam.theta[k] > -FRAC_PI_2 && lam.theta[k] <= FRAC_PI_2);
        }
    }
}

#[test]
fn reference_laminate_is_reconstructed_equivalently() {
    let original = Rank3Laminate::from_widths([PI / 3.0, -PI / 6.0, PI / 6.0], [0.2, 0.25, 0.5]);
    let m = original.moments();
    let s3 = 3f64.sqrt();
    let expected = MomentVector::new(3.0 / 14.0, 3.0 * s3 / 14.0, -0.5, -s3 / 14.0);
    assert!(m.max_abs_diff(&expected) < 1e-14);

    let lam = reconstruct(&m, original.f).unwrap();
    assert_eq!(lam.rank, 3);
    assert!(lam.moments().max_abs_diff(&m) < 1e-10);
    assert!((lam.f - 0.7).abs() < 1e-15);
    // moments alone do not fix the layer set; energies must agree for any loads
    let mat = MaterialPair::new(0.7).unwrap();
    let loads = LoadSet::new(vec![StressCase::new(1.0, -0.3, 0.6, 1.0)]).unwrap();
    let a = complementary_energy(&original.moments(), &loads, &mat).unwrap();
    let b = complementary_energy(&lam.moments(), &loads, &mat).unwrap();
    assert!((a - b).abs() < 1e-9 * a);
}

#[test]
fn two_layer_moments_give_rank_two() {
    let m = MomentVector::from_layers(&[(0.5, 0.0), (0.5, FRAC_PI_2)]);
    let lam = reconstruct(&m, 0.5).unwrap();
    assert!(lam.rank <= 2);
    assert!(lam.moments().max_abs_diff(&m) < 1e-10);
}

#[test]
fn near_edge_moments_reconstruct() {
    for eps in [1e-3, 1e-6, 1e-9, 1e-12] {
        let m = MomentVector::new(0.0, 0.0, 1.0 - eps, 0.0);
        let lam = reconstruct(&m, 0.5).unwrap();
        assert!(lam.moments().max_abs_diff(&m) < 1e-6, "{eps}");
    }
}

#[test]
fn random_interior_moments_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut count = 0;
    while count < 1000 {
        let m = MomentVector::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if !m.is_feasible(0.0) {
            continue;
        }
        count += 1;
        for f in [0.2, 0.5, 0.7] {
            let lam = reconstruct(&m, f).unwrap_or_else(|e| panic!("{m:?}: {e}"));
            assert!(lam.moments().max_abs_diff(&m) <= 1e-6);
            assert!((lam.stiff_fraction() - f).abs() <= 1e-10);
        }
    }
}
