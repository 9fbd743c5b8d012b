use meshboost::metrics::{directed_chamfer, sample_surface, symmetric_chamfer, PointSet};
use meshboost::{Mesh, Vec3};
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn brute_directed(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().map(|p| b.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)).sum::<f64>() / a.len() as f64
}

fn ps(v: Vec<Vec3>) -> PointSet {
    PointSet::new(v).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn hand_example_and_subset() {
    let a = ps(vec![Vec3::zeros()]);
    let b = ps(vec![Vec3::x(), Vec3::new(0.0, 2.0, 0.0)]);
    assert_eq!(directed_chamfer(&a, &b).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let big = random_set(&mut rng, 50);
    let sub = ps(big[10..20].to_vec());
    assert_eq!(directed_chamfer(&sub, &ps(big.clone())).unwrap(), 0.0);
    assert!(directed_chamfer(&ps(big.clone()), &sub).unwrap() > 0.0);
    assert_eq!(symmetric_chamfer(&ps(big.clone()), &ps(big)).unwrap(), 0.0);
}

#[test]
fn unit_square_samples_centre_on_its_centroid() {
    let sq = Mesh::new(
        vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let s = sample_surface(&sq, 100_000, 4).unwrap();
    let mean = s.points().iter().sum::<Vec3>() / s.len() as f64;
    assert!((mean - Vec3::new(0.5, 0.5, 0.0)).norm() < 0.01);
    assert!(s.points().iter().all(|p| p.z.abs() < 1e-9));
    assert_eq!(sample_surface(&sq, 64, 9).unwrap().points(), sample_surface(&sq, 64, 9).unwrap().points());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_matches_brute_force(seed in any::<u64>(), n in 1usize..=64, m in 1usize..=64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_set(&mut rng, n), random_set(&mut rng, m));
        let d = directed_chamfer(&ps(a.clone()), &ps(b.clone())).unwrap();
        prop_assert!(rel(d, brute_directed(&a, &b)) <= 1e-12);
        let s = symmetric_chamfer(&ps(a.clone()), &ps(b.clone())).unwrap();
        prop_assert!(rel(s, brute_directed(&a, &b) + brute_directed(&b, &a)) <= 1e-12);
        prop_assert_eq!(s, symmetric_chamfer(&ps(b), &ps(a)).unwrap());
    }

    #[test]
    fn rigid_motion_leaves_chamfer_unchanged(seed in any::<u64>(), n in 1usize..40, m in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_set(&mut rng, n), random_set(&mut rng, m));
        let axis = Unit::new_normalize(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0));
        let r = Rotation3::from_axis_angle(&axis, rng.gen_range(0.0..6.0));
        let t = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let mv = |v: &[Vec3]| ps(v.iter().map(|p| r * p + t).collect());
        let d0 = directed_chamfer(&ps(a.clone()), &ps(b.clone())).unwrap();
        let d1 = directed_chamfer(&mv(&a), &mv(&b)).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9);
        let s0 = symmetric_chamfer(&ps(a.clone()), &ps(b.clone())).unwrap();
        let s1 = symmetric_chamfer(&mv(&a), &mv(&b)).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-9);
    }

    #[test]
    fn zero_iff_contained(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_set(&mut rng, n);
        let k = rng.gen_range(1..n);
        let mut a: Vec<Vec3> = (0..k).map(|_| b[rng.gen_range(0..n)]).collect();
        prop_assert_eq!(directed_chamfer(&ps(a.clone()), &ps(b.clone())).unwrap(), 0.0);
        a.push(b[0] + Vec3::new(1e-3, 0.0, 0.0));
        prop_assert!(directed_chamfer(&ps(a), &ps(b)).unwrap() > 0.0);
    }
}
