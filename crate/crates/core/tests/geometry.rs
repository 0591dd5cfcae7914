use kd_core::geometry::{l2_normalize, triplet_angle_direct, triplet_angle_from_pairwise};
use kd_core::losses::{fc_loss, fc_loss_cosform};
use kd_core::KdError;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    l2_normalize(v.view()).unwrap()
}

#[test]
fn vertex_angle_pairwise_form_matches_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst = 0.0f64;
    while checked < 10_000 {
        let d = rng.random_range(2..=64);
        let (a, b, c) = (unit(&mut rng, d), unit(&mut rng, d), unit(&mut rng, d));
        let direct = match triplet_angle_direct(a.view(), b.view(), c.view()) {
            Ok(v) => v,
            Err(KdError::DegenerateTriplet { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let pairwise = triplet_angle_from_pairwise(a.dot(&b), b.dot(&c), a.dot(&c)).unwrap();
        worst = worst.max((direct - pairwise).abs());
        checked += 1;
    }
    assert!(worst <= 1e-9, "worst {worst:e}");
}

#[test]
fn coincident_vertex_is_degenerate() {
    let a = Array1::from(vec![1.0, 0.0, 0.0]);
    let c = Array1::from(vec![0.0, 1.0, 0.0]);
    assert!(matches!(
        triplet_angle_direct(a.view(), a.view(), c.view()),
        Err(KdError::DegenerateTriplet { .. })
    ));
    assert!(matches!(
        triplet_angle_from_pairwise(1.0, 0.0, 0.0),
        Err(KdError::DegenerateTriplet { .. })
    ));
}

#[test]
fn fc_distance_form_matches_cosine_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let m = rng.random_range(1..=32);
        let d = rng.random_range(1..=128);
        let t = Array2::from_shape_simple_fn((m, d), || rng.sample::<f64, _>(StandardNormal));
        let s = Array2::from_shape_simple_fn((m, d), || rng.sample::<f64, _>(StandardNormal));
        let cosines: Vec<f64> = t
            .outer_iter()
            .zip(s.outer_iter())
            .map(|(a, b)| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()))
            .collect();
        let direct = fc_loss(t.view(), s.view()).unwrap().value;
        assert!((direct - fc_loss_cosform(&cosines).unwrap()).abs() <= 1e-10);
    }
}
