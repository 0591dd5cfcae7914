use kd_core::grad_oracle::{central_difference_grad, grad_check, DEFAULT_REL_TOL, DEFAULT_STEP};
use kd_core::grad_suite::{check_instance, run_suite, GradCase, SuiteOptions};
use kd_core::toy_models::{fr_margin_loss, FrHeadParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn every_case_passes_over_100_seeds() {
    let summaries = run_suite(100, &SuiteOptions::default()).unwrap();
    assert_eq!(summaries.len(), GradCase::ALL.len());
    for s in &summaries {
        assert_eq!(s.instances, 100);
        assert!(s.passed(), "{} failed {} of 100 (worst seed {}, rel {:e})", s.case.name(), s.failures, s.worst_seed, s.max_rel_error);
    }
}

#[test]
fn sign_flip_is_caught_for_every_case() {
    for case in GradCase::ALL {
        let opts = SuiteOptions {
            sign_flip: Some(case),
            ..SuiteOptions::default()
        };
        let caught = (0..10).filter(|&seed| !check_instance(case, seed, &opts).unwrap().passed).count();
        assert_eq!(caught, 10, "{}", case.name());
    }
}

#[test]
fn case_names_round_trip() {
    for case in GradCase::ALL {
        assert_eq!(GradCase::from_name(case.name()), Some(case));
    }
    assert_eq!(GradCase::from_name("nope"), None);
}

// At the default head (scale 30) the loss reaches values of order 10, so
// central differences carry round-off of a few 1e-10. The floor is set so
// that this absolute error stays inside rel_tol * floor.
#[test]
fn margin_head_at_default_scale() {
    let head = FrHeadParams::default();
    let floor = 1e-4;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, d, k) = (8, 32, head.classes);
        let w = Array2::from_shape_simple_fn((k, d), || rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let noise = rng.random_range(0.1..3.0);
        let mut e = Array2::from_shape_simple_fn((m, d), || noise * rng.sample::<f64, _>(StandardNormal));
        for (mut row, &y) in e.outer_iter_mut().zip(&labels) {
            row += &w.row(y);
        }
        let out = fr_margin_loss(e.view(), &labels, &head, w.view()).unwrap();
        let ne = central_difference_grad(
            |ev| fr_margin_loss(ev, &labels, &head, w.view()).unwrap().loss.value,
            e.view(),
            DEFAULT_STEP,
        )
        .unwrap();
        let nw = central_difference_grad(
            |wv| fr_margin_loss(e.view(), &labels, &head, wv).unwrap().loss.value,
            w.view(),
            DEFAULT_STEP,
        )
        .unwrap();
        for (a, n) in [(&out.loss.grad, &ne), (&out.weight_grad, &nw)] {
            let r = grad_check(a.view(), n.view(), DEFAULT_REL_TOL, floor).unwrap();
            assert!(r.passed, "seed {seed}: rel {:e} abs {:e}", r.max_rel_error, r.max_abs_error);
        }
    }
}
