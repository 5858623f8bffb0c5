use gecond::conditioning::GrowthParams;
use gecond::studies::{study_queries, DEFAULT_EPSILON};
use gecond::{bound_check, convergence_study, systems, Method};

#[test]
fn every_method_shows_its_order_on_the_stable_focus() {
    let focus = systems::stable_focus();
    for method in Method::all() {
        let study = convergence_study(&focus, &method, &[1.0, 0.0], 2.0, 0.05, 4).unwrap();
        assert!(study.verified(), "{}: {:?}", method.name(), study.observed_orders);
        assert_eq!(study.observed_orders.len(), 3);
    }
}

#[test]
fn convergence_errors_shrink_with_h() {
    let study = convergence_study(&systems::van_der_pol(), &Method::midpoint(), &[0.5, 0.0], 5.0, 0.05, 4).unwrap();
    assert!(study.levels.windows(2).all(|w| w[1].max_error < w[0].max_error));
    assert!(study.reference_certificate > 0.0);
}

#[test]
fn k_decreases_as_epsilon_grows() {
    let decay = systems::decay();
    let params = GrowthParams::default();
    let mut last = f64::INFINITY;
    for eps in [1e-3, 1e-2, 1e-1, 1.0] {
        let r = bound_check(&decay, &Method::rk4(), &[1.0], 5.0, 0.1, 3, eps, &params).unwrap();
        let k = r.per_level[0].k;
        assert!(k < last, "eps={eps}: {k} !< {last}");
        last = k;
    }
}

#[test]
fn k_at_t0_is_zero_so_the_maximum_lies_later() {
    let r = bound_check(&systems::rotation(), &Method::rk4(), &[1.0, 0.0], 10.0, 0.1, 3, DEFAULT_EPSILON, &GrowthParams::default())
        .unwrap();
    assert!(r.per_level.iter().all(|l| l.argmax_time > 0.0));
    assert!(r.verified);
}

#[test]
fn bound_check_rejects_nonpositive_epsilon() {
    let err = bound_check(&systems::decay(), &Method::rk4(), &[1.0], 1.0, 0.1, 3, 0.0, &GrowthParams::default()).unwrap_err();
    assert!(err.to_string().contains("any ε > 0"));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn study_queries_lie_on_every_halved_grid() {
    let q = study_queries(0.0, 3.0, 0.1, 7);
    assert_eq!(*q.last().unwrap(), 3.0);
    for &t in &q {
        let j = (t / 0.1).round();
        assert_eq!(t, j * 0.1, "{t}");
    }
}

#[test]
fn bound_check_conditioning_matches_direct_pipeline() {
    let rot = systems::rotation();
    let r = bound_check(&rot, &Method::rk4(), &[1.0, 0.0], 4.0, 0.1, 3, DEFAULT_EPSILON, &GrowthParams::default()).unwrap();
    // E(t) = t for a rotation.
    for (t, e) in r.conditioning.query_times.iter().zip(&r.conditioning.values) {
        assert!((e - t).abs() < 1e-9, "t={t} E={e}");
    }
}
