use gecond::linalg::Matrix;
use gecond::reference::{global_error, reference_trajectory};
use gecond::{integrate, systems, transition_sequence, Method, System};
use proptest::prelude::*;

fn matrix_strategy(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, d * d).prop_map(move |v| Matrix::from_row_major(d, v).unwrap())
}

fn pair_strategy() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..=6).prop_flat_map(|d| (matrix_strategy(d), matrix_strategy(d)))
}

proptest! {
    #[test]
    fn norm2_is_homogeneous((a, _) in pair_strategy(), c in -100.0f64..100.0) {
        let lhs = a.scaled(c).norm2();
        let rhs = c.abs() * a.norm2();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn norm2_is_submultiplicative((a, b) in pair_strategy()) {
        let ab = (&a * &b).norm2();
        prop_assert!(ab <= a.norm2() * b.norm2() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn norm2_sits_between_frobenius_bounds((a, _) in pair_strategy()) {
        let two = a.norm2();
        let fro = a.frobenius();
        let d = a.dim() as f64;
        prop_assert!(two <= fro * (1.0 + 1e-12));
        prop_assert!(fro <= d.sqrt() * two * (1.0 + 1e-12));
    }
}

#[test]
fn norm2_of_known_matrices() {
    assert_eq!(Matrix::diag(&[3.0, -7.0, 2.0]).norm2(), 7.0);
    // [[1, 1], [0, 1]] has largest singular value equal to the golden ratio.
    let shear = Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
    assert!((shear.norm2() - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
}

/// `exp(A)` by scaling and squaring with a long Taylor series.
fn expm(a: &Matrix) -> Matrix {
    let d = a.dim();
    let mut squarings = 0;
    let mut scale = 1.0;
    while a.max_abs() * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a.scaled(scale);
    let mut sum = Matrix::identity(d);
    let mut term = Matrix::identity(d);
    for k in 1..30 {
        term = (&term * &x).scaled(1.0 / k as f64);
        let mut next = sum.clone();
        for (s, t) in next.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *s += t;
        }
        sum = next;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[test]
fn transitions_of_linear_systems_match_matrix_exponential() {
    let cases: [(System, Matrix); 3] = [
        (systems::stable_focus(), Matrix::from_rows(&[&[-1.0, 1.0], &[-1.0, -1.0]])),
        (systems::rotation(), Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]])),
        (systems::expand(), Matrix::from_rows(&[&[1.0]])),
    ];
    let h = 0.01;
    for (system, a) in cases {
        let seq = transition_sequence(&Method::rk4(), &system, system.default_x0(), 0.0, 4.0, h).unwrap();
        for (j, n) in [(0, 400), (100, 250), (37, 38)] {
            let got = seq.transition(j, n).unwrap().to_matrix();
            let want = expm(&a.scaled((n - j) as f64 * h));
            let rel = got.sub(&want).frobenius() / want.frobenius();
            assert!(rel < 1e-8, "{} ({j},{n}): rel {rel:e}", system.name());
        }
    }
}

#[test]
fn exact_flows_satisfy_their_equations() {
    for system in systems::builtin_suite().into_iter().filter(|s| s.has_exact()) {
        let x0 = system.default_x0().as_slice().to_vec();
        for &t in &[0.3, 1.7, 6.0] {
            let dt = 1e-5;
            let plus = system.exact(t + dt, &x0).unwrap().unwrap();
            let minus = system.exact(t - dt, &x0).unwrap().unwrap();
            let x = system.exact(t, &x0).unwrap().unwrap();
            let f = system.evaluate(t, &x).unwrap();
            let scale = f.norm().max(1.0);
            for i in 0..x.dim() {
                let deriv = (plus[i] - minus[i]) / (2.0 * dt);
                assert!((deriv - f[i]).abs() <= 1e-6 * scale, "{} t={t} component {i}", system.name());
            }
        }
    }
}

#[test]
fn torus_trajectory_settles_on_unit_circles() {
    let torus = systems::torus4();
    let x0 = torus.default_x0().as_slice().to_vec();
    let exact = torus.exact(50.0, &x0).unwrap().unwrap();
    let tr = integrate(&Method::rk4(), &torus, &x0, 0.0, 50.0, 0.01).unwrap();
    for x in [exact.as_slice(), tr.final_state().as_slice()] {
        let r1 = x[0].hypot(x[1]);
        let r2 = x[2].hypot(x[3]);
        assert!((r1 - 1.0).abs() < 1e-6 && (r2 - 1.0).abs() < 1e-6, "radii {r1} {r2}");
    }
}

#[test]
fn global_error_is_symmetric_and_obeys_triangle_inequality() {
    let vdp = systems::van_der_pol();
    let x0 = [0.5, 0.0];
    let q: Vec<f64> = (0..=10).map(|i| i as f64).collect();
    let a = integrate(&Method::euler(), &vdp, &x0, 0.0, 10.0, 0.01).unwrap();
    let b = integrate(&Method::midpoint(), &vdp, &x0, 0.0, 10.0, 0.01).unwrap();
    let c = integrate(&Method::rk4(), &vdp, &x0, 0.0, 10.0, 0.01).unwrap();
    let ab = global_error(&a, &b, &q).unwrap();
    let ba = global_error(&b, &a, &q).unwrap();
    let bc = global_error(&b, &c, &q).unwrap();
    let ac = global_error(&a, &c, &q).unwrap();
    assert_eq!(ab.errors, ba.errors);
    for i in 0..q.len() {
        assert!(ac.errors[i] <= ab.errors[i] + bc.errors[i] + 1e-15);
    }
}

#[test]
fn reference_agrees_with_closed_form_when_forced_to_integrate() {
    // Same right-hand side as stable_focus but without the closed form, so
    // the reference has to come from step halving.
    let focus = systems::stable_focus();
    let bare = System::new("stable_focus", vec![1.0, 0.0], |_, x, out| {
        out[0] = -x[0] + x[1];
        out[1] = -x[0] - x[1];
    })
    .unwrap();
    let q = [0.0, 1.0, 2.5, 5.0];
    let r = reference_trajectory(&bare, &[1.0, 0.0], 0.0, 5.0, &q).unwrap();
    for (t, x) in q.iter().zip(r.trajectory.states()) {
        let want = focus.exact(*t, &[1.0, 0.0]).unwrap().unwrap();
        assert!(x.distance(&want) < 1e-10, "t={t}");
    }
}
