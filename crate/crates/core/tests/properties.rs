//! Property tests for invariants of the geometry, quadrature and charge layers.

use ahmass::charges::*;
use ahmass::chartlab::*;
use ahmass::eigenfunctions::*;
use ahmass::geometry::*;
use ahmass::quad;
use proptest::prelude::*;

fn ball_point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, n), 0.0f64..0.95).prop_map(|(v, r)| {
        let s = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-9);
        v.iter().map(|c| c / s * r).collect()
    })
}

fn lorentz_map(n: usize) -> impl Strategy<Value = LorentzMap> {
    (1..=n, 1..=n, -3.0f64..3.0, 1..=n, -1.0f64..1.0).prop_map(move |(a, b, angle, axis, rap)| {
        let boost = lorentz(n, LorentzKind::Boost { axis, rapidity: rap }).unwrap();
        if a == b {
            return boost;
        }
        let rot = lorentz(n, LorentzKind::Rotation { a, b, angle }).unwrap();
        rot.compose(&boost)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lapse_functions_lie_on_the_hyperboloid(x in ball_point(4)) {
        let v: Vec<f64> = (0..=4).map(|mu| LapseFunction::basis(4, mu).value_ball(&x)).collect();
        let q = v[0] * v[0] - v[1..].iter().map(|c| c * c).sum::<f64>();
        prop_assert!((q - 1.0).abs() <= 1e-12 * v[0] * v[0]);
    }

    #[test]
    fn lorentz_maps_preserve_eta(b in lorentz_map(3), x in ball_point(3)) {
        let h = ball_to_hyperboloid(&x);
        let y = b.apply_hyperboloid(&h);
        prop_assert!((eta(&y, &y) + 1.0).abs() < 1e-10 * y[0] * y[0]);
        let back = b.inverse().apply_ball(&b.apply_ball(&x));
        for (p, q) in back.iter().zip(&x) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn lapse_action_is_composition(b in lorentz_map(3), x in ball_point(3), a in prop::collection::vec(-1.0f64..1.0, 4)) {
        let v = LapseFunction { coeffs: a };
        let lhs = b.act_lapse(&v).value_ball(&x);
        let rhs = v.value_ball(&b.apply_ball(&x));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0) * b.matrix.amax());
    }

    #[test]
    fn exp_inverts_log(x in ball_point(3), y in ball_point(3)) {
        let (p, q) = (Point::ball(&x).unwrap(), Point::ball(&y).unwrap());
        let xi = log_map(&p, &q).unwrap();
        let back = exp_map(&p, &xi).unwrap();
        prop_assert!(distance(&back, &q).unwrap() < 1e-9);
        prop_assert!((xi.norm() - distance(&p, &q).unwrap()).abs() < 1e-9 * xi.norm().max(1.0));
    }

    #[test]
    fn distance_is_a_metric(x in ball_point(3), y in ball_point(3), z in ball_point(3)) {
        let (p, q, r) = (Point::ball(&x).unwrap(), Point::ball(&y).unwrap(), Point::ball(&z).unwrap());
        let d = |a: &Point, b: &Point| distance(a, b).unwrap();
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-12 * d(&p, &q).max(1.0));
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
    }

    #[test]
    fn isometries_preserve_distance(b in lorentz_map(3), x in ball_point(3), y in ball_point(3)) {
        let (p, q) = (Point::ball(&x).unwrap(), Point::ball(&y).unwrap());
        let d0 = distance(&p, &q).unwrap();
        let d1 = distance(&b.apply(&p).unwrap(), &b.apply(&q).unwrap()).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-8 * d0.max(1.0));
    }

    #[test]
    fn gauss_legendre_is_exact(order in 1usize..80, k in 0usize..40) {
        prop_assume!(2 * k < 2 * order);
        let (t, w) = quad::gauss_legendre(order);
        let s = quad::compensated_sum(t.iter().zip(&w).map(|(t, w)| w * t.powi(2 * k as i32)));
        prop_assert!((s - 2.0 / (2.0 * k as f64 + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn compensated_sum_cancels_pairs(v in prop::collection::vec(-1e12f64..1e12, 1..50)) {
        let mut all = v.clone();
        all.extend(v.iter().rev().map(|c| -c));
        all.push(1.0);
        prop_assert_eq!(quad::compensated_sum(all), 1.0);
    }

    #[test]
    fn i_recurrence(n in 3usize..8, b in 0.0f64..6.0) {
        let beta = 0.5 * n as f64 + 0.1 + b;
        let i0 = integral_i(n, beta).unwrap();
        let i1 = integral_i(n, beta + 1.0).unwrap();
        let expected = (beta - 0.5 * (n as f64 - 1.0)) / beta;
        prop_assert!((i1 / i0 - expected).abs() < 1e-12);
        prop_assert!((integral_j(n, 0.0, beta).unwrap() - i0).abs() < 1e-12 * i0);
    }

    #[test]
    fn cutoff_profiles_are_monotone(t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        for p in [CutoffProfile::Quintic, CutoffProfile::Septic] {
            let (a, da, _) = p.eval(t);
            let (b, _, _) = p.eval(t + dt);
            prop_assert!(b <= a + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(da <= 0.0);
        }
    }

    #[test]
    fn extrapolation_recovers_exponential_tails(c in -50.0f64..50.0, a in -20.0f64..20.0, g in 0.3f64..2.0) {
        let samples: Vec<(f64, f64)> = (4..=10).map(|k| (k as f64, c + a * (-g * k as f64).exp())).collect();
        let r = extrapolate(&samples, 1e-2);
        prop_assert!((r.extrapolated - c).abs() < 1e-6 * (1.0 + c.abs() + a.abs()));
    }

    #[test]
    fn sphere_rule_integrates_quadratics(i in 0usize..3, j in 0usize..3) {
        let rule = sphere_rule(3, 6).unwrap();
        let v = rule.integrate(|x| x[i] * x[j]);
        let expected = if i == j { 4.0 * std::f64::consts::PI / 3.0 } else { 0.0 };
        prop_assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn boundary_density_matches_lapse_data(c in -2.0f64..2.0, a in prop::collection::vec(-1.0f64..1.0, 3), y in prop::collection::vec(-2.0f64..2.0, 2)) {
        // affine data has a density linear in (1 + |y|^2, 1 - |y|^2, y)
        let data = BoundaryFunction::Affine { c, a: a.clone() };
        let z2 = y[0] * y[0] + y[1] * y[1];
        let inn = integral_i(3, 3.0).unwrap();
        let expected = (c * (1.0 + z2) + a[0] * (1.0 - z2) + 2.0 * (a[1] * y[0] + a[2] * y[1])) / (2.0 * inn);
        prop_assert!((boundary_density(&data, &y).unwrap() - expected).abs() < 1e-12 * (1.0 + z2) * 4.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn charge_is_linear_in_the_perturbation(t in 0.2f64..3.0) {
        let e = make_wang_metric(3, BoundaryFunction::Constant(1.0)).unwrap();
        let rule = sphere_rule(3, 6).unwrap();
        let cut = CutoffFamily::default();
        let opts = ChargeOptions { radial_order: 8, ..ChargeOptions::default() };
        let v = TestFunction::Lapse(LapseFunction::basis(3, 0));
        let base = charge_sample(&e, &v, &cut, 6.0, &rule, &opts).unwrap();
        let scaled = charge_sample(&e.scaled(t), &v, &cut, 6.0, &rule, &opts).unwrap();
        prop_assert!((scaled - t * base).abs() < 1e-9 * base.abs() * t);
    }

    #[test]
    fn wang_mass_vector_is_linear_in_m(c in 0.2f64..2.0, a in -0.5f64..0.5) {
        // p^0 = int m, p^1 = int m x^1 for m = c + a x^1
        let m = BoundaryFunction::Affine { c, a: vec![a, 0.0, 0.0] };
        let e = make_wang_metric(3, m).unwrap();
        let rule = sphere_rule(3, 8).unwrap();
        let mv = mass_vector(&e, &CutoffFamily::default(), &rule, &ChargeOptions::default()).unwrap();
        let pi = std::f64::consts::PI;
        prop_assert!((mv.p[0] - 4.0 * pi * c).abs() < 1e-2 * 4.0 * pi * c.max(a.abs()));
        prop_assert!((mv.p[1] - 4.0 * pi * a / 3.0).abs() < 1e-2 * 4.0 * pi * c.max(a.abs()));
    }
}
