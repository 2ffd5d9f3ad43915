use kpz_stationary::asep::{
    build_generator, dual_probs, laplace_exact, limiting_current, model_from_uv, phase_point, stationary_exact,
    AsepModel, BoundaryParams, Configuration, Coupling,
};
use kpz_stationary::askey_wilson::{aw_measure, AwParams};
use kpz_stationary::kpz::{brownian_case, brownian_limit, LaplaceQuery};
use kpz_stationary::measure::{self_converge, MixedMeasure, QuadratureSpec};
use kpz_stationary::specfun::{log_abs_qpoch_inf, log_abs_qpoch_polar, log_gamma, theta_identity_residual, Sign};
use kpz_stationary::Complex64;
use proptest::prelude::*;

/// Total mass under panel doubling to a relative 1e-11.
fn mass(mu: &MixedMeasure) -> f64 {
    let spec = QuadratureSpec { rel_tol: 1e-11, ..QuadratureSpec::default() };
    self_converge(|s| mu.total_mass(s), &spec, 8).unwrap().value
}

fn model() -> impl Strategy<Value = AsepModel> {
    (1usize..=5, 0.0..0.9f64, 0.05..2.0f64, 0.05..2.0f64, 0.0..1.0f64, 0.0..1.0f64)
        .prop_map(|(n, q, a, b, g, d)| AsepModel::new(n, q, a, b, g, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn generator_rows_sum_to_zero(m in model()) {
        let g = build_generator(&m).unwrap();
        prop_assert!(g.row_sums().iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn stationary_law_is_a_probability(m in model()) {
        let d = stationary_exact(&m).unwrap();
        prop_assert!(d.probs.iter().all(|&p| p >= -1e-15));
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.residual < 1e-10);
    }

    #[test]
    fn duality_reverses_the_law(m in model()) {
        let a = dual_probs(&stationary_exact(&m).unwrap());
        let b = stationary_exact(&m.dual()).unwrap().probs;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn laplace_is_log_convex_in_scale(n in 2usize..=6, u in -0.5..1.5f64, v in -0.5..1.5f64, x in 0.2..1.0f64, c in 0.1..1.5f64) {
        let d = stationary_exact(&model_from_uv(n, BoundaryParams::new(u, v)).unwrap()).unwrap();
        let l = |k: f64| laplace_exact(&d, &LaplaceQuery::single(x, k * c).unwrap()).ln();
        prop_assert!(l(0.0).abs() < 1e-12);
        prop_assert!(l(0.5) <= 0.5 * (l(0.0) + l(1.0)) + 1e-12);
    }

    #[test]
    fn brownian_case_is_exact_for_product_law(n in 2usize..=8, u in 0.1..1.5f64, c in 0.0..1.0f64, x in 0.1..1.0f64) {
        let m = model_from_uv(n, BoundaryParams::new(u, -u)).unwrap();
        let d = stationary_exact(&m).unwrap();
        let q = LaplaceQuery::single(x, c).unwrap();
        prop_assert!((laplace_exact(&d, &q) - brownian_case(u, n, &q)).abs() < 1e-9);
    }

    #[test]
    fn brownian_limit_is_reached(u in 0.1..1.5f64, c in 0.0..1.0f64, x in 0.1..1.0f64) {
        let q = LaplaceQuery::single(x, c).unwrap();
        let big = brownian_case(u, 1 << 30, &q);
        prop_assert!((big / brownian_limit(u, &q) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn coupling_preserves_order(n in 1usize..=6, u in 0.0..1.5f64, v in 0.0..1.5f64, seed in 0u64..1000) {
        let models = [(-v, v), (u, v), (u, -u)]
            .iter()
            .map(|&(a, b)| model_from_uv(n, BoundaryParams::new(a, b)).unwrap())
            .collect();
        let c = Coupling::new(models).unwrap();
        let s = c.simulate(&vec![Configuration::empty(n); 3], 2_000, seed).unwrap();
        prop_assert_eq!(s.ordering_violations, 0);
    }

    #[test]
    fn aw_measure_has_unit_mass(a in -0.9..0.9f64, b in -0.9..0.9f64, c in -0.9..0.9f64, d in -0.9..0.9f64, q in -0.8..0.8f64) {
        let mu = aw_measure(&AwParams::real(a, b, c, d, q)).unwrap();
        let m = mass(&mu);
        prop_assert!((m - 1.0).abs() < 1e-8, "mass {}", m);
    }

    #[test]
    fn aw_atoms_are_positive_and_outside(a in 1.05..4.0f64, b in -0.9..0.2f64, c in -0.24..0.24f64, d in -0.24..0.24f64, q in 0.1..0.8f64) {
        let mu = aw_measure(&AwParams::real(a, b, c, d, q)).unwrap();
        prop_assert!(!mu.atoms.is_empty());
        for at in &mu.atoms {
            prop_assert!(at.mass() > 0.0 && at.location > 1.0);
        }
        let m = mass(&mu);
        prop_assert!((m - 1.0).abs() < 1e-8, "mass {}", m);
    }

    #[test]
    fn log_gamma_recurrence(re in 0.1..8.0f64, im in -6.0..6.0f64) {
        let z = Complex64::new(re, im);
        let mut d = log_gamma(z + 1.0).unwrap() - log_gamma(z).unwrap() - z.ln();
        d.im = (d.im + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        prop_assert!(d.norm() < 1e-12);
    }

    #[test]
    fn polar_qpoch_agrees(r in 0.0..0.99f64, phi in 0.0..std::f64::consts::PI, q in -0.95..0.95f64) {
        let want = log_abs_qpoch_inf(Complex64::from_polar(r, phi), q).unwrap();
        let got = log_abs_qpoch_polar(r, (0.5 * phi).sin().powi(2), q);
        prop_assert!((want - got).abs() < 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn theta_identity_holds(kappa in 0.01..1.0f64, re in -1.0..2.0f64, im in -1.0..1.0f64, plus in any::<bool>()) {
        let sign = if plus { Sign::Plus } else { Sign::Minus };
        prop_assume!(!(plus && im.abs() < 1e-3 && (re - re.round()).abs() < 1e-3 && re.round() <= 0.0));
        prop_assert!(theta_identity_residual(kappa, Complex64::new(re, im), sign).unwrap() < 1e-9);
    }

    #[test]
    fn limiting_current_is_continuous(l in 0.01..0.99f64, r in 0.01..0.99f64) {
        let j = limiting_current(l, r);
        prop_assert!(j <= 0.25 + 1e-15 && j > 0.0);
        if let Ok(p) = phase_point(l, r) {
            prop_assert_eq!(p.current, j);
        }
        let e = 1e-9;
        prop_assert!((limiting_current(l + e, r) - j).abs() < 1e-8);
        prop_assert!((limiting_current(l, r + e) - j).abs() < 1e-8);
    }
}
