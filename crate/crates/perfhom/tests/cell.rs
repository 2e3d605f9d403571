use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use perfhom::cell::{
    average_limit_check, cell_average, effective_matrix, oscillating_field, sigma, solve_cell, EffectiveRegime,
    EtaLaw, MConvention, Regime,
};
use perfhom::geometry::make_curve;
use perfhom::{CurveKind, Error, LameParams};
use proptest::prelude::*;

fn circle() -> perfhom::Curve {
    make_curve(CurveKind::from_str("circle:0.25").unwrap()).unwrap()
}

fn unit() -> LameParams {
    LameParams::planar(1.0, 1.0).unwrap()
}

#[test]
fn sigma_examples() {
    assert!((sigma(0.1, 0.01, 3).unwrap() - 1.0).abs() < 1e-12);
    assert!((sigma(0.1, (-100f64).exp(), 2).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(sigma(0.1, 1.0, 2), Err(Error::OutOfRange(_))));
    assert!(sigma(1.0, 0.1, 2).is_err());
    assert!(sigma(0.1, 0.1, 4).is_err());
}

#[test]
fn eta_laws_parse_and_classify() {
    let exp = EtaLaw::from_str("exp:2").unwrap();
    assert_eq!(exp.regime(2), Regime::Critical);
    assert!((exp.sigma0(2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    // σ² = ε²·a/ε² = a along the law itself
    let e = 0.1;
    assert!((sigma(e, exp.eta(e), 2).unwrap() - 2f64.sqrt()).abs() < 1e-12);

    assert_eq!(EtaLaw::from_str("fixed:0.25").unwrap().regime(2), Regime::SuperCritical);
    assert_eq!(EtaLaw::from_str("power:2").unwrap().regime(2), Regime::SuperCritical);
    assert_eq!(EtaLaw::from_str("exp_power:1,3").unwrap().regime(2), Regime::SubCritical);
    assert_eq!(EtaLaw::from_str("exp_power:1,0.5").unwrap().regime(2), Regime::SuperCritical);
    assert_eq!(EtaLaw::from_str("power:1").unwrap().regime(3), Regime::SuperCritical);
    assert_eq!(EtaLaw::from_str("power:3").unwrap().regime(3), Regime::SubCritical);
    assert_eq!(EtaLaw::from_str("power:2").unwrap().sigma0(3), Some(1.0));

    for s in ["fixed:0.25", "power:1.5", "exp:1", "exp_power:1,0.25"] {
        let law = EtaLaw::from_str(s).unwrap();
        assert_eq!(EtaLaw::from_str(&law.to_string()).unwrap(), law);
    }
    for bad in ["fixed:1.5", "power:-1", "exp", "linear:2", "exp_power:1"] {
        assert!(EtaLaw::from_str(bad).is_err(), "{bad}");
    }
}

#[test]
fn cell_solution_diagnostics() {
    let params = unit();
    let sol = solve_cell(&circle(), 0.1, &params, 128).unwrap();
    assert!(sol.balance_residual <= 1e-8, "balance {}", sol.balance_residual);
    assert!(sol.trace_residual(4) <= 1e-6, "trace {}", sol.trace_residual(4));
    for x in [[2.0, 1.5], [-3.0, 4.0], [4.5, -4.5]] {
        let r = sol.pde_residual(x, 0.05).unwrap();
        assert!(r <= 1e-5, "pde residual {r} at {x:?}");
    }
    assert!(matches!(sol.pde_residual([0.3, 0.0], 0.05), Err(Error::NearBoundary(_))));

    // zero in the hole, 1/η-periodic outside
    assert_eq!(sol.chi([0.1, 0.05]), nalgebra::Matrix2::zeros());
    let x = [1.7, -2.3];
    let d = (sol.chi(x) - sol.chi([x[0] + 10.0, x[1] - 10.0])).amax();
    assert!(d <= 1e-12 * sol.chi(x).amax(), "{d}");

    // a circle is rotation invariant, so ⟨χ⟩ is a multiple of I
    let a = sol.average;
    assert!((a[(0, 1)].abs() + a[(1, 0)].abs()) <= 1e-8 * a[(0, 0)].abs());
    assert!((a[(0, 0)] - a[(1, 1)]).abs() <= 1e-8 * a[(0, 0)].abs());
    assert!(a[(0, 0)] > 0.0);

    let avg = cell_average(&sol, 128).unwrap();
    assert!(avg.discrepancy <= 1e-4 * a[(0, 0)], "quadrature discrepancy {}", avg.discrepancy);
    assert!(cell_average(&sol, 64).is_err());
}

#[test]
fn g_prime_stays_bounded_in_eta() {
    let params = unit();
    let norms: Vec<f64> = [0.05, 0.1, 0.2]
        .iter()
        .map(|&eta| solve_cell(&circle(), eta, &params, 128).unwrap().g_prime_norm())
        .collect();
    let hi = norms.iter().cloned().fold(0.0, f64::max);
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(lo > 0.0 && hi / lo <= 2.0, "{norms:?}");
}

#[test]
fn out_of_range_eta_rejected() {
    assert!(solve_cell(&circle(), 0.5, &unit(), 64).is_err());
    assert!(solve_cell(&circle(), 0.0, &unit(), 64).is_err());
}

#[test]
fn dilute_matrix_and_conventions() {
    let params = unit();
    // c1 = 2/3 for λ = μ = 1, so 2π/c1 = 3π
    let m = effective_matrix(EffectiveRegime::Dilute2d, &params, None, MConvention::Proof).unwrap();
    assert!((m.m[(0, 0)] - 3.0 * PI).abs() < 1e-12 && m.m[(0, 1)] == 0.0);
    let d = effective_matrix(EffectiveRegime::Dilute2d, &params, None, MConvention::Display).unwrap();
    assert!((d.m[(1, 1)] - 1.0 / (3.0 * PI)).abs() < 1e-15);
    assert!((&m.m * &m.m_inv - nalgebra::DMatrix::identity(2, 2)).amax() < 1e-14);
    assert!(effective_matrix(EffectiveRegime::Dilute3d, &params, None, MConvention::Proof).is_err());
    assert!(effective_matrix(EffectiveRegime::Classical, &params, None, MConvention::Proof).is_err());
    assert!(MConvention::from_str("other").is_err());
}

#[test]
fn classical_matrix_is_spd_and_isotropic() {
    let params = unit();
    let sol = solve_cell(&circle(), 0.1, &params, 128).unwrap();
    let m = effective_matrix(EffectiveRegime::Classical, &params, Some(&sol), MConvention::Proof).unwrap();
    let ev = m.m.clone().symmetric_eigenvalues();
    assert!(ev.min() > 0.0);
    assert!((ev.max() - ev.min()).abs() <= 1e-8 * ev.max());
    assert!((&m.m * &m.m_inv - nalgebra::DMatrix::identity(2, 2)).amax() < 1e-12);
    let expect = sol.log_factor() / sol.average[(0, 0)];
    assert!((m.m[(0, 0)] - expect).abs() <= 1e-10 * expect);
}

#[test]
fn oscillating_field_structure() {
    let sol = Arc::new(solve_cell(&circle(), 0.2, &unit(), 128).unwrap());
    let v = oscillating_field(sol.clone(), 0.25).unwrap();
    for c in [[0.0, 0.0], [0.25, 0.5], [0.75, 0.75]] {
        assert_eq!(v.eval(c).amax(), 0.0);
    }
    let x = [0.1, 0.37];
    let base = v.eval(x);
    assert!(base.amax() > 0.0);
    for s in [[0.25, 0.0], [0.0, 0.5], [0.75, -0.25]] {
        let d = (v.eval([x[0] + s[0], x[1] + s[1]]) - base).amax();
        assert!(d <= 1e-12, "shift {s:?}: {d}");
    }
    let grid = v.sample_grid(16);
    assert_eq!(grid.len(), 17 * 17);
    let (i, j) = (3, 5);
    assert!((grid[j * 17 + i] - v.eval([i as f64 / 16.0, j as f64 / 16.0])).amax() <= 1e-12);
    assert!(oscillating_field(sol, 1.0).is_err());
}

#[test]
fn average_limit_check_rejects_bad_eta_lists() {
    let p = unit();
    let c = circle();
    assert!(average_limit_check(&c, &p, &[1e-2], 64, None).is_err());
    assert!(average_limit_check(&c, &p, &[1e-2, 1e-3, 1e-3], 64, None).is_err());
    assert!(average_limit_check(&c, &p, &[1e-2, 8e-3, 6e-3], 64, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_is_monotone_in_both_arguments(e in 0.01f64..0.9, eta in 1e-6f64..0.5, f in 1.01f64..1.1) {
        for d in [2, 3] {
            let s = sigma(e, eta, d).unwrap();
            prop_assert!(sigma((e * f).min(0.99), eta, d).unwrap() >= s);
            prop_assert!(sigma(e, eta / f, d).unwrap() >= s);
        }
    }
}
