use std::f64::consts::{E, PI};
use std::str::FromStr;

use perfhom::bie::{
    assemble, assemble_kernel_difference, decompose, eval_double, eval_single, inner, kernel_basis,
    kernel_basis_with_rescue, solve_periodic_dirichlet, verify_jumps, BoundaryOperator, DensityField, OperatorLabel,
};
use perfhom::cell::default_green;
use perfhom::geometry::{make_curve, panelize};
use perfhom::{CurveKind, LameParams, Panelization};
use proptest::prelude::*;

fn unit() -> LameParams {
    LameParams::planar(1.0, 1.0).unwrap()
}

fn pan(spec: &str, n: usize) -> Panelization {
    panelize(&make_curve(CurveKind::from_str(spec).unwrap()).unwrap(), n).unwrap()
}

fn trig(p: &Panelization, a: [f64; 6]) -> DensityField {
    DensityField::from_fn(p, |_, t| {
        [
            a[0] + a[1] * t.cos() + a[2] * (2.0 * t).sin(),
            a[3] + a[4] * (3.0 * t).cos() + a[5] * t.sin(),
        ]
    })
}

fn free(p: &Panelization, label: OperatorLabel) -> BoundaryOperator {
    assemble(p, label, &unit(), None).unwrap()
}

fn sup_diff(a: &DensityField, b: &DensityField) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scaled(d: &DensityField, s: f64) -> DensityField {
    DensityField {
        values: d.values.iter().map(|v| v * s).collect(),
    }
}

#[test]
fn double_layer_reproduces_half_constants() {
    for spec in ["circle:0.25", "kite:default"] {
        let p = pan(spec, 256);
        let k = free(&p, OperatorLabel::K);
        for e in [[1.0, 0.0], [0.0, 1.0]] {
            let c = DensityField::constant(p.n, e);
            let r = sup_diff(&k.apply(&c), &scaled(&c, 0.5));
            assert!(r <= 1e-10, "{spec}: {r}");
        }
    }
}

#[test]
fn periodic_double_layer_on_constants() {
    let p = pan("circle:0.25", 256);
    let green = default_green(&unit()).unwrap();
    let k = assemble(&p, OperatorLabel::KEta, &unit(), Some((0.1, &green))).unwrap();
    // η²|T| = 0.01·π/16
    assert!((0.01 * PI / 16.0 - 0.0019634954).abs() < 1e-10);
    for e in [[1.0, 0.0], [0.0, 1.0]] {
        let c = DensityField::constant(p.n, e);
        let got = k.apply(&c);
        let expect = scaled(&c, 0.5 - 0.01 * PI / 16.0);
        assert!(sup_diff(&got, &expect) <= 1e-8, "{}", sup_diff(&got, &expect));
    }
}

#[test]
fn periodic_label_requires_eta() {
    let p = pan("circle:0.25", 64);
    assert!(assemble(&p, OperatorLabel::KEta, &unit(), None).is_err());
    let green = default_green(&unit()).unwrap();
    assert!(assemble(&p, OperatorLabel::KEta, &unit(), Some((3.0, &green))).is_err());
}

#[test]
fn adjointness_and_self_adjointness() {
    let p = pan("kite:default", 256);
    let k = free(&p, OperatorLabel::K);
    let ks = free(&p, OperatorLabel::Kstar);
    let s = free(&p, OperatorLabel::S);
    let phi = trig(&p, [0.3, -1.0, 0.5, 0.2, 0.7, -0.4]);
    let psi = trig(&p, [-0.6, 0.1, 0.9, 1.1, -0.3, 0.8]);
    let d1 = inner(&p, &k.apply(&phi), &psi) - inner(&p, &phi, &ks.apply(&psi));
    assert!(d1.abs() <= 1e-10, "{d1}");
    let d2 = inner(&p, &s.apply(&phi), &psi) - inner(&p, &phi, &s.apply(&psi));
    assert!(d2.abs() <= 1e-10, "{d2}");
}

#[test]
fn compact_difference_matches_operator_difference() {
    for spec in ["kite:default", "ellipse:0.3,0.15"] {
        let p = pan(spec, 256);
        let diff = free(&p, OperatorLabel::Kstar).matrix - free(&p, OperatorLabel::K).matrix;
        let kd = assemble_kernel_difference(&p, &unit());
        // entrywise the two disagree at O(h) on the alternating-point Cauchy
        // rule; their actions on smooth densities agree spectrally
        let phi = trig(&p, [0.3, -1.0, 0.5, 0.2, 0.7, -0.4]);
        let a = DensityField::from_vector(&(&diff * phi.as_vector()));
        let b = DensityField::from_vector(&(&kd * phi.as_vector()));
        assert!(sup_diff(&a, &b) <= 1e-10, "{spec}: {}", sup_diff(&a, &b));
    }
}

#[test]
fn green_flux_balance() {
    // ∫ ∂_ν S[φ]|_- = ∫ (-½I + K*)[φ] = 0 and ∫ ∂_ν S[φ]|_+ = ∫ φ
    let p = pan("kite:default", 256);
    let ks = free(&p, OperatorLabel::Kstar);
    for a in [[1.0, 0.2, 0.0, -0.5, 0.3, 0.1], [0.0, 1.0, 1.0, 0.0, -1.0, 0.4]] {
        let phi = trig(&p, a);
        let kp = ks.apply(&phi);
        let int = kp.integral(&p);
        let f = phi.integral(&p);
        for c in 0..2 {
            assert!((int[c] - 0.5 * f[c]).abs() <= 1e-10);
            assert!((int[c] + 0.5 * f[c] - f[c]).abs() <= 1e-10);
        }
    }
}

#[test]
fn periodic_perturbation_is_order_eta() {
    let p = pan("circle:0.25", 128);
    let green = default_green(&unit()).unwrap();
    let k = free(&p, OperatorLabel::K);
    let d: Vec<f64> = [0.05, 0.1, 0.2]
        .iter()
        .map(|&eta| {
            let ke = assemble(&p, OperatorLabel::KEta, &unit(), Some((eta, &green))).unwrap();
            (&ke.matrix - &k.matrix).amax() / (2.0 * PI / 128.0)
        })
        .collect();
    // the O(η) bound holds with a constant that does not grow as η decreases
    let c: Vec<f64> = d.iter().zip([0.05, 0.1, 0.2]).map(|(x, eta)| x / eta).collect();
    assert!(c[0] <= c[2] && c[1] <= c[2], "{c:?}");
    // ∇R(0) = 0 by evenness, so the kernel perturbation is in fact O(η²)
    let c2: Vec<f64> = d.iter().zip([0.05f64, 0.1, 0.2]).map(|(x, eta)| x / (eta * eta)).collect();
    let spread = c2.iter().cloned().fold(0.0, f64::max) / c2.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1.1, "{c2:?}");
}

#[test]
fn jumps_with_pinned_sign() {
    let p = pan("circle:0.25", 256);
    for a in [[1.0, 0.5, -0.3, 0.2, 0.1, 0.8], [0.0, -1.0, 0.4, 0.6, -0.7, 0.0]] {
        let r = verify_jumps(&p, &unit(), &trig(&p, a)).unwrap();
        assert!(r.single_continuity <= 1e-7, "{r:?}");
        assert!(r.conormal_jump <= 1e-6, "{r:?}");
        // interior trace minus exterior trace equals +φ
        assert!(r.double_jump <= 1e-6, "{r:?}");
        assert!(r.conormal_traces <= 1e-6 && r.double_traces <= 1e-6, "{r:?}");
    }
}

#[test]
fn kernel_basis_invariants() {
    for spec in ["circle:0.25", "kite:default", "ellipse:0.3,0.15"] {
        let p = pan(spec, 256);
        let kb = kernel_basis(&p, &unit()).unwrap();
        for j in 0..2 {
            let m = kb.phi_star[j].integral(&p);
            assert!((m[j] - 1.0).abs() <= 1e-12 && m[1 - j].abs() <= 1e-12, "{spec}: {m:?}");
        }
        assert!(kb.constancy_residual <= 1e-8, "{spec}: {}", kb.constancy_residual);
        assert!(kb.null_residual <= 1e-8);
        assert!((kb.a_t - kb.a_t.transpose()).amax() <= 1e-8);
        assert!(kb.singular_values[1] <= 1e-8 && kb.singular_values[2] >= 1e-3);
    }
}

#[test]
fn circle_kernel_basis_in_closed_form() {
    // On a circle of radius r the uniform density e_j/(2πr) is the kernel
    // element and S of it is constant inside: (c1/2π) log r - c2/(4π).
    // Hence A_T = (c2/(4π) - (c1/2π) log r) I.
    let r = 0.25;
    let prm = unit();
    let p = pan("circle:0.25", 256);
    let kb = kernel_basis(&p, &prm).unwrap();
    for j in 0..2 {
        let mut e = [0.0; 2];
        e[j] = 1.0 / (2.0 * PI * r);
        assert!(sup_diff(&kb.phi_star[j], &DensityField::constant(p.n, e)) <= 1e-10);
    }
    let alpha = prm.c2() / (4.0 * PI) - prm.c1() / (2.0 * PI) * r.ln();
    assert!((kb.a_t - nalgebra::Matrix2::identity() * alpha).amax() <= 1e-10, "{} vs {alpha}", kb.a_t);
    // the single layer of φ*_j away from the boundary reads -a*_j
    for x in [[0.0, 0.0], [0.1, -0.05]] {
        let v = eval_single(&p, &prm, &kb.phi_star[0], x, 4).unwrap();
        assert!((v[0] + kb.a_t[(0, 0)]).abs() <= 1e-9 && (v[1] + kb.a_t[(1, 0)]).abs() <= 1e-9, "{v:?}");
    }
}

#[test]
fn a_t_scaling_law() {
    let prm = unit();
    let base = make_curve(CurveKind::from_str("kite:default").unwrap()).unwrap();
    let a = kernel_basis(&panelize(&base, 256).unwrap(), &prm).unwrap().a_t;
    for r in [0.5, E, 2.0] {
        let b = kernel_basis(&panelize(&base.scaled(r), 256).unwrap(), &prm).unwrap().a_t;
        // A_{rT} - A_T = -(c1/2π) log r I: for r = e and λ = μ = 1 this is -1/(3π) I
        let shift = -prm.c1() / (2.0 * PI) * r.ln();
        assert!((b - a - nalgebra::Matrix2::identity() * shift).amax() <= 1e-6, "r = {r}");
    }
    assert!((prm.c1() / (2.0 * PI) - 1.0 / (3.0 * PI)).abs() < 1e-15);
}

#[test]
fn a_t_refinement_stable() {
    let a = kernel_basis(&pan("kite:default", 256), &unit()).unwrap().a_t;
    let b = kernel_basis(&pan("kite:default", 512), &unit()).unwrap().a_t;
    assert!((a - b).amax() <= 1e-6);
}

#[test]
fn rescue_leaves_good_curves_alone() {
    let c = make_curve(CurveKind::from_str("ellipse:0.3,0.15").unwrap()).unwrap();
    assert_eq!(kernel_basis_with_rescue(&c, 128, &unit()).unwrap().rescale, 1.0);
}

#[test]
fn decomposition_properties() {
    let p = pan("kite:default", 256);
    let prm = unit();
    let kb = kernel_basis(&p, &prm).unwrap();
    let c = decompose(&kb, &DensityField::constant(p.n, [0.7, -1.3]));
    assert!((c.pi0[0] - 0.7).abs() <= 1e-12 && (c.pi0[1] + 1.3).abs() <= 1e-12);
    assert!(c.pi1.sup_norm() <= 1e-12);

    let k = free(&p, OperatorLabel::K);
    let psi = trig(&p, [0.3, -1.0, 0.5, 0.2, 0.7, -0.4]);
    let half = scaled(&psi, 0.5);
    let phi = DensityField {
        values: k.apply(&psi).values.iter().zip(&half.values).map(|(a, b)| a - b).collect(),
    };
    let d = decompose(&kb, &phi);
    assert!(d.pi0[0].abs() <= 1e-9 && d.pi0[1].abs() <= 1e-9, "{:?}", d.pi0);

    let g = trig(&p, [1.0, 0.2, -0.3, 0.5, 0.1, 0.9]);
    let d = decompose(&kb, &g);
    let back = d.pi1.add_constant(d.pi0);
    assert!(sup_diff(&back, &g) <= 1e-14);
    for j in 0..2 {
        assert!(inner(&p, &kb.phi_star[j], &d.pi1).abs() <= 1e-10);
    }
    let again = decompose(&kb, &d.pi1);
    assert!(again.pi0[0].abs() <= 1e-10 && again.pi0[1].abs() <= 1e-10);
}

#[test]
fn periodic_dirichlet_solves() {
    let p = pan("kite:default", 256);
    let prm = unit();
    let green = default_green(&prm).unwrap();
    let eta = 0.1;
    let area = p.curve.area();
    let k = assemble(&p, OperatorLabel::KEta, &prm, Some((eta, &green))).unwrap();
    let h = DensityField::constant(p.n, [-eta * eta * area, 0.0]);
    let s = solve_periodic_dirichlet(&k, &h).unwrap();
    assert!(sup_diff(&s.g, &DensityField::constant(p.n, [1.0, 0.0])) <= 1e-8);
    let z = solve_periodic_dirichlet(&k, &DensityField::zeros(p.n)).unwrap();
    assert_eq!(z.g.sup_norm(), 0.0);
    let h = trig(&p, [0.2, 1.0, -0.5, 0.0, 0.4, 0.3]);
    let s = solve_periodic_dirichlet(&k, &h).unwrap();
    assert!(s.residual <= 1e-9 * h.sup_norm());
    assert!(solve_periodic_dirichlet(&free(&p, OperatorLabel::K), &h).is_err());
}

#[test]
fn double_layer_of_constants_off_boundary() {
    let p = pan("kite:default", 256);
    let prm = unit();
    for e in [[1.0, 0.0], [0.0, 1.0]] {
        let c = DensityField::constant(p.n, e);
        let inside = eval_double(&p, &prm, &c, [0.02, 0.03], 4).unwrap();
        let outside = eval_double(&p, &prm, &c, [0.6, -0.4], 4).unwrap();
        for i in 0..2 {
            assert!((inside[i] - e[i]).abs() <= 1e-10, "{inside:?}");
            assert!(outside[i].abs() <= 1e-10, "{outside:?}");
        }
    }
}

#[test]
fn double_layer_decays_like_inverse_distance() {
    let p = pan("kite:default", 256);
    let prm = unit();
    let phi = trig(&p, [0.3, -1.0, 0.5, 0.2, 0.7, -0.4]);
    let dir = [0.6, 0.8];
    let norm = |r: f64| {
        let v = eval_double(&p, &prm, &phi, [r * dir[0], r * dir[1]], 1).unwrap();
        v[0].hypot(v[1])
    };
    let ratio = norm(10.0) / norm(20.0);
    assert!((ratio - 2.0).abs() <= 0.2, "{ratio}");
}

#[test]
fn near_boundary_evaluation_needs_upsampling() {
    let p = pan("circle:0.25", 64);
    let phi = DensityField::constant(p.n, [1.0, 0.0]);
    assert!(eval_single(&p, &unit(), &phi, [0.2499, 0.0], 1).is_err());
}

#[test]
fn operator_export_layout() {
    let p = pan("circle:0.25", 32);
    let k = free(&p, OperatorLabel::K);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.bin");
    k.export_binary(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"K\n"));
    let n = u64::from_le_bytes(bytes[2..10].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    assert_eq!((n, d), (32, 2));
    assert!(f64::from_le_bytes(bytes[18..26].try_into().unwrap()).is_nan());
    assert_eq!(bytes.len(), 26 + 8 * 64 * 64);
    let first = f64::from_le_bytes(bytes[26..34].try_into().unwrap());
    assert_eq!(first, k.matrix[(0, 0)]);
    let second = f64::from_le_bytes(bytes[34..42].try_into().unwrap());
    assert_eq!(second, k.matrix[(0, 1)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn single_layer_symmetric_on_random_densities(a in prop::array::uniform6(-1.0f64..1.0), b in prop::array::uniform6(-1.0f64..1.0)) {
        let p = pan("ellipse:0.3,0.15", 128);
        let s = free(&p, OperatorLabel::S);
        let (phi, psi) = (trig(&p, a), trig(&p, b));
        let d = inner(&p, &s.apply(&phi), &psi) - inner(&p, &phi, &s.apply(&psi));
        prop_assert!(d.abs() <= 1e-10);
    }
}
