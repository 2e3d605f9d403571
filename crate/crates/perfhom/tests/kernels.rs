use std::f64::consts::{E, PI};

use approx::assert_abs_diff_eq;
use perfhom::kernels::{
    conormal_kernel, kelvin, kelvin_gradient, kernel_difference, lame_constants, EwaldConfig, Kelvin2, Mat2,
    PeriodicGreen,
};
use perfhom::special::gauss_legendre;
use perfhom::LameParams;
use proptest::prelude::*;

fn unit() -> LameParams {
    LameParams::planar(1.0, 1.0).unwrap()
}

fn green() -> PeriodicGreen {
    PeriodicGreen::new(&unit(), EwaldConfig::default()).unwrap()
}

/// `μΔu + (λ+μ)∇div u` of a matrix field (columns are vector fields) by
/// centered differences with step `h`.
fn lame_fd(u: impl Fn([f64; 2]) -> Mat2, x: [f64; 2], h: f64, p: &LameParams) -> Mat2 {
    let at = |dx: f64, dy: f64| u([x[0] + dx * h, x[1] + dy * h]);
    let c = at(0.0, 0.0);
    let uxx = (at(1.0, 0.0) - c * 2.0 + at(-1.0, 0.0)) / (h * h);
    let uyy = (at(0.0, 1.0) - c * 2.0 + at(0.0, -1.0)) / (h * h);
    let uxy = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
    let mut out = (uxx + uyy) * p.mu;
    for k in 0..2 {
        // ∂_x div = u¹_xx + u²_xy, ∂_y div = u¹_xy + u²_yy
        out[(0, k)] += (p.lambda + p.mu) * (uxx[(0, k)] + uxy[(1, k)]);
        out[(1, k)] += (p.lambda + p.mu) * (uxy[(0, k)] + uyy[(1, k)]);
    }
    out
}

#[test]
fn lame_constants_by_substitution() {
    let (c1, c2, om) = lame_constants(&unit());
    assert_abs_diff_eq!(c1, 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(c2, 1.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(om, 2.0 * PI, epsilon = 1e-15);
    let (c1, c2, _) = lame_constants(&LameParams::planar(0.0, 1.0).unwrap());
    assert_abs_diff_eq!(c1, 0.75, epsilon = 1e-15);
    assert_abs_diff_eq!(c2, 0.25, epsilon = 1e-15);
    let gaps: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|&l| {
            let p = LameParams::planar(l, 1.0).unwrap();
            p.c1() - p.c2()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]) && gaps[3] < 1e-3);
}

#[test]
fn kelvin_values() {
    let g = kelvin(&[1.0, 0.0], &unit()).unwrap();
    assert_abs_diff_eq!(g[(0, 0)], -1.0 / (6.0 * PI), epsilon = 1e-15);
    assert_abs_diff_eq!(g[(0, 1)], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g[(1, 1)], 0.0, epsilon = 1e-15);
    let p3 = LameParams::new(1.0, 1.0, 3).unwrap();
    let g3 = kelvin(&[2.0, 0.0, 0.0], &p3).unwrap();
    assert_abs_diff_eq!(g3[(0, 0)], -1.0 / (8.0 * PI), epsilon = 1e-15);
    assert!(kelvin(&[0.0, 0.0], &unit()).is_err());
}

#[test]
fn kelvin_3d_solves_lame_off_origin() {
    let p = LameParams::new(1.0, 1.0, 3).unwrap();
    let x = [0.6, -0.3, 0.4];
    let h = 1e-3;
    let g = |d: [f64; 3]| kelvin(&[x[0] + d[0], x[1] + d[1], x[2] + d[2]], &p).unwrap();
    let e = |i: usize, s: f64| {
        let mut d = [0.0; 3];
        d[i] = s;
        d
    };
    let mut lap = g([0.0; 3]) * -6.0;
    for i in 0..3 {
        lap += g(e(i, h)) + g(e(i, -h));
    }
    lap /= h * h;
    // ∂_i∂_j u^j_k
    let mut graddiv = nalgebra::DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let dij = |a: f64, b: f64| {
                let mut d = [0.0; 3];
                d[i] += a;
                d[j] += b;
                g(d)
            };
            let second = (dij(h, h) - dij(h, -h) - dij(-h, h) + dij(-h, -h)) / (4.0 * h * h);
            for k in 0..3 {
                graddiv[(i, k)] += second[(j, k)];
            }
        }
    }
    let res = lap * p.mu + graddiv * (p.lambda + p.mu);
    assert!(res.amax() < 1e-5, "{res}");
}

#[test]
fn log_rescaling_law() {
    let p = unit();
    let k = Kelvin2::new(&p);
    let x = [0.37, -0.21];
    for r in [0.5, 2.0, E] {
        let d = k.value([r * x[0], r * x[1]]) - k.value(x) - Mat2::identity() * (p.c1() / (2.0 * PI) * r.ln());
        assert!(d.amax() <= 1e-13, "r = {r}: {d}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let p = unit();
    let x = [0.7, 0.3];
    let g = kelvin_gradient(&x, &p).unwrap();
    let h = 1e-5;
    for i in 0..2 {
        let mut a = x;
        let mut b = x;
        a[i] += h;
        b[i] -= h;
        let fd = (kelvin(&a, &p).unwrap() - kelvin(&b, &p).unwrap()) / (2.0 * h);
        assert!((fd - &g[i]).amax() <= 1e-8, "{i}");
    }
    // homogeneity of degree -1
    let g2 = kelvin_gradient(&[1.4, 0.6], &p).unwrap();
    for i in 0..2 {
        assert!((&g2[i] - &g[i] / 2.0).amax() <= 1e-15);
    }
    // the planar evaluator agrees with the generic one
    let k = Kelvin2::new(&p).gradient(x);
    for i in 0..2 {
        for (a, b) in k[i].iter().zip(g[i].iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }
}

#[test]
fn divergence_consistent_with_conormal() {
    // conormal kernel with N_y ∥ x - y has no Cauchy part and equals minus the
    // conormal derivative of Γ_k composed from kelvin_gradient
    let p = LameParams::planar(2.0, 0.5).unwrap();
    let kel = Kelvin2::new(&p);
    let (x, y) = ([0.3, 0.1], [-0.2, 0.4]);
    let z = [x[0] - y[0], x[1] - y[1]];
    for ny in [[0.6, 0.8], [z[0] / 0.5831, z[1] / 0.5831]] {
        let k = conormal_kernel(x, y, ny, &p).unwrap();
        let g = kelvin_gradient(&z, &p).unwrap();
        let mut expect = Mat2::zeros();
        for kk in 0..2 {
            let div = g[0][(0, kk)] + g[1][(1, kk)];
            for i in 0..2 {
                expect[(i, kk)] = -((p.lambda + p.mu) * div * ny[i] + p.mu * (ny[0] * g[0][(i, kk)] + ny[1] * g[1][(i, kk)]));
            }
        }
        assert!((k.total() - expect).amax() <= 1e-13, "{}\n{expect}", k.total());
        assert!((kel.conormal_of(&kel.gradient(z), ny) + expect).amax() <= 1e-13);
    }
    let par = [z[0] / z[0].hypot(z[1]), z[1] / z[0].hypot(z[1])];
    assert!(conormal_kernel(x, y, par, &p).unwrap().cauchy.amax() <= 1e-15);
}

#[test]
fn kernel_difference_against_composed_kernels() {
    let p = LameParams::planar(1.5, 0.7).unwrap();
    let pt = |t: f64| [0.25 * t.cos(), 0.25 * t.sin()];
    let nm = |t: f64| [t.cos(), t.sin()];
    for (s, t) in [(0.3, 1.9), (2.0, 2.01), (0.0, PI), (4.0, 5.5)] {
        let (x, y) = (pt(s), pt(t));
        // K*(x;y) = K(y;x)ᵀ
        let kstar = conormal_kernel(y, x, nm(s), &p).unwrap().total().transpose();
        let k = conormal_kernel(x, y, nm(t), &p).unwrap().total();
        let d = kernel_difference(x, y, nm(s), nm(t), &p).unwrap();
        assert!((d - (kstar - k)).amax() <= 1e-12, "{s},{t}: {d} vs {}", kstar - k);
    }
    assert!(kernel_difference([0.1, 0.0], [0.1, 0.0], [1.0, 0.0], [1.0, 0.0], &p).is_err());
}

#[test]
fn kernel_difference_stays_bounded_on_circle() {
    let p = unit();
    let n = 256;
    let mut sup: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (s, t) = (2.0 * PI * i as f64 / n as f64, 2.0 * PI * j as f64 / n as f64);
            let x = [0.25 * s.cos(), 0.25 * s.sin()];
            let y = [0.25 * t.cos(), 0.25 * t.sin()];
            let d = kernel_difference(x, y, [s.cos(), s.sin()], [t.cos(), t.sin()], &p).unwrap();
            sup = sup.max(d.amax() * (x[0] - y[0]).hypot(x[1] - y[1]));
        }
    }
    // on a circle the difference is O(1), so |d|·|x-y| ≤ diameter·O(1)
    assert!(sup.is_finite() && sup < 1.0, "{sup}");
}

#[test]
fn periodic_green_even_and_symmetric() {
    let g = green();
    for x in [[0.31, 0.17], [-0.4, 0.05], [0.12, -0.33], [0.5, 0.5], [0.01, 0.02]] {
        let (a, da) = g.green(x).unwrap();
        let (b, db) = g.green([-x[0], -x[1]]).unwrap();
        assert!((a - b).amax() <= 1e-12);
        assert!((a - a.transpose()).amax() <= 1e-12);
        assert!((da[0] + db[0]).amax() <= 1e-10 && (da[1] + db[1]).amax() <= 1e-10);
    }
    // periodicity across cell faces, to the Ewald accuracy
    let (a, _) = g.green([0.5, 0.2]).unwrap();
    let (b, _) = g.green([-0.5, 0.2]).unwrap();
    assert!((a - b).amax() <= g.cfg.accuracy, "{}", (a - b).amax());
}

#[test]
fn periodic_green_has_zero_mean() {
    // ∫_cell Γ = (c1/2π) ∫ log|x| I - (c2/2π) ∫ x xᵀ/|x|², with
    // ∫_{[-1/2,1/2]²} log|x| = (π/2 - 3 - log 2)/2 and ∫ x_i x_j/|x|² = δ_ij/2
    let p = unit();
    let g = green();
    let log_int = 0.5 * (PI / 2.0 - 3.0 - 2f64.ln());
    let (nodes, weights) = gauss_legendre(24);
    let mut r = Mat2::zeros();
    for (xa, wa) in nodes.iter().zip(&weights) {
        for (xb, wb) in nodes.iter().zip(&weights) {
            r += g.remainder_direct([0.5 * xa, 0.5 * xb]).0 * (0.25 * wa * wb);
        }
    }
    let mean = r + Mat2::identity() * (p.c1() / (2.0 * PI) * log_int - p.c2() / (4.0 * PI));
    assert!(mean.amax() <= 1e-6, "{mean}");

    // the closed-form log integral by brute-force polar quadrature on one octant
    let mut s = 0.0;
    let m = 400;
    for (t, wt) in nodes.iter().zip(&weights) {
        let th = PI / 8.0 * (t + 1.0);
        let rmax = 0.5 / th.cos();
        for i in 0..m {
            let rr = (i as f64 + 0.5) / m as f64 * rmax;
            s += PI / 8.0 * wt * rr * rr.ln() * rmax / m as f64;
        }
    }
    assert!((8.0 * s - log_int).abs() < 1e-5, "{} vs {log_int}", 8.0 * s);
}

#[test]
fn periodic_green_solves_lame_with_unit_mean_source() {
    let p = unit();
    let g = green();
    let x = [0.31, 0.17];
    let val = g.green(x).unwrap().0;
    let res = lame_fd(|y| g.green(y).unwrap().0, x, 1e-3, &p) + Mat2::identity();
    assert!(res.amax() <= 1e-3 * val.amax(), "{res}");
}

#[test]
fn remainder_limit_and_evenness() {
    let g = green();
    let kel = Kelvin2::new(&unit());
    let r0 = g.remainder_direct([0.0, 0.0]).0;
    for t in [1e-2, 1e-3, 1e-4] {
        let x = [0.6 * t, 0.8 * t];
        let d = g.green(x).unwrap().0 - kel.value(x) - r0;
        assert!(d.amax() <= 10.0 * t, "{t}: {d}");
    }
    for x in [[0.2, 0.3], [-0.45, 0.1]] {
        let a = g.remainder(x).0;
        let b = g.remainder([-x[0], -x[1]]).0;
        assert!((a - b).amax() <= 1e-12);
    }
}

#[test]
fn remainder_gradient_bounded_under_refinement() {
    let g = green();
    let sup = |n: usize| {
        let mut s: f64 = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = [-0.5 + i as f64 / n as f64, -0.5 + j as f64 / n as f64];
                let (_, d) = g.remainder_direct(x);
                s = s.max(d[0].amax()).max(d[1].amax());
            }
        }
        s
    };
    let (a, b) = (sup(32), sup(64));
    assert!(a.is_finite() && (a - b).abs() <= 0.05 * b, "{a} vs {b}");
}

#[test]
fn table_agrees_with_direct_evaluation() {
    let g = green();
    for x in [[0.013, -0.27], [0.4999, 0.31], [-0.222, 0.111]] {
        let (a, da) = g.remainder(x);
        let (b, db) = g.remainder_direct(x);
        assert!((a - b).amax() <= 1e-9);
        assert!((da[0] - db[0]).amax() <= 1e-7 && (da[1] - db[1]).amax() <= 1e-7);
    }
}

#[test]
fn scaled_green_tends_to_kelvin_plus_constant() {
    let g = green();
    let kel = Kelvin2::new(&unit());
    let r0 = g.remainder_direct([0.0, 0.0]).0;
    let dev = |eta: f64| {
        let mut s: f64 = 0.0;
        for x in [[1.0, 0.0], [0.3, -0.7], [-0.5, 0.5]] {
            s = s.max((g.scaled_green(x, eta).unwrap().0 - kel.value(x) - r0).amax());
        }
        s
    };
    let d: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&e| dev(e)).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]) && d[3] < 1e-6, "{d:?}");
    assert!(g.scaled_green([0.0, 0.0], 0.1).is_err());
}

#[test]
fn scaled_green_solves_rescaled_problem() {
    let p = unit();
    let g = green();
    for eta in [0.25, 0.1] {
        for x in [[1.1, 0.4], [2.5, -1.0]] {
            let res = lame_fd(|y| g.scaled_green(y, eta).unwrap().0, x, 1e-3, &p) + Mat2::identity() * (eta * eta);
            assert!(res.amax() <= 1e-5, "eta {eta}: {res}");
        }
        let a = g.scaled_green([0.7, 0.2], eta).unwrap().0;
        let b = g.scaled_green([-0.7, -0.2], eta).unwrap().0;
        assert!((a - b).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kelvin_even_and_symmetric(x in -2.0f64..2.0, y in -2.0f64..2.0, lam in 0.0f64..5.0, mu in 0.1f64..5.0) {
        prop_assume!(x.hypot(y) > 1e-3);
        let p = LameParams::planar(lam, mu).unwrap();
        let a = kelvin(&[x, y], &p).unwrap();
        let b = kelvin(&[-x, -y], &p).unwrap();
        prop_assert!((&a - &b).amax() <= 1e-12);
        prop_assert!((&a - a.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn adjoint_kernel_relation(s in 0.0f64..std::f64::consts::TAU, t in 0.0f64..std::f64::consts::TAU) {
        prop_assume!((s - t).abs() > 1e-3);
        let p = unit();
        let (x, y) = ([0.25 * s.cos(), 0.25 * s.sin()], [0.25 * t.cos(), 0.25 * t.sin()]);
        let (nx, ny) = ([s.cos(), s.sin()], [t.cos(), t.sin()]);
        // in (component, column) layout the x-conormal of Γ_k(x - y) is K(y;x);
        // with K* = K + (K* - K) indexed as in the kernel display, K*_{ik}(x;y) = K_{ki}(y;x)
        let kel = Kelvin2::new(&p);
        let conormal_x = kel.conormal_of(&kel.gradient([x[0] - y[0], x[1] - y[1]]), nx);
        let k_yx = conormal_kernel(y, x, nx, &p).unwrap().total();
        prop_assert!((conormal_x - k_yx).amax() <= 1e-12, "{} {}", conormal_x, k_yx);
        let kstar = conormal_kernel(x, y, ny, &p).unwrap().total() + kernel_difference(x, y, nx, ny, &p).unwrap();
        prop_assert!((kstar - k_yx.transpose()).amax() <= 1e-12);
    }
}
