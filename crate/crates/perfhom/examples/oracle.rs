//! Finite-difference solve in a perforated square, compared with the
//! super-critical effective field `M⁻¹ f`.

use std::str::FromStr;

use perfhom::cell::{effective_matrix, sigma, solve_cell, EffectiveRegime, MConvention, Regime};
use perfhom::geometry::{build_perforation, make_curve};
use perfhom::homogenize::{poincare_constant, required_grid, solve_effective, solve_perforated, standard_forcing, weak_limit_metric};
use perfhom::{CurveKind, LameParams};

fn main() -> perfhom::Result<()> {
    let params = LameParams::planar(1.0, 1.0)?;
    let curve = make_curve(CurveKind::from_str("circle:0.25")?)?;
    let (eps, eta) = (0.25, 0.25);
    let perf = build_perforation(eps, eta, &curve)?;
    let n = required_grid(&perf).next_multiple_of(4);
    let sol = solve_perforated(&perf, &standard_forcing, &params, n)?;
    let s = sigma(eps, eta, 2)?;
    println!("grid {n}, sigma {s:.4}, CG iterations {}", sol.stats.iterations);
    println!("energy identity {:.3e}", sol.energy_identity);
    println!("Poincare constant {:.4}", poincare_constant(&sol.field, s));

    let cell = solve_cell(&curve, eta, &params, 128)?;
    let em = effective_matrix(EffectiveRegime::Classical, &params, Some(&cell), MConvention::Proof)?;
    let m = nalgebra::Matrix2::from_fn(|i, j| em.m[(i, j)]);
    let eff = solve_effective(Regime::SuperCritical, &m, None, &standard_forcing, &params, n)?;
    let mut scaled = sol.field.clone();
    for v in scaled.values.iter_mut() {
        *v = [v[0] / (s * s), v[1] / (s * s)];
    }
    println!("weak-limit metric of u/sigma^2 vs M^-1 f: {:.3e}", weak_limit_metric(&scaled, &eff, 2.0 * eps, eps)?);
    Ok(())
}
