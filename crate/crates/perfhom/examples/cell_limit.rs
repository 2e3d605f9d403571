//! `⟨χ⟩/|log η|` approaching `(c1/2π) I` as the holes shrink.

use std::f64::consts::PI;
use std::str::FromStr;

use perfhom::cell::{average_limit_check, QuadratureOptions};
use perfhom::geometry::make_curve;
use perfhom::{CurveKind, LameParams};

fn main() -> perfhom::Result<()> {
    let params = LameParams::planar(1.0, 1.0)?;
    let curve = make_curve(CurveKind::from_str("circle:0.25")?)?;
    let etas = [1e-2, 1e-3, 1e-4];
    let rep = average_limit_check(&curve, &params, &etas, 256, Some(&QuadratureOptions::from_grid(128)))?;
    println!("limit c1/2pi = {:.6}", params.c1() / (2.0 * PI));
    for (i, eta) in etas.iter().enumerate() {
        let v = rep.averages[i] / eta.ln().abs();
        println!(
            "eta {eta:.0e}: <v_1> = {:.6}, deviation {:.3e}, L2 deviation {:.3e}",
            v[(0, 0)],
            rep.deviation[i],
            rep.l2.as_ref().map_or(f64::NAN, |l| l[i])
        );
    }
    println!("average fit exponent {:.3} (R^2 {:.4})", rep.fit.exponent, rep.fit.r_squared);
    if let Some(f) = rep.l2_fit {
        println!("L2 fit exponent {:.3}", f.exponent);
    }
    Ok(())
}
