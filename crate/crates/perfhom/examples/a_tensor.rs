//! Kernel basis of `-½I + K*_T` and the tensor `A_T`, with its behaviour under dilation.

use std::f64::consts::{E, PI};
use std::str::FromStr;

use perfhom::bie::kernel_basis;
use perfhom::geometry::{make_curve, panelize};
use perfhom::{CurveKind, LameParams};

fn main() -> perfhom::Result<()> {
    let params = LameParams::planar(1.0, 1.0)?;
    let c = params.c1() / (2.0 * PI);
    for spec in ["circle:0.25", "ellipse:0.3,0.15", "kite:default"] {
        let kind = CurveKind::from_str(spec)?;
        let kb = kernel_basis(&panelize(&make_curve(kind)?, 256)?, &params)?;
        println!("{spec}: A_T = {:?}", kb.a_t);
        println!("  singular values {:?}", kb.singular_values);
        for r in [0.5, E, 2.0] {
            let scaled = make_curve(kind)?.scaled(r);
            let kr = kernel_basis(&panelize(&scaled, 256)?, &params)?;
            let d = (kr.a_t - kb.a_t + nalgebra::Matrix2::identity() * (c * r.ln())).amax();
            println!("  r = {r:.4}: |A_rT - A_T + (c1/2pi) log r I| = {d:.3e}");
        }
    }
    Ok(())
}
