//! Two-sided traces of the single and double layer for a trigonometric density.

use std::str::FromStr;

use perfhom::bie::{verify_jumps, DensityField};
use perfhom::geometry::{make_curve, panelize};
use perfhom::{CurveKind, LameParams};

fn main() -> perfhom::Result<()> {
    let params = LameParams::planar(1.0, 1.0)?;
    let pan = panelize(&make_curve(CurveKind::from_str("kite:default")?)?, 384)?;
    let phi = DensityField::from_fn(&pan, |_, t| [(2.0 * t).cos() + 0.3, (3.0 * t).sin()]);
    let r = verify_jumps(&pan, &params, &phi)?;
    println!("single layer continuity      {:.3e}", r.single_continuity);
    println!("conormal jump = phi          {:.3e}", r.conormal_jump);
    println!("double layer jump = +phi     {:.3e}", r.double_jump);
    println!("conormal traces (±I/2 + K*)  {:.3e}", r.conormal_traces);
    println!("double traces (∓I/2 + K)     {:.3e}", r.double_traces);
    Ok(())
}
