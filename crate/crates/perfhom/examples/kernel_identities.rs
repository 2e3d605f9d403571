//! `K_T` maps constants to half themselves, and the periodic operator shifts
//! them by `-η²|T|`.

use std::str::FromStr;

use perfhom::bie::{assemble, DensityField, OperatorLabel};
use perfhom::cell::default_green;
use perfhom::geometry::{make_curve, panelize};
use perfhom::{CurveKind, LameParams};

fn main() -> perfhom::Result<()> {
    let params = LameParams::planar(1.0, 1.0)?;
    let green = default_green(&params)?;
    for spec in ["circle:0.25", "kite:default"] {
        let curve = make_curve(CurveKind::from_str(spec)?)?;
        let pan = panelize(&curve, 256)?;
        let k = assemble(&pan, OperatorLabel::K, &params, None)?;
        for j in 0..2 {
            let mut e = [0.0; 2];
            e[j] = 1.0;
            let c = DensityField::constant(pan.n, e);
            let r = k.apply(&c).values.iter().zip(&c.values).map(|(a, b)| (a - 0.5 * b).abs()).fold(0.0, f64::max);
            println!("{spec}: |K[e_{j}] - e_{j}/2| = {r:.3e}");
        }
        for eta in [0.05, 0.1, 0.2] {
            let k_eta = assemble(&pan, OperatorLabel::KEta, &params, Some((eta, &green)))?;
            let c = DensityField::constant(pan.n, [1.0, 0.0]);
            let shift = eta * eta * curve.area();
            let r = k_eta
                .apply(&c)
                .values
                .iter()
                .zip(&c.values)
                .map(|(a, b)| (a - 0.5 * b + shift * b).abs())
                .fold(0.0, f64::max);
            println!("{spec}: eta {eta}: |(-I/2 + K^eta)[e_1] + eta^2|T| e_1| = {r:.3e}");
        }
    }
    Ok(())
}
