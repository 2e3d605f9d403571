//! Least-squares rate fits in log-log coordinates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the abscissa is transformed before the log-log fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateLaw {
    /// `y ≈ C x^p`.
    Power,
    /// `y ≈ C |log x|^{-p}`, the planar logarithmic laws.
    InverseLog,
}

impl fmt::Display for RateLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateLaw::Power => "power",
            RateLaw::InverseLog => "inverse_log",
        })
    }
}

impl FromStr for RateLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "power" => Ok(RateLaw::Power),
            "inverse_log" | "log" => Ok(RateLaw::InverseLog),
            other => Err(Error::Config(format!("unknown rate law `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub r_squared: f64,
}

/// Fits `ys` against `xs` under `law`; needs at least three positive samples.
pub fn fit_rate(xs: &[f64], ys: &[f64], law: RateLaw) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!("{} abscissae vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!("need >= 3 points, got {}", xs.len())));
    }
    let mut u = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        if !(y > 0.0) || !(x > 0.0) {
            return Err(Error::Fit(format!("non-positive sample ({x}, {y})")));
        }
        let t = match law {
            RateLaw::Power => x,
            RateLaw::InverseLog => {
                let l = x.ln().abs();
                if l == 0.0 {
                    return Err(Error::Fit("log law at x = 1".into()));
                }
                1.0 / l
            }
        };
        u.push((t.ln(), y.ln()));
    }
    let n = u.len() as f64;
    let mx = u.iter().map(|p| p.0).sum::<f64>() / n;
    let my = u.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = u.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = u.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = u.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all abscissae coincide".into()));
    }
    let p = sxy / sxx;
    let b = my - p * mx;
    let sse: f64 = u.iter().map(|q| (q.1 - b - p * q.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit {
        coefficient: b.exp(),
        exponent: p,
        r_squared,
    })
}
