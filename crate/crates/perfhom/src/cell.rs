//! The rescaled cell problem `-L χ_k = η² e_k` in `η⁻¹𝕋² \ T̄`, `χ_k = 0` on
//! `T`, solved by the representation `χ_k = G^η_k + c_k + D^η[g_k]`, together
//! with cell averages, the effective matrix `M`, the oscillating fields
//! `v^ε_k` and the scale factor `σ_ε`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bie::{
    assemble, decompose, extrapolate_to_zero, kernel_basis, solve_periodic_dirichlet, upsample_density, DensityField,
    KernelBasis, OperatorLabel,
};
use crate::error::{Error, Result};
use crate::geometry::{panelize, Curve, LameParams, Panelization};
use crate::kernels::{EwaldConfig, Kelvin2, Mat2, PeriodicGreen};
use crate::rates::{fit_rate, RateFit, RateLaw};
use crate::special::gauss_legendre;

/// `σ_ε`: `σ² = ε² η^{-(d-2)}` for `d = 3`, `σ² = ε² |log η|` for `d = 2`.
pub fn sigma(epsilon: f64, eta: f64, d: usize) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRange(format!("epsilon = {epsilon} not in (0,1)")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::OutOfRange(format!("eta = {eta} not in (0,1)")));
    }
    let s2 = match d {
        2 => epsilon * epsilon * eta.ln().abs(),
        3 => epsilon * epsilon / eta,
        _ => return Err(Error::OutOfRange(format!("dimension {d}"))),
    };
    Ok(s2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `σ_ε → ∞`.
    SubCritical,
    /// `σ_ε → σ_0 > 0`.
    Critical,
    /// `σ_ε → 0`.
    SuperCritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::SubCritical => "sub_critical",
            Regime::Critical => "critical",
            Regime::SuperCritical => "super_critical",
        })
    }
}

/// Declared hole-cell ratio law `η(ε)`. The regime is read off the declared
/// law, not inferred from finitely many samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaLaw {
    /// `η = v`.
    Fixed(f64),
    /// `η = ε^p`.
    Power(f64),
    /// `η = exp(-a/ε²)`.
    Exp(f64),
    /// `η = exp(-a ε^{-p})`.
    ExpPower { a: f64, p: f64 },
}

impl EtaLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EtaLaw::Fixed(v) => v > 0.0 && v < 1.0,
            EtaLaw::Power(p) => p > 0.0,
            EtaLaw::Exp(a) => a > 0.0,
            EtaLaw::ExpPower { a, p } => a > 0.0 && p > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid eta law `{self}`")))
        }
    }

    pub fn eta(&self, epsilon: f64) -> f64 {
        match *self {
            EtaLaw::Fixed(v) => v,
            EtaLaw::Power(p) => epsilon.powf(p),
            EtaLaw::Exp(a) => (-a / (epsilon * epsilon)).exp(),
            EtaLaw::ExpPower { a, p } => (-a * epsilon.powf(-p)).exp(),
        }
    }

    pub fn regime(&self, d: usize) -> Regime {
        let by_exponent = |q: f64| {
            if q > 0.0 {
                Regime::SubCritical
            } else if q == 0.0 {
                Regime::Critical
            } else {
                Regime::SuperCritical
            }
        };
        match (*self, d) {
            (EtaLaw::Fixed(_), _) => Regime::SuperCritical,
            (EtaLaw::Power(_), 2) => Regime::SuperCritical,
            (EtaLaw::Power(p), _) => by_exponent(p - 2.0),
            (EtaLaw::Exp(_), 2) => Regime::Critical,
            (EtaLaw::Exp(_), _) => Regime::SubCritical,
            (EtaLaw::ExpPower { p, .. }, 2) => by_exponent(p - 2.0),
            (EtaLaw::ExpPower { .. }, _) => Regime::SubCritical,
        }
    }

    /// Limit `σ_0` in the critical regime.
    pub fn sigma0(&self, d: usize) -> Option<f64> {
        if self.regime(d) != Regime::Critical {
            return None;
        }
        match (*self, d) {
            (EtaLaw::Exp(a), 2) | (EtaLaw::ExpPower { a, .. }, 2) => Some(a.sqrt()),
            (EtaLaw::Power(_), 3) => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for EtaLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaLaw::Fixed(v) => write!(f, "fixed:{v}"),
            EtaLaw::Power(p) => write!(f, "power:{p}"),
            EtaLaw::Exp(a) => write!(f, "exp:{a}"),
            EtaLaw::ExpPower { a, p } => write!(f, "exp_power:{a},{p}"),
        }
    }
}

impl FromStr for EtaLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("eta law `{s}` needs `kind:args`")))?;
        let num = |t: &str| -> Result<f64> {
            let t = t.trim().trim_start_matches("ε^").trim_start_matches("eps^");
            t.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{t}` in eta law `{s}`")))
        };
        let law = match kind.trim() {
            "fixed" => EtaLaw::Fixed(num(args)?),
            "power" => EtaLaw::Power(num(args)?),
            "exp" => EtaLaw::Exp(num(args)?),
            "exp_power" => {
                let (a, p) = args
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("exp_power needs `a,p`, got `{args}`")))?;
                EtaLaw::ExpPower { a: num(a)?, p: num(p)? }
            }
            other => return Err(Error::Config(format!("unknown eta law `{other}`"))),
        };
        law.validate()?;
        Ok(law)
    }
}

impl Serialize for EtaLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EtaLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One level of near-boundary refinement: an upsampled copy of the boundary
/// with `g'` interpolated onto it.
#[derive(Debug, Clone)]
struct Tier {
    pan: Panelization,
    g_prime: [DensityField; 2],
    band: f64,
}

/// Which tier evaluates a point, and the subtraction constant when refined.
#[derive(Debug, Clone, Copy)]
struct Selection {
    tier: usize,
    anchor: Option<[[f64; 2]; 2]>,
}

/// Upsampling factors of the evaluation tiers.
const TIERS: [usize; 3] = [1, 8, 64];

/// Boundary-reduction pieces of the cell average.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AverageParts {
    /// `∫_T Γ`.
    pub gamma_in_hole: Matrix2<f64>,
    /// `∫_T R(η·)`.
    pub remainder_in_hole: Matrix2<f64>,
    /// `∫_T D^η[g_k]^j` (interior values), column `k`.
    pub double_layer_in_hole: Matrix2<f64>,
    /// Same for `g'_k`.
    pub double_layer_prime_in_hole: Matrix2<f64>,
}

/// Solved cell problem at a fixed `η`; immutable and shareable.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub eta: f64,
    pub params: LameParams,
    pub curve: Curve,
    pub pan: Panelization,
    pub kernel_basis: KernelBasis,
    pub green: PeriodicGreen,
    /// Column `k` is `c_k`, `(c_k)^j = -⟨φ*_j, G^η_k⟩`.
    pub c: Matrix2<f64>,
    /// `h_k = -G^η_k - c_k` on the nodes.
    pub h: [DensityField; 2],
    /// Solutions of `(-½I + K^η)[g_k] = h_k`.
    pub g: [DensityField; 2],
    /// Column `k` is `⟨g_k⟩ = Π_0[g_k]`.
    pub g_mean: Matrix2<f64>,
    /// `g'_k = Π_1[g_k]`.
    pub g_prime: [DensityField; 2],
    /// `sup |η²|T|⟨g⟩ - η Π_0 K^η_{T,1}[g'] + Π_0 h|` over both columns.
    pub balance_residual: f64,
    pub solve_residual: f64,
    pub condition: f64,
    /// Cell average `⟨χ⟩ = η² ∫_{η⁻¹𝕋²\T̄} χ` (column `k` is `⟨χ_k⟩`).
    pub average: Matrix2<f64>,
    pub average_parts: AverageParts,
    area: f64,
    kel: Kelvin2,
    tiers: Vec<Tier>,
}

/// Default Ewald settings shared by all cell solves.
pub fn default_green(params: &LameParams) -> Result<PeriodicGreen> {
    PeriodicGreen::new(params, EwaldConfig::default())
}

pub fn solve_cell(curve: &Curve, eta: f64, params: &LameParams, n_nodes: usize) -> Result<CellSolution> {
    solve_cell_with(curve, eta, params, n_nodes, &default_green(params)?)
}

pub fn solve_cell_with(
    curve: &Curve,
    eta: f64,
    params: &LameParams,
    n_nodes: usize,
    green: &PeriodicGreen,
) -> Result<CellSolution> {
    if params.dim != 2 {
        return Err(Error::OutOfRange("cell solves are planar only".into()));
    }
    if !(eta > 0.0 && eta <= 0.25) {
        return Err(Error::OutOfRange(format!("eta = {eta} outside (0, 0.25]")));
    }
    let pan = panelize(curve, n_nodes)?;
    let kb = kernel_basis(&pan, params)?;
    let n = pan.n;
    let area = curve.area();

    let gn: Vec<Mat2> = pan
        .points
        .iter()
        .map(|&y| green.scaled_green(y, eta).map(|v| v.0))
        .collect::<Result<_>>()?;
    let mut c = Matrix2::zeros();
    for j in 0..2 {
        for k in 0..2 {
            let mut s = 0.0;
            for b in 0..n {
                let p = kb.phi_star[j].at(b);
                s += pan.weight(b) * (p[0] * gn[b][(0, k)] + p[1] * gn[b][(1, k)]);
            }
            c[(j, k)] = -s;
        }
    }
    let h: [DensityField; 2] = [0, 1].map(|k| DensityField {
        values: (0..2 * n).map(|r| -gn[r / 2][(r % 2, k)] - c[(r % 2, k)]).collect(),
    });

    let per = Some((eta, green));
    let k_eta = assemble(&pan, OperatorLabel::KEta, params, per)?;
    let k1 = assemble(&pan, OperatorLabel::DEtaRestricted, params, per)?;
    let mut g = [DensityField::zeros(n), DensityField::zeros(n)];
    let mut solve_residual = 0.0f64;
    let mut condition = 0.0f64;
    for k in 0..2 {
        let sol = solve_periodic_dirichlet(&k_eta, &h[k])?;
        solve_residual = solve_residual.max(sol.residual);
        condition = sol.condition;
        g[k] = sol.g;
    }
    let mut g_mean = Matrix2::zeros();
    let mut g_prime = [DensityField::zeros(n), DensityField::zeros(n)];
    let mut balance_residual = 0.0f64;
    for k in 0..2 {
        let dec = decompose(&kb, &g[k]);
        g_mean[(0, k)] = dec.pi0[0];
        g_mean[(1, k)] = dec.pi0[1];
        let pk1 = decompose(&kb, &k1.apply(&dec.pi1)).pi0;
        let ph = decompose(&kb, &h[k]).pi0;
        for j in 0..2 {
            let r = -eta * eta * area * dec.pi0[j] + eta * pk1[j] - ph[j];
            balance_residual = balance_residual.max(r.abs());
        }
        g_prime[k] = dec.pi1;
    }

    let s_eta = assemble(&pan, OperatorLabel::SEta, params, per)?;
    let kel = Kelvin2::new(params);
    let parts = average_parts(&pan, &kel, params, green, eta, &s_eta, &g, &g_prime);
    let log_shift = -kel.c1 * kel.inv_om * eta.ln();
    let average = Matrix2::identity() * log_shift + c
        - (parts.gamma_in_hole + parts.remainder_in_hole + c * area + parts.double_layer_in_hole) * (eta * eta);

    let smax = pan.speed.iter().fold(0.0f64, |m, &s| m.max(s));
    let tiers = TIERS
        .iter()
        .map(|&u| {
            let fine = panelize(curve, n * u)?;
            Ok(Tier {
                band: 4.0 * fine.h * smax,
                g_prime: [upsample_density(&g_prime[0], u), upsample_density(&g_prime[1], u)],
                pan: fine,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CellSolution {
        eta,
        params: *params,
        curve: *curve,
        pan,
        kernel_basis: kb,
        green: green.clone(),
        c,
        h,
        g,
        g_mean,
        g_prime,
        balance_residual,
        solve_residual,
        condition,
        average,
        average_parts: parts,
        area,
        kel,
        tiers,
    })
}

/// Boundary reduction of `∫_T G^η` and `∫_T D^η[g]`.
#[allow(clippy::too_many_arguments)]
fn average_parts(
    pan: &Panelization,
    kel: &Kelvin2,
    params: &LameParams,
    green: &PeriodicGreen,
    eta: f64,
    s_eta: &crate::bie::BoundaryOperator,
    g: &[DensityField; 2],
    g_prime: &[DensityField; 2],
) -> AverageParts {
    let n = pan.n;
    // ∫_T Γ = ∮ F·N with div F = Γ
    let mut gamma = Matrix2::zeros();
    let (gx, gw) = gauss_legendre(16);
    let mut rem = Matrix2::zeros();
    for b in 0..n {
        let x = pan.points[b];
        let nn = pan.normals[b];
        let xn = x[0] * nn[0] + x[1] * nn[1];
        let r2 = x[0] * x[0] + x[1] * x[1];
        let w = pan.weight(b) * xn;
        let lg = kel.c1 * kel.inv_om * (r2.ln() - 1.0) / 4.0;
        for j in 0..2 {
            for k in 0..2 {
                let d = if j == k { lg } else { 0.0 };
                gamma[(j, k)] += w * (d - kel.c2 * kel.inv_om * x[j] * x[k] / (2.0 * r2));
            }
        }
        let mut inner = Mat2::zeros();
        for (t, wt) in gx.iter().zip(&gw) {
            let s = 0.5 * (t + 1.0);
            inner += green.remainder_any([eta * s * x[0], eta * s * x[1]]).0 * (0.5 * wt * s);
        }
        rem += inner * w;
    }
    // Q[m][b] = S^η[N^m e_b] on the nodes
    let q: Vec<Vec<DensityField>> = (0..2)
        .map(|m| {
            (0..2)
                .map(|bcol| {
                    let dens = DensityField {
                        values: (0..2 * n)
                            .map(|r| if r % 2 == bcol { pan.normals[r / 2][m] } else { 0.0 })
                            .collect(),
                    };
                    s_eta.apply(&dens)
                })
                .collect()
        })
        .collect();
    let lm = params.lambda + params.mu;
    let mu = params.mu;
    let j_at = |y: usize| -> Mat2 {
        let nn = pan.normals[y];
        // Q^{ab}_m(y) = q[m][b].at(y)[a]
        let qv = |a: usize, bb: usize, m: usize| q[m][bb].at(y)[a];
        Mat2::from_fn(|i, j| {
            let div = qv(0, j, 0) + qv(1, j, 1);
            -(lm * div * nn[i] + mu * (nn[0] * qv(i, j, 0) + nn[1] * qv(i, j, 1)))
        })
    };
    let js: Vec<Mat2> = (0..n).map(j_at).collect();
    let reduce = |dens: &[DensityField; 2]| {
        let mut out = Matrix2::zeros();
        for k in 0..2 {
            for b in 0..n {
                let gv = dens[k].at(b);
                let w = pan.weight(b);
                for j in 0..2 {
                    out[(j, k)] += w * (gv[0] * js[b][(0, j)] + gv[1] * js[b][(1, j)]);
                }
            }
        }
        out
    };
    AverageParts {
        gamma_in_hole: gamma,
        remainder_in_hole: rem,
        double_layer_in_hole: reduce(g),
        double_layer_prime_in_hole: reduce(g_prime),
    }
}

/// Knobs of the composite cell quadrature (near part in log-polar Gauss
/// coordinates, far part on a periodic grid, joined by a smooth partition of
/// unity in `w = ηx`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub angular: usize,
    pub gauss: usize,
    /// Panel width in `log r`.
    pub log_panel: f64,
    /// Panels across the annulus `r1 ≤ |x| ≤ r2` that contains `∂T`.
    pub annulus_panels: usize,
    pub far: usize,
    pub rho1: f64,
    pub rho2: f64,
    /// Also integrate the energy density (finite-difference gradients).
    pub energy: bool,
    /// Relative finite-difference step for gradients.
    pub fd_step: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            angular: 128,
            gauss: 12,
            log_panel: 0.5,
            annulus_panels: 24,
            far: 64,
            rho1: 0.2,
            rho2: 0.45,
            energy: false,
            fd_step: 1e-5,
        }
    }
}

impl QuadratureOptions {
    /// Resolution tied to a nominal grid size per cell side.
    pub fn from_grid(grid_n: usize) -> Self {
        Self {
            angular: grid_n.max(16),
            far: (grid_n / 2).max(16),
            ..Self::default()
        }
    }
}

/// Quadrature moments over the scaled cell (all normalized by `η²`, i.e.
/// averages over `η⁻¹𝕋²` of the zero-extended field, except `energy`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellMoments {
    pub mean: Matrix2<f64>,
    /// `⟨|χ_k|²⟩`.
    pub second: [f64; 2],
    /// `∫ μ|∇χ_k|² + (λ+μ)(div χ_k)²` over `η⁻¹𝕋² \ T̄`.
    pub energy: Option<[f64; 2]>,
    pub points: usize,
}

/// Smooth cutoff: 1 on `[0, a]`, 0 on `[b, ∞)`.
fn cutoff(rho: f64, a: f64, b: f64) -> f64 {
    if rho <= a {
        return 1.0;
    }
    if rho >= b {
        return 0.0;
    }
    let f = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
    let t = (b - rho) / (b - a);
    f(t) / (f(t) + f(1.0 - t))
}

impl CellSolution {
    pub fn area(&self) -> f64 {
        self.area
    }

    /// `|log η|`.
    pub fn log_factor(&self) -> f64 {
        self.eta.ln().abs()
    }

    /// Reduces `x` to the fundamental scaled cell `η⁻¹[-½, ½]²`.
    pub fn reduce(&self, x: [f64; 2]) -> [f64; 2] {
        let w = crate::kernels::periodic::wrap([self.eta * x[0], self.eta * x[1]]);
        [w[0] / self.eta, w[1] / self.eta]
    }

    fn select(&self, x: [f64; 2]) -> Selection {
        let nearest = |t: &Tier| {
            let mut best = (f64::INFINITY, 0usize);
            for (b, p) in t.pan.points.iter().enumerate() {
                let d = (x[0] - p[0]).hypot(x[1] - p[1]);
                if d < best.0 {
                    best = (d, b);
                }
            }
            best
        };
        let (d0, _) = nearest(&self.tiers[0]);
        if d0 >= self.tiers[0].band {
            return Selection { tier: 0, anchor: None };
        }
        let last = self.tiers.len() - 1;
        let (d, b) = nearest(&self.tiers[last]);
        let tier = (1..self.tiers.len()).find(|&t| d >= self.tiers[t].band).unwrap_or(last);
        // anchor from the finest tier; the node sets are nested
        let stride = TIERS[last] / TIERS[tier];
        let bt = (b + stride / 2) / stride % self.tiers[tier].pan.n;
        let t = &self.tiers[tier];
        Selection {
            tier,
            anchor: Some([t.g_prime[0].at(bt), t.g_prime[1].at(bt)]),
        }
    }

    /// Column `k` is `D^η[g_k](x)` for exterior `x`, using `D^η[c] = -η²|T|c`
    /// for the constant parts.
    fn double_layer(&self, x: [f64; 2], sel: Selection) -> Mat2 {
        let t = &self.tiers[sel.tier];
        let anchor = sel.anchor.unwrap_or([[0.0; 2]; 2]);
        let eta = self.eta;
        let mut out = Mat2::zeros();
        for b in 0..t.pan.n {
            let y = t.pan.points[b];
            let ny = t.pan.normals[b];
            let z = [x[0] - y[0], x[1] - y[1]];
            let (weak, cauchy) = self.kel.conormal(z, ny);
            let dr = self.green.scaled_remainder(z, eta).1;
            let k = weak + cauchy - self.kel.conormal_of(&dr, ny);
            let w = t.pan.weight(b);
            for kk in 0..2 {
                let gv = t.g_prime[kk].at(b);
                let p = [gv[0] - anchor[kk][0], gv[1] - anchor[kk][1]];
                out[(0, kk)] += w * (k[(0, 0)] * p[0] + k[(1, 0)] * p[1]);
                out[(1, kk)] += w * (k[(0, 1)] * p[0] + k[(1, 1)] * p[1]);
            }
        }
        let s = -eta * eta * self.area;
        for kk in 0..2 {
            for j in 0..2 {
                out[(j, kk)] += s * (self.g_mean[(j, kk)] + anchor[kk][j]);
            }
        }
        out
    }

    fn chi_selected(&self, x: [f64; 2], sel: Selection) -> Mat2 {
        let g = match self.green.scaled_green(x, self.eta) {
            Ok(v) => v.0,
            Err(_) => return Mat2::zeros(),
        };
        g + self.c + self.double_layer(x, sel)
    }

    /// `χ^η(x)` (column `k` is `χ_k`), zero on `T̄`, periodic with period `1/η`.
    pub fn chi(&self, x: [f64; 2]) -> Mat2 {
        let x = self.reduce(x);
        if self.curve.contains(x) {
            return Mat2::zeros();
        }
        self.chi_selected(x, self.select(x))
    }

    /// `χ` and its gradient `[∂_1 χ, ∂_2 χ]` by centered differences (same
    /// evaluation tier for the whole stencil).
    pub fn chi_with_gradient(&self, x: [f64; 2], rel_step: f64) -> (Mat2, [Mat2; 2]) {
        let x = self.reduce(x);
        if self.curve.contains(x) {
            return (Mat2::zeros(), [Mat2::zeros(); 2]);
        }
        let sel = self.select(x);
        let d = rel_step * x[0].hypot(x[1]).max(1.0);
        let v = self.chi_selected(x, sel);
        let mut grad = [Mat2::zeros(); 2];
        for (m, gm) in grad.iter_mut().enumerate() {
            let mut xp = x;
            let mut xm = x;
            xp[m] += d;
            xm[m] -= d;
            *gm = (self.chi_selected(xp, sel) - self.chi_selected(xm, sel)) / (2.0 * d);
        }
        (v, grad)
    }

    /// Sup over nodes of the exterior trace of `χ`, extrapolated from offsets
    /// along `N` on the finest tier; zero by the Dirichlet condition.
    pub fn trace_residual(&self, stride: usize) -> f64 {
        let last = self.tiers.len() - 1;
        let step = 0.125;
        let nodes: Vec<usize> = (0..self.pan.n).step_by(stride.max(1)).collect();
        let vals: Vec<f64> = nodes
            .par_iter()
            .map(|&i| {
                let x = self.pan.points[i];
                let nn = self.pan.normals[i];
                let ts: Vec<f64> = (1..=6).map(|m| m as f64 * step * self.pan.h * self.pan.speed[i]).collect();
                let samples: Vec<Mat2> = ts
                    .iter()
                    .map(|&t| {
                        let p = [x[0] + t * nn[0], x[1] + t * nn[1]];
                        self.chi_selected(p, Selection { tier: last, anchor: None })
                    })
                    .collect();
                let mut worst = 0.0f64;
                for j in 0..2 {
                    for k in 0..2 {
                        let f: Vec<f64> = samples.iter().map(|m| m[(j, k)]).collect();
                        worst = worst.max(extrapolate_to_zero(&ts, &f).abs());
                    }
                }
                worst
            })
            .collect();
        vals.into_iter().fold(0.0, f64::max)
    }

    /// `max_k |L χ_k(x) + η² e_k| / η²` by fourth-order finite differences
    /// with step `delta`.
    pub fn pde_residual(&self, x: [f64; 2], delta: f64) -> Result<f64> {
        let x = self.reduce(x);
        let sel = self.select(x);
        let reach = 2.0 * delta * std::f64::consts::SQRT_2;
        for i in 0..self.pan.n {
            let p = self.pan.points[i];
            if (x[0] - p[0]).hypot(x[1] - p[1]) < reach + self.tiers[0].band {
                return Err(Error::NearBoundary((x[0] - p[0]).hypot(x[1] - p[1])));
            }
        }
        let f = |a: i32, b: i32| self.chi_selected([x[0] + a as f64 * delta, x[1] + b as f64 * delta], sel);
        let c2 = [(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)];
        let c1 = [(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)];
        let mut dxx = Mat2::zeros();
        let mut dyy = Mat2::zeros();
        let mut dxy = Mat2::zeros();
        for &(a, w) in &c2 {
            dxx += f(a, 0) * w;
            dyy += f(0, a) * w;
        }
        for &(a, wa) in &c1 {
            for &(b, wb) in &c1 {
                dxy += f(a, b) * (wa * wb);
            }
        }
        let h2 = delta * delta;
        let (dxx, dyy, dxy) = (dxx / h2, dyy / h2, dxy / h2);
        let mu = self.params.mu;
        let lm = self.params.lambda + self.params.mu;
        let e2 = self.eta * self.eta;
        let mut worst = 0.0f64;
        for k in 0..2 {
            let l0 = mu * (dxx[(0, k)] + dyy[(0, k)]) + lm * (dxx[(0, k)] + dxy[(1, k)]);
            let l1 = mu * (dxx[(1, k)] + dyy[(1, k)]) + lm * (dxy[(0, k)] + dyy[(1, k)]);
            let r = [l0 + if k == 0 { e2 } else { 0.0 }, l1 + if k == 1 { e2 } else { 0.0 }];
            worst = worst.max(r[0].hypot(r[1]) / e2);
        }
        Ok(worst)
    }

    fn quadrature_nodes(&self, opts: &QuadratureOptions) -> Vec<([f64; 2], f64)> {
        let eta = self.eta;
        let e2 = eta * eta;
        let mut pts = Vec::new();
        let (gx, gw) = gauss_legendre(opts.gauss);
        let r1 = self.curve.r1;
        let r2 = self.curve.r2;
        let rmax = opts.rho2 / eta;
        // radial nodes (r, weight incl. the polar Jacobian r)
        let mut radial: Vec<(f64, f64)> = Vec::new();
        if r2 - r1 > 1e-9 {
            let hw = (r2 - r1) / opts.annulus_panels as f64;
            for p in 0..opts.annulus_panels {
                let a = r1 + p as f64 * hw;
                for (t, w) in gx.iter().zip(&gw) {
                    let r = a + 0.5 * hw * (t + 1.0);
                    radial.push((r, 0.5 * hw * w * r));
                }
            }
        }
        let (u0, u1) = (r2.ln(), rmax.ln());
        let np = ((u1 - u0) / opts.log_panel).ceil().max(1.0) as usize;
        let hu = (u1 - u0) / np as f64;
        for p in 0..np {
            let a = u0 + p as f64 * hu;
            for (t, w) in gx.iter().zip(&gw) {
                let u = a + 0.5 * hu * (t + 1.0);
                let r = u.exp();
                radial.push((r, 0.5 * hu * w * r * r));
            }
        }
        let dth = 2.0 * PI / opts.angular as f64;
        for i in 0..opts.angular {
            let th = (i as f64 + 0.5) * dth;
            let (s, c) = th.sin_cos();
            for &(r, w) in &radial {
                let psi = cutoff(eta * r, opts.rho1, opts.rho2);
                if psi == 0.0 {
                    continue;
                }
                pts.push(([r * c, r * s], e2 * dth * w * psi));
            }
        }
        let m = opts.far;
        let hw = 1.0 / m as f64;
        for i in 0..m {
            for j in 0..m {
                let w = [-0.5 + (i as f64 + 0.5) * hw, -0.5 + (j as f64 + 0.5) * hw];
                let phi = 1.0 - cutoff(w[0].hypot(w[1]), opts.rho1, opts.rho2);
                if phi == 0.0 {
                    continue;
                }
                pts.push(([w[0] / eta, w[1] / eta], phi * hw * hw));
            }
        }
        pts
    }

    /// Composite quadrature of `χ`, `|χ_k|²` and optionally the energy density
    /// over the scaled cell.
    pub fn moments(&self, opts: &QuadratureOptions) -> CellMoments {
        let pts = self.quadrature_nodes(opts);
        let mu = self.params.mu;
        let lm = self.params.lambda + self.params.mu;
        let e2 = self.eta * self.eta;
        let rows: Vec<[f64; 8]> = pts
            .par_iter()
            .map(|&(x, w)| {
                let (v, grad) = if opts.energy {
                    self.chi_with_gradient(x, opts.fd_step)
                } else {
                    (self.chi(x), [Mat2::zeros(); 2])
                };
                let mut r = [0.0; 8];
                r[0] = w * v[(0, 0)];
                r[1] = w * v[(1, 0)];
                r[2] = w * v[(0, 1)];
                r[3] = w * v[(1, 1)];
                for k in 0..2 {
                    r[4 + k] = w * (v[(0, k)].powi(2) + v[(1, k)].powi(2));
                    if opts.energy {
                        let mut gsq = 0.0;
                        for g in &grad {
                            gsq += g[(0, k)].powi(2) + g[(1, k)].powi(2);
                        }
                        let div = grad[0][(0, k)] + grad[1][(1, k)];
                        // energy is an unnormalized integral: undo the η² of `w`
                        r[6 + k] = w / e2 * (mu * gsq + lm * div * div);
                    }
                }
                r
            })
            .collect();
        let mut s = [0.0; 8];
        for r in &rows {
            for (a, b) in s.iter_mut().zip(r) {
                *a += b;
            }
        }
        CellMoments {
            mean: Matrix2::new(s[0], s[2], s[1], s[3]),
            second: [s[4], s[5]],
            energy: if opts.energy { Some([s[6], s[7]]) } else { None },
            points: pts.len(),
        }
    }

    /// `‖v_k - (c1/2π) e_k‖_{L²}` per unit area for `v = χ/|log η|`, from
    /// quadrature moments; maximum over `k`.
    pub fn l2_deviation(&self, m: &CellMoments) -> f64 {
        let l = self.log_factor();
        let c = self.kel.c1 * self.kel.inv_om;
        (0..2)
            .map(|k| (m.second[k] / (l * l) - 2.0 * c * m.mean[(k, k)] / l + c * c).max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// `⟨D^η[g'_k]⟩` over the scaled cell, `-η² ∫_T D^η[g'_k]`.
    pub fn double_layer_prime_average(&self) -> Matrix2<f64> {
        -self.average_parts.double_layer_prime_in_hole * (self.eta * self.eta)
    }

    /// `‖g'_k‖_{L²(∂T)}`, maximum over `k`.
    pub fn g_prime_norm(&self) -> f64 {
        (0..2)
            .map(|k| crate::bie::inner(&self.pan, &self.g_prime[k], &self.g_prime[k]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// `⟨Γ⟩` over the scaled cell minus the hole, `η² (∫_{η⁻¹[-½,½]²} Γ - ∫_T Γ)`.
pub fn gamma_cell_average(sol: &CellSolution) -> Matrix2<f64> {
    let big = 0.5 / sol.eta;
    // ∫_{[0,1]²} log|x| = (log 2)/2 - 3/2 + π/4
    let k0 = 0.5 * 2f64.ln() - 1.5 + 0.25 * PI;
    let area = 4.0 * big * big;
    let log_int = area * (big.ln() + k0);
    let c = sol.kel.c1 * sol.kel.inv_om;
    let c2 = sol.kel.c2 * sol.kel.inv_om;
    let full = Matrix2::identity() * (c * log_int - c2 * area / 2.0);
    (full - sol.average_parts.gamma_in_hole) * (sol.eta * sol.eta)
}

/// Cell average by the boundary reduction (primary) and by composite
/// quadrature at nominal resolution `grid_n` (cross-check).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellAverage {
    pub value: Matrix2<f64>,
    pub quadrature: Matrix2<f64>,
    pub discrepancy: f64,
}

pub fn cell_average(sol: &CellSolution, grid_n: usize) -> Result<CellAverage> {
    if grid_n < 128 {
        return Err(Error::OutOfRange(format!("grid_n = {grid_n} < 128")));
    }
    let m = sol.moments(&QuadratureOptions::from_grid(grid_n));
    Ok(CellAverage {
        value: sol.average,
        quadrature: m.mean,
        discrepancy: (sol.average - m.mean).amax(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveRegime {
    Dilute2d,
    Dilute3d,
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Formula,
    CellAverage,
}

/// Which reading of the planar dilute matrix to use: `proof` gives
/// `M = (2π/c1) I` (so `M⁻¹ e_k` is the limit of `v^ε_k`), `display` gives
/// `M = (c1/2π) I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MConvention {
    #[default]
    Proof,
    Display,
}

impl FromStr for MConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proof" => Ok(MConvention::Proof),
            "display" => Ok(MConvention::Display),
            o => Err(Error::Config(format!("unknown m_convention `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub m: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub regime: EffectiveRegime,
    pub provenance: Provenance,
}

impl EffectiveMatrix {
    fn checked(m: DMatrix<f64>, regime: EffectiveRegime, provenance: Provenance) -> Result<Self> {
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-6 * m.amax() {
            return Err(Error::Singular("effective matrix not symmetric"));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let ev = sym.clone().symmetric_eigenvalues();
        if !(ev.min() > 0.0) {
            return Err(Error::Singular("effective matrix not positive definite"));
        }
        let m_inv = sym.clone().try_inverse().ok_or(Error::Singular("effective matrix singular"))?;
        Ok(Self {
            m: sym,
            m_inv,
            regime,
            provenance,
        })
    }

    /// Three-dimensional dilute matrix `M = A_T⁻¹` from a given `A_T`.
    pub fn dilute_3d(a_t: &DMatrix<f64>) -> Result<Self> {
        let m = a_t.clone().try_inverse().ok_or(Error::Singular("A_T singular"))?;
        Self::checked(m, EffectiveRegime::Dilute3d, Provenance::Formula)
    }
}

/// `M` for the planar regimes. The classical matrix is normalized with
/// `σ_ε² = ε²|log η|`: `M = |log η| ⟨χ⟩⁻¹`, so that `ũ/σ² ⇀ M⁻¹ f`.
pub fn effective_matrix(
    regime: EffectiveRegime,
    params: &LameParams,
    cell: Option<&CellSolution>,
    convention: MConvention,
) -> Result<EffectiveMatrix> {
    match regime {
        EffectiveRegime::Dilute2d => {
            let c = params.c1() / (2.0 * PI);
            let v = match convention {
                MConvention::Proof => 1.0 / c,
                MConvention::Display => c,
            };
            EffectiveMatrix::checked(DMatrix::identity(2, 2) * v, regime, Provenance::Formula)
        }
        EffectiveRegime::Dilute3d => Err(Error::OutOfRange(
            "three-dimensional M needs A_T; use EffectiveMatrix::dilute_3d".into(),
        )),
        EffectiveRegime::Classical => {
            let sol = cell.ok_or_else(|| Error::OutOfRange("classical M needs a cell solution".into()))?;
            let avg = DMatrix::from_fn(2, 2, |i, j| sol.average[(i, j)]);
            let inv = avg.try_inverse().ok_or(Error::Singular("cell average singular"))?;
            EffectiveMatrix::checked(inv * sol.log_factor(), regime, Provenance::CellAverage)
        }
    }
}

/// `v^ε_k(x) = χ^η_k(x/(εη)) / |log η|` on the ε-periodic array of holes
/// centred at `εℤ²`.
#[derive(Debug, Clone)]
pub struct OscillatingField {
    pub cell: Arc<CellSolution>,
    pub epsilon: f64,
    pub factor: f64,
}

pub fn oscillating_field(cell: Arc<CellSolution>, epsilon: f64) -> Result<OscillatingField> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRange(format!("epsilon = {epsilon} not in (0,1)")));
    }
    let factor = 1.0 / cell.log_factor();
    Ok(OscillatingField { cell, epsilon, factor })
}

impl OscillatingField {
    /// Column `k` is `v^ε_k(x)`.
    pub fn eval(&self, x: [f64; 2]) -> Mat2 {
        let e = self.epsilon;
        let s = [x[0] / e - (x[0] / e).round(), x[1] / e - (x[1] / e).round()];
        let eta = self.cell.eta;
        self.cell.chi([s[0] / eta, s[1] / eta]) * self.factor
    }

    /// Values at the nodes `(i/n, j/n)`, `0 ≤ i, j ≤ n`, row-major in `j`
    /// then `i` (index `j (n+1) + i`). When `nε` is an integer the values of
    /// one period are computed once and repeated.
    pub fn sample_grid(&self, n: usize) -> Vec<Mat2> {
        let period = n as f64 * self.epsilon;
        let p = period.round() as usize;
        let periodic = p > 0 && (period - p as f64).abs() < 1e-9;
        if periodic {
            let cellvals: Vec<Mat2> = (0..p * p)
                .into_par_iter()
                .map(|q| self.eval([(q % p) as f64 / n as f64, (q / p) as f64 / n as f64]))
                .collect();
            (0..(n + 1) * (n + 1))
                .map(|idx| {
                    let (i, j) = (idx % (n + 1), idx / (n + 1));
                    cellvals[(j % p) * p + i % p]
                })
                .collect()
        } else {
            (0..(n + 1) * (n + 1))
                .into_par_iter()
                .map(|idx| self.eval([(idx % (n + 1)) as f64 / n as f64, (idx / (n + 1)) as f64 / n as f64]))
                .collect()
        }
    }
}

/// Decay of `⟨v_k⟩ - (c1/2π)e_k` (and optionally of the `L²` deviation) over
/// a decreasing list of `η`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageLimitReport {
    pub etas: Vec<f64>,
    /// `max_k |⟨v_k⟩ - (c1/2π) e_k|`.
    pub deviation: Vec<f64>,
    /// Fit of `deviation` against `1/|log η|`.
    pub fit: RateFit,
    pub l2: Option<Vec<f64>>,
    pub l2_fit: Option<RateFit>,
    pub averages: Vec<Matrix2<f64>>,
}

pub fn average_limit_check(
    curve: &Curve,
    params: &LameParams,
    etas: &[f64],
    n_nodes: usize,
    l2: Option<&QuadratureOptions>,
) -> Result<AverageLimitReport> {
    if etas.len() < 3 {
        return Err(Error::OutOfRange(format!("need >= 3 values of eta, got {}", etas.len())));
    }
    if etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::OutOfRange("eta list must be strictly decreasing".into()));
    }
    if etas[0] / etas[etas.len() - 1] < 10.0 {
        return Err(Error::OutOfRange("eta list spans less than one decade".into()));
    }
    let green = default_green(params)?;
    let c = params.c1() / (2.0 * PI);
    let mut deviation = Vec::new();
    let mut l2v = Vec::new();
    let mut averages = Vec::new();
    for &eta in etas {
        let sol = solve_cell_with(curve, eta, params, n_nodes, &green)?;
        let v = sol.average / sol.log_factor();
        let d = (0..2)
            .map(|k| (v[(0, k)] - if k == 0 { c } else { 0.0 }).hypot(v[(1, k)] - if k == 1 { c } else { 0.0 }))
            .fold(0.0, f64::max);
        deviation.push(d);
        averages.push(sol.average);
        if let Some(opts) = l2 {
            l2v.push(sol.l2_deviation(&sol.moments(opts)));
        }
    }
    let fit = fit_rate(etas, &deviation, RateLaw::InverseLog)?;
    let (l2, l2_fit) = if l2.is_some() {
        let f = fit_rate(etas, &l2v, RateLaw::InverseLog)?;
        (Some(l2v), Some(f))
    } else {
        (None, None)
    };
    Ok(AverageLimitReport {
        etas: etas.to_vec(),
        deviation,
        fit,
        l2,
        l2_fit,
        averages,
    })
}
