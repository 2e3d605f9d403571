//! Nyström discretization of the free-space and periodic layer potentials on
//! `∂T`, jump diagnostics, the kernel basis `φ*_j` with `A_T`, and periodic
//! Dirichlet solves.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{panelize, Curve, LameParams, Panelization};
use crate::kernels::{Kelvin2, Mat2, PeriodicGreen};

/// Node values of a planar vector density, stacked as `[φ¹(x_0), φ²(x_0), φ¹(x_1), ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: Vec<f64>,
}

impl DensityField {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; 2 * n],
        }
    }

    pub fn constant(n: usize, c: [f64; 2]) -> Self {
        Self {
            values: (0..2 * n).map(|r| c[r % 2]).collect(),
        }
    }

    pub fn from_fn(pan: &Panelization, f: impl Fn(usize, f64) -> [f64; 2]) -> Self {
        let mut values = Vec::with_capacity(2 * pan.n);
        for (i, &t) in pan.theta.iter().enumerate() {
            let v = f(i, t);
            values.extend_from_slice(&v);
        }
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.len() / 2
    }

    pub fn at(&self, i: usize) -> [f64; 2] {
        [self.values[2 * i], self.values[2 * i + 1]]
    }

    /// `∫_{∂T} φ`.
    pub fn integral(&self, pan: &Panelization) -> [f64; 2] {
        let mut s = [0.0; 2];
        for i in 0..pan.n {
            let w = pan.weight(i);
            s[0] += w * self.values[2 * i];
            s[1] += w * self.values[2 * i + 1];
        }
        s
    }

    /// Boundary mean `⨍_{∂T} φ`.
    pub fn mean(&self, pan: &Panelization) -> [f64; 2] {
        let l = pan.length();
        let s = self.integral(pan);
        [s[0] / l, s[1] / l]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            values: v.iter().copied().collect(),
        }
    }

    pub fn add_constant(&self, c: [f64; 2]) -> Self {
        Self {
            values: self.values.iter().enumerate().map(|(r, v)| v + c[r % 2]).collect(),
        }
    }
}

/// Weighted boundary inner product `∫_{∂T} φ·ψ`.
pub fn inner(pan: &Panelization, phi: &DensityField, psi: &DensityField) -> f64 {
    (0..pan.n)
        .map(|i| {
            pan.weight(i)
                * (phi.values[2 * i] * psi.values[2 * i] + phi.values[2 * i + 1] * psi.values[2 * i + 1])
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorLabel {
    S,
    K,
    Kstar,
    SEta,
    KEta,
    KstarEta,
    /// Remainder part `K^η_{T,1}` of the periodic double layer on `∂T`.
    DEtaRestricted,
}

impl OperatorLabel {
    pub fn is_periodic(self) -> bool {
        matches!(
            self,
            OperatorLabel::SEta | OperatorLabel::KEta | OperatorLabel::KstarEta | OperatorLabel::DEtaRestricted
        )
    }
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperatorLabel::S => "S",
            OperatorLabel::K => "K",
            OperatorLabel::Kstar => "Kstar",
            OperatorLabel::SEta => "S_eta",
            OperatorLabel::KEta => "K_eta",
            OperatorLabel::KstarEta => "Kstar_eta",
            OperatorLabel::DEtaRestricted => "D_eta_restricted",
        };
        f.write_str(s)
    }
}

/// Dense `2n × 2n` Nyström matrix acting on stacked node values.
#[derive(Debug, Clone)]
pub struct BoundaryOperator {
    pub label: OperatorLabel,
    pub eta: Option<f64>,
    pub n: usize,
    pub matrix: DMatrix<f64>,
}

impl BoundaryOperator {
    pub fn apply(&self, phi: &DensityField) -> DensityField {
        DensityField::from_vector(&(&self.matrix * phi.as_vector()))
    }

    /// Flat binary export: ASCII label line, then `n`, `d` as little-endian
    /// u64, `η` as f64 (NaN when free-space), then the row-major matrix.
    pub fn export_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", self.label)?;
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&2u64.to_le_bytes())?;
        f.write_all(&self.eta.unwrap_or(f64::NAN).to_le_bytes())?;
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                f.write_all(&self.matrix[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Kress weights `R_j(t_i)` for `∫ log(4 sin²((t-s)/2)) f(s) ds`, indexed by `(i - j) mod n`.
fn kress_weights(n: usize) -> Vec<f64> {
    let m = n / 2;
    let mf = m as f64;
    (0..n)
        .map(|d| {
            let tau = PI * d as f64 / mf;
            let s: f64 = (1..m).map(|k| (k as f64 * tau).cos() / k as f64).sum();
            -2.0 * PI / mf * s - PI / (mf * mf) * (mf * tau).cos()
        })
        .collect()
}

fn set_block(m: &mut DMatrix<f64>, a: usize, b: usize, blk: &Mat2) {
    m[(2 * a, 2 * b)] = blk[(0, 0)];
    m[(2 * a, 2 * b + 1)] = blk[(0, 1)];
    m[(2 * a + 1, 2 * b)] = blk[(1, 0)];
    m[(2 * a + 1, 2 * b + 1)] = blk[(1, 1)];
}

fn assemble_rows(n: usize, block: impl Fn(usize, usize) -> Mat2 + Sync) -> DMatrix<f64> {
    let rows: Vec<Vec<Mat2>> = (0..n)
        .into_par_iter()
        .map(|a| (0..n).map(|b| block(a, b)).collect())
        .collect();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (a, row) in rows.iter().enumerate() {
        for (b, blk) in row.iter().enumerate() {
            set_block(&mut m, a, b, blk);
        }
    }
    m
}

fn sub(x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
    [x[0] - y[0], x[1] - y[1]]
}

/// Free-space single layer with Kress log quadrature.
fn assemble_single(pan: &Panelization, kel: &Kelvin2) -> DMatrix<f64> {
    let n = pan.n;
    let rw = kress_weights(n);
    let h = pan.h;
    assemble_rows(n, |a, b| {
        let sp = pan.speed[b];
        let (lg, dyad) = if a == b {
            let t = pan.tangents[a];
            (pan.speed[a].ln(), Mat2::new(t[0] * t[0], t[0] * t[1], t[1] * t[0], t[1] * t[1]))
        } else {
            let z = sub(pan.points[a], pan.points[b]);
            let r2 = z[0] * z[0] + z[1] * z[1];
            let tau = pan.theta[a] - pan.theta[b];
            let s2 = 4.0 * (0.5 * tau).sin().powi(2);
            (
                0.5 * (r2 / s2).ln(),
                Mat2::new(z[0] * z[0], z[0] * z[1], z[1] * z[0], z[1] * z[1]) / r2,
            )
        };
        let d = (a + n - b) % n;
        let logw = kel.c1 * kel.inv_om * (0.5 * rw[d] + h * lg) * sp;
        Mat2::identity() * logw - dyad * (kel.c2 * kel.inv_om * h * sp)
    })
}

/// Free-space double layer `K`: trapezoid for the weak part, odd-even rule
/// for the Cauchy part.
fn assemble_double(pan: &Panelization, kel: &Kelvin2) -> DMatrix<f64> {
    let n = pan.n;
    let h = pan.h;
    assemble_rows(n, |a, b| {
        let sp = pan.speed[b];
        if a == b {
            return kel.conormal_weak_limit(pan.tangents[a], pan.curvature[a]).transpose() * (h * sp);
        }
        let (weak, cauchy) = kel.conormal(sub(pan.points[a], pan.points[b]), pan.normals[b]);
        let odd = (a + n - b) % 2 == 1;
        // D[ψ]^k = Σ_i K_ik ψ^i, so the block acting on ψ(y_b) is Kᵀ
        (weak * (h * sp) + if odd { cauchy * (2.0 * h * sp) } else { Mat2::zeros() }).transpose()
    })
}

/// Periodic remainder parts `S^η_{T,1}` and `K^η_{T,1}` (already carrying the
/// `η` factor of the chain rule).
fn assemble_remainders(pan: &Panelization, kel: &Kelvin2, eta: f64, green: &PeriodicGreen) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = pan.n;
    let h = pan.h;
    let blocks: Vec<Vec<(Mat2, Mat2)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let w = h * pan.speed[b];
                    let (r, dr) = green.scaled_remainder(sub(pan.points[a], pan.points[b]), eta);
                    // ∂_y R(η(x-y)) = -(η∇R)(η(x-y))
                    let k1 = -kel.conormal_of(&dr, pan.normals[b]).transpose();
                    (r * w, k1 * w)
                })
                .collect()
        })
        .collect();
    let mut s1 = DMatrix::zeros(2 * n, 2 * n);
    let mut k1 = DMatrix::zeros(2 * n, 2 * n);
    for (a, row) in blocks.iter().enumerate() {
        for (b, (sb, kb)) in row.iter().enumerate() {
            set_block(&mut s1, a, b, sb);
            set_block(&mut k1, a, b, kb);
        }
    }
    (s1, k1)
}

/// `W⁻¹ Mᵀ W` with `W = diag(|x'|)`: the Nyström matrix of the adjoint kernel.
fn weighted_adjoint(pan: &Panelization, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n2 = m.nrows();
    DMatrix::from_fn(n2, n2, |r, c| m[(c, r)] * pan.speed[c / 2] / pan.speed[r / 2])
}

/// Periodic setting `(η, G)` for the periodic operators.
pub type Periodic<'a> = (f64, &'a PeriodicGreen);

fn check_eta(pan: &Panelization, eta: f64) -> Result<()> {
    if !(eta > 0.0) || eta * pan.curve.r2 >= 0.5 {
        return Err(Error::OutOfRange(format!(
            "eta = {eta} outside (0, 1/(2 r2)) for r2 = {}",
            pan.curve.r2
        )));
    }
    Ok(())
}

pub fn assemble(
    pan: &Panelization,
    label: OperatorLabel,
    params: &LameParams,
    periodic: Option<Periodic<'_>>,
) -> Result<BoundaryOperator> {
    if params.dim != 2 {
        return Err(Error::OutOfRange("boundary operators are planar only".into()));
    }
    let kel = Kelvin2::new(params);
    let per = match (label.is_periodic(), periodic) {
        (true, Some(p)) => {
            check_eta(pan, p.0)?;
            Some(p)
        }
        (true, None) => return Err(Error::OutOfRange(format!("{label} needs eta"))),
        (false, Some(_)) => return Err(Error::OutOfRange(format!("{label} takes no eta"))),
        (false, None) => None,
    };
    let matrix = match label {
        OperatorLabel::S => assemble_single(pan, &kel),
        OperatorLabel::K => assemble_double(pan, &kel),
        OperatorLabel::Kstar => weighted_adjoint(pan, &assemble_double(pan, &kel)),
        OperatorLabel::SEta => {
            let (eta, g) = per.expect("checked");
            assemble_single(pan, &kel) + assemble_remainders(pan, &kel, eta, g).0
        }
        OperatorLabel::KEta => {
            let (eta, g) = per.expect("checked");
            assemble_double(pan, &kel) + assemble_remainders(pan, &kel, eta, g).1
        }
        OperatorLabel::KstarEta => {
            let (eta, g) = per.expect("checked");
            let k = assemble_double(pan, &kel) + assemble_remainders(pan, &kel, eta, g).1;
            weighted_adjoint(pan, &k)
        }
        OperatorLabel::DEtaRestricted => {
            let (eta, g) = per.expect("checked");
            // stored without the η chain-rule factor: K^η = K + η K^η_{T,1}
            assemble_remainders(pan, &kel, eta, g).1 / eta
        }
    };
    Ok(BoundaryOperator {
        label,
        eta: per.map(|p| p.0),
        n: pan.n,
        matrix,
    })
}

/// Operator assembled from the closed form of `K* - K` (smooth kernel, plain trapezoid).
pub fn assemble_kernel_difference(pan: &Panelization, params: &LameParams) -> DMatrix<f64> {
    let n = pan.n;
    let h = pan.h;
    assemble_rows(n, |a, b| {
        let w = h * pan.speed[b];
        if a == b {
            // both parts vanish on the diagonal: ⟨z, N_x+N_y⟩/|z|² → -κ + κ and N_x - N_y → 0
            return Mat2::zeros();
        }
        // node blocks act on φ(y_b), hence the transpose of K*_{ik} - K_{ik}
        crate::kernels::kernel_difference(pan.points[a], pan.points[b], pan.normals[a], pan.normals[b], params)
            .expect("distinct nodes")
            .transpose()
            * w
    })
}

/// Trigonometric interpolation of node values onto `m·n` equispaced nodes.
pub fn upsample_values(values: &[f64], m: usize) -> Vec<f64> {
    let n = values.len();
    if m == 1 {
        return values.to_vec();
    }
    let half = n / 2;
    let mut re = vec![0.0; half + 1];
    let mut im = vec![0.0; half + 1];
    for k in 0..=half {
        for (j, v) in values.iter().enumerate() {
            let ang = 2.0 * PI * (k * j) as f64 / n as f64;
            re[k] += v * ang.cos();
            im[k] -= v * ang.sin();
        }
        re[k] /= n as f64;
        im[k] /= n as f64;
    }
    let nf = n * m;
    (0..nf)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / nf as f64;
            let mut s = re[0];
            for k in 1..half {
                let (sn, cs) = (k as f64 * t).sin_cos();
                s += 2.0 * (re[k] * cs - im[k] * sn);
            }
            s + re[half] * (half as f64 * t).cos()
        })
        .collect()
}

pub fn upsample_density(phi: &DensityField, m: usize) -> DensityField {
    let n = phi.n();
    let c0: Vec<f64> = (0..n).map(|i| phi.values[2 * i]).collect();
    let c1: Vec<f64> = (0..n).map(|i| phi.values[2 * i + 1]).collect();
    let (u0, u1) = (upsample_values(&c0, m), upsample_values(&c1, m));
    DensityField {
        values: u0.iter().zip(&u1).flat_map(|(a, b)| [*a, *b]).collect(),
    }
}

/// Off-boundary evaluation of layer potentials on a (possibly upsampled) panelization.
#[derive(Debug, Clone)]
pub struct LayerEvaluator {
    pub pan: Panelization,
    pub kel: Kelvin2,
    pub params: LameParams,
    pub upsample: usize,
    pub periodic: Option<(f64, PeriodicGreen)>,
}

impl LayerEvaluator {
    pub fn new(base: &Panelization, params: &LameParams, upsample: usize, periodic: Option<Periodic<'_>>) -> Result<Self> {
        let pan = panelize(&base.curve, base.n * upsample.max(1))?;
        Ok(Self {
            pan,
            kel: Kelvin2::new(params),
            params: *params,
            upsample: upsample.max(1),
            periodic: periodic.map(|(e, g)| (e, g.clone())),
        })
    }

    /// Distance below which plain quadrature on this panelization is unreliable.
    pub fn band(&self) -> f64 {
        let smax = self.pan.speed.iter().fold(0.0f64, |m, &s| m.max(s));
        4.0 * self.pan.h * smax
    }

    /// Distance from `x` to the nearest quadrature node.
    pub fn node_distance(&self, x: [f64; 2]) -> f64 {
        self.pan
            .points
            .iter()
            .map(|p| (x[0] - p[0]).hypot(x[1] - p[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self, x: [f64; 2]) -> Result<()> {
        let d = self.node_distance(x);
        if d < self.band() {
            return Err(Error::NearBoundary(d));
        }
        Ok(())
    }

    pub fn fine(&self, phi: &DensityField) -> DensityField {
        upsample_density(phi, self.upsample)
    }

    /// Single layer `S[φ](x)` for a density already on the fine nodes.
    pub fn single_fine(&self, phi: &DensityField, x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for b in 0..self.pan.n {
            let z = sub(x, self.pan.points[b]);
            let mut g = self.kel.value(z);
            if let Some((eta, gr)) = &self.periodic {
                let eta = *eta;
                g += gr.scaled_remainder(z, eta).0;
            }
            let w = self.pan.weight(b);
            let p = phi.at(b);
            out[0] += w * (g[(0, 0)] * p[0] + g[(0, 1)] * p[1]);
            out[1] += w * (g[(1, 0)] * p[0] + g[(1, 1)] * p[1]);
        }
        out
    }

    /// Conormal derivative along `n` of `S[φ]` at `x` (fine density).
    pub fn single_conormal_fine(&self, phi: &DensityField, x: [f64; 2], n: [f64; 2]) -> [f64; 2] {
        let mut grad = [Mat2::zeros(); 2];
        for b in 0..self.pan.n {
            let z = sub(x, self.pan.points[b]);
            let mut dg = self.kel.gradient(z);
            if let Some((eta, gr)) = &self.periodic {
                let eta = *eta;
                let dr = gr.scaled_remainder(z, eta).1;
                dg[0] += dr[0];
                dg[1] += dr[1];
            }
            let w = self.pan.weight(b);
            let p = phi.at(b);
            // grad[m][(j, 0)] = ∂_m S[φ]^j
            for m in 0..2 {
                for j in 0..2 {
                    grad[m][(j, 0)] += w * (dg[m][(j, 0)] * p[0] + dg[m][(j, 1)] * p[1]);
                }
            }
        }
        let c = self.kel.conormal_of(&grad, n);
        [c[(0, 0)], c[(1, 0)]]
    }

    /// Double layer `D[ψ](x)` (free-space or periodic) for a fine density.
    pub fn double_fine(&self, psi: &DensityField, x: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for b in 0..self.pan.n {
            let z = sub(x, self.pan.points[b]);
            let (weak, cauchy) = self.kel.conormal(z, self.pan.normals[b]);
            let mut k = weak + cauchy;
            if let Some((eta, gr)) = &self.periodic {
                let eta = *eta;
                let dr = gr.scaled_remainder(z, eta).1;
                k -= self.kel.conormal_of(&dr, self.pan.normals[b]);
            }
            let w = self.pan.weight(b);
            let p = psi.at(b);
            // (D ψ)^k = Σ_i K_{ik} ψ^i
            out[0] += w * (k[(0, 0)] * p[0] + k[(1, 0)] * p[1]);
            out[1] += w * (k[(0, 1)] * p[0] + k[(1, 1)] * p[1]);
        }
        out
    }

    pub fn single(&self, phi: &DensityField, x: [f64; 2]) -> Result<[f64; 2]> {
        self.check(x)?;
        Ok(self.single_fine(&self.fine(phi), x))
    }

    pub fn double(&self, psi: &DensityField, x: [f64; 2]) -> Result<[f64; 2]> {
        self.check(x)?;
        Ok(self.double_fine(&self.fine(psi), x))
    }
}

/// `S_T[φ](x)` off the boundary; `upsample = 1` disables near-boundary refinement.
pub fn eval_single(pan: &Panelization, params: &LameParams, phi: &DensityField, x: [f64; 2], upsample: usize) -> Result<[f64; 2]> {
    LayerEvaluator::new(pan, params, upsample, None)?.single(phi, x)
}

/// `D_T[ψ](x)` off the boundary.
pub fn eval_double(pan: &Panelization, params: &LameParams, psi: &DensityField, x: [f64; 2], upsample: usize) -> Result<[f64; 2]> {
    LayerEvaluator::new(pan, params, upsample, None)?.double(psi, x)
}

/// Neville extrapolation of samples `(t_m, f_m)` to `t = 0`.
pub fn extrapolate_to_zero(ts: &[f64], fs: &[f64]) -> f64 {
    let mut p = fs.to_vec();
    let n = ts.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (ts[i + k] * p[i] - ts[i] * p[i + 1]) / (ts[i + k] - ts[i]);
        }
    }
    p[0]
}

/// Residuals of the jump relations, computed from two-sided extrapolated traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpReport {
    /// `sup |S[φ]|_+ - S[φ]|_-|`.
    pub single_continuity: f64,
    /// `sup |(∂_ν S|_+ - ∂_ν S|_-) - φ|`.
    pub conormal_jump: f64,
    /// `sup |∂_ν S|_± - (±½I + K*)[φ]|`, maximum over both sides.
    pub conormal_traces: f64,
    /// `sup |(D|_- - D|_+) - φ|`: the interior trace exceeds the exterior one by `φ`.
    pub double_jump: f64,
    /// `sup |D|_± - (∓½I + K)[φ]|`, maximum over both sides.
    pub double_traces: f64,
}

/// Offsets and refinement used by [`verify_jumps_with`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JumpOptions {
    /// Upsampling factor for the off-boundary quadrature.
    pub upsample: usize,
    /// Offset step as a multiple of the local node spacing `h |x'(θ_i)|`.
    pub step: f64,
    /// Number of offsets per side.
    pub points: usize,
}

impl Default for JumpOptions {
    fn default() -> Self {
        Self {
            upsample: 64,
            step: 0.125,
            points: 6,
        }
    }
}

/// Two-sided traces along `x_i ± t N_i` extrapolated to `t = 0`.
pub fn verify_jumps(pan: &Panelization, params: &LameParams, phi: &DensityField) -> Result<JumpReport> {
    verify_jumps_with(pan, params, phi, JumpOptions::default())
}

pub fn verify_jumps_with(pan: &Panelization, params: &LameParams, phi: &DensityField, opts: JumpOptions) -> Result<JumpReport> {
    if opts.points < 2 || !(opts.step > 0.0) {
        return Err(Error::OutOfRange("jump options need >= 2 offsets and a positive step".into()));
    }
    let ev = LayerEvaluator::new(pan, params, opts.upsample, None)?;
    let fine = ev.fine(phi);
    let kstar = assemble(pan, OperatorLabel::Kstar, params, None)?.apply(phi);
    let k = assemble(pan, OperatorLabel::K, params, None)?.apply(phi);
    let np = opts.points;
    let rows: Vec<[f64; 5]> = (0..pan.n)
        .into_par_iter()
        .map(|i| {
            let x = pan.points[i];
            let nn = pan.normals[i];
            let ts: Vec<f64> = (1..=np).map(|m| m as f64 * opts.step * pan.h * pan.speed[i]).collect();
            let side = |sgn: f64| {
                let mut s = [vec![0.0; np], vec![0.0; np]];
                let mut c = [vec![0.0; np], vec![0.0; np]];
                let mut d = [vec![0.0; np], vec![0.0; np]];
                for (m, &t) in ts.iter().enumerate() {
                    let p = [x[0] + sgn * t * nn[0], x[1] + sgn * t * nn[1]];
                    let sv = ev.single_fine(&fine, p);
                    let cv = ev.single_conormal_fine(&fine, p, nn);
                    let dv = ev.double_fine(&fine, p);
                    for q in 0..2 {
                        s[q][m] = sv[q];
                        c[q][m] = cv[q];
                        d[q][m] = dv[q];
                    }
                }
                let e = |a: &[Vec<f64>; 2]| [extrapolate_to_zero(&ts, &a[0]), extrapolate_to_zero(&ts, &a[1])];
                (e(&s), e(&c), e(&d))
            };
            let (sp, cp, dp) = side(1.0);
            let (sm, cm, dm) = side(-1.0);
            let f = phi.at(i);
            let ks = kstar.at(i);
            let kk = k.at(i);
            let mut r = [0.0f64; 5];
            for q in 0..2 {
                r[0] = r[0].max((sp[q] - sm[q]).abs());
                r[1] = r[1].max((cp[q] - cm[q] - f[q]).abs());
                r[2] = r[2]
                    .max((cp[q] - (0.5 * f[q] + ks[q])).abs())
                    .max((cm[q] - (-0.5 * f[q] + ks[q])).abs());
                r[3] = r[3].max((dm[q] - dp[q] - f[q]).abs());
                r[4] = r[4]
                    .max((dp[q] - (-0.5 * f[q] + kk[q])).abs())
                    .max((dm[q] - (0.5 * f[q] + kk[q])).abs());
            }
            r
        })
        .collect();
    let col = |j: usize| rows.iter().fold(0.0f64, |m, r| m.max(r[j]));
    Ok(JumpReport {
        single_continuity: col(0),
        conormal_jump: col(1),
        conormal_traces: col(2),
        double_jump: col(3),
        double_traces: col(4),
    })
}

/// Densities `φ*_j` spanning `ker(-½I + K*_T)` with `∫φ*_j = e_j`, and `A_T`.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub pan: Panelization,
    pub phi_star: [DensityField; 2],
    pub a_t: nalgebra::Matrix2<f64>,
    /// Sup over nodes of the deviation of `S[φ*_j]` from its mean.
    pub constancy_residual: f64,
    /// Spread of the interior probe values of `S[φ*_j]`.
    pub probe_spread: f64,
    /// `‖(-½I + K*)[φ*_j]‖_∞`, maximum over `j`.
    pub null_residual: f64,
    /// Three smallest singular values of `-½I + K*`, ascending.
    pub singular_values: [f64; 3],
    /// Dilation applied to the input curve (1 unless the rescue path ran).
    pub rescale: f64,
}

pub const KERNEL_TOL: f64 = 1e-8;
pub const GAP_TOL: f64 = 1e-3;

pub fn kernel_basis(pan: &Panelization, params: &LameParams) -> Result<KernelBasis> {
    let kstar = assemble(pan, OperatorLabel::Kstar, params, None)?;
    let n2 = 2 * pan.n;
    let a = &kstar.matrix - DMatrix::identity(n2, n2) * 0.5;
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::Solve("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv = [
        svd.singular_values[order[0]],
        svd.singular_values[order[1]],
        svd.singular_values[order[2]],
    ];
    if !(sv[0] <= KERNEL_TOL && sv[1] <= KERNEL_TOL && sv[2] >= GAP_TOL) {
        return Err(Error::KernelDimension(sv.to_vec()));
    }
    let vecs: Vec<DensityField> = order[..2]
        .iter()
        .map(|&r| DensityField {
            values: vt.row(r).iter().copied().collect(),
        })
        .collect();
    let mom = nalgebra::Matrix2::from_fn(|j, l| vecs[l].integral(pan)[j]);
    let msv = mom.singular_values();
    let cond = msv.max() / msv.min();
    if !(cond <= 1e8) {
        return Err(Error::DegenerateMoments(cond));
    }
    let c = mom.try_inverse().ok_or(Error::DegenerateMoments(f64::INFINITY))?;
    let combine = |j: usize| DensityField {
        values: (0..n2)
            .map(|r| c[(0, j)] * vecs[0].values[r] + c[(1, j)] * vecs[1].values[r])
            .collect(),
    };
    let phi_star = [combine(0), combine(1)];
    let null_residual = phi_star
        .iter()
        .map(|p| {
            let v = &a * p.as_vector();
            v.amax()
        })
        .fold(0.0, f64::max);
    let s = assemble(pan, OperatorLabel::S, params, None)?;
    let ev = LayerEvaluator::new(pan, params, 1, None)?;
    let rp = 0.5 * pan.curve.r1;
    let probes: Vec<[f64; 2]> = (0..4)
        .map(|q| {
            let t = 0.5 * PI * q as f64;
            [rp * t.cos(), rp * t.sin()]
        })
        .collect();
    let mut a_t = nalgebra::Matrix2::zeros();
    let mut constancy = 0.0f64;
    let mut spread = 0.0f64;
    for (j, p) in phi_star.iter().enumerate() {
        let vals: Vec<[f64; 2]> = probes.iter().map(|&x| ev.single_fine(p, x)).collect();
        for q in 0..2 {
            let mean = vals.iter().map(|v| v[q]).sum::<f64>() / vals.len() as f64;
            a_t[(q, j)] = -mean;
            for v in &vals {
                spread = spread.max((v[q] - mean).abs());
            }
        }
        let on = s.apply(p);
        for i in 0..pan.n {
            let v = on.at(i);
            for q in 0..2 {
                constancy = constancy.max((v[q] + a_t[(q, j)]).abs());
            }
        }
    }
    Ok(KernelBasis {
        pan: pan.clone(),
        phi_star,
        a_t,
        constancy_residual: constancy,
        probe_spread: spread,
        null_residual,
        singular_values: sv,
        rescale: 1.0,
    })
}

/// Kernel basis with the rescaling fallback: when the gap or moment checks fail
/// the curve is dilated by 0.9 (up to three times).
pub fn kernel_basis_with_rescue(curve: &Curve, n: usize, params: &LameParams) -> Result<KernelBasis> {
    let mut scale = 1.0;
    let mut last = None;
    for _ in 0..4 {
        let c = curve.scaled(scale);
        let pan = panelize(&c, n)?;
        match kernel_basis(&pan, params) {
            Ok(mut kb) => {
                kb.rescale = scale;
                return Ok(kb);
            }
            Err(e @ (Error::KernelDimension(_) | Error::DegenerateMoments(_))) => {
                last = Some(e);
                scale *= 0.9;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("loop ran"))
}

/// `φ = Π_0[φ] + Π_1[φ]` with `(Π_0[φ])^k = ⟨φ*_k, φ⟩`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub pi0: [f64; 2],
    pub pi1: DensityField,
}

pub fn decompose(kb: &KernelBasis, phi: &DensityField) -> Decomposition {
    let pi0 = [inner(&kb.pan, &kb.phi_star[0], phi), inner(&kb.pan, &kb.phi_star[1], phi)];
    Decomposition {
        pi0,
        pi1: phi.add_constant([-pi0[0], -pi0[1]]),
    }
}

/// Result of a periodic Dirichlet solve `(-½I + K^η)[g] = h`.
#[derive(Debug, Clone)]
pub struct PeriodicSolve {
    pub g: DensityField,
    pub residual: f64,
    pub condition: f64,
}

/// Dense LU solve of `(-½I + K^η)[g] = h`; `op` must be the assembled `K^η`.
pub fn solve_periodic_dirichlet(op: &BoundaryOperator, h: &DensityField) -> Result<PeriodicSolve> {
    if op.label != OperatorLabel::KEta {
        return Err(Error::OutOfRange(format!("expected K_eta, got {}", op.label)));
    }
    let n2 = 2 * op.n;
    let a = &op.matrix - DMatrix::identity(n2, n2) * 0.5;
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or_else(|| Error::Solve("singular periodic system".into()))?;
    let norm1 = |m: &DMatrix<f64>| {
        (0..m.ncols())
            .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let condition = norm1(&a) * norm1(&inv);
    if !(condition <= 1e10) {
        return Err(Error::IllConditioned(condition));
    }
    let hv = h.as_vector();
    let mut g = lu.solve(&hv).ok_or_else(|| Error::Solve("LU solve failed".into()))?;
    // one step of iterative refinement
    let r = &hv - &a * &g;
    if let Some(dg) = lu.solve(&r) {
        g += dg;
    }
    let residual = (&a * &g - &hv).amax();
    Ok(PeriodicSolve {
        g: DensityField::from_vector(&g),
        residual,
        condition,
    })
}
