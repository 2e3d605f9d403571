//! Kelvin fundamental solution, its derivatives, the conormal double-layer
//! kernel and the periodic Green function of the Lamé system.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::LameParams;

pub mod periodic;

pub use periodic::{EwaldConfig, PeriodicGreen};

pub type Mat2 = Matrix2<f64>;

/// `(c1, c2, ω_d)`.
pub fn lame_constants(params: &LameParams) -> (f64, f64, f64) {
    (params.c1(), params.c2(), params.omega())
}

/// Kelvin matrix `Γ^j_k(x)` (rows `j`, columns `k`) for `d ∈ {2,3}`.
pub fn kelvin(x: &[f64], params: &LameParams) -> Result<DMatrix<f64>> {
    let d = params.dim;
    if x.len() != d {
        return Err(Error::OutOfRange(format!("point has {} components, d = {d}", x.len())));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Err(Error::Singular("kelvin at x = 0"));
    }
    let (c1, c2, om) = lame_constants(params);
    let r = r2.sqrt();
    let diag = if d == 2 {
        c1 / (2.0 * std::f64::consts::PI) * r.ln()
    } else {
        c1 / ((2.0 - d as f64) * om) / r.powi(d as i32 - 2)
    };
    let rd = r.powi(d as i32);
    Ok(DMatrix::from_fn(d, d, |j, k| {
        let delta = if j == k { diag } else { 0.0 };
        delta - c2 / om * x[j] * x[k] / rd
    }))
}

/// `∂_i Γ^j_k(x)`, returned as `grad[i][(j, k)]`.
pub fn kelvin_gradient(x: &[f64], params: &LameParams) -> Result<Vec<DMatrix<f64>>> {
    let d = params.dim;
    if x.len() != d {
        return Err(Error::OutOfRange(format!("point has {} components, d = {d}", x.len())));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return Err(Error::Singular("kelvin_gradient at x = 0"));
    }
    let (c1, c2, om) = lame_constants(params);
    let rd = r2.sqrt().powi(d as i32);
    let rd2 = rd * r2;
    let df = d as f64;
    Ok((0..d)
        .map(|i| {
            DMatrix::from_fn(d, d, |j, k| {
                let dij = (i == j) as u8 as f64;
                let dik = (i == k) as u8 as f64;
                let djk = (j == k) as u8 as f64;
                c1 / om * djk * x[i] / rd
                    - c2 / om * ((dij * x[k] + dik * x[j]) / rd - df * x[i] * x[j] * x[k] / rd2)
            })
        })
        .collect())
}

/// Planar Kelvin evaluator with cached constants; the hot path for quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Kelvin2 {
    pub lambda: f64,
    pub mu: f64,
    pub c1: f64,
    pub c2: f64,
    /// `1/(2π)`.
    pub inv_om: f64,
}

impl Kelvin2 {
    pub fn new(params: &LameParams) -> Self {
        Self {
            lambda: params.lambda,
            mu: params.mu,
            c1: params.c1(),
            c2: params.c2(),
            inv_om: 1.0 / (2.0 * std::f64::consts::PI),
        }
    }

    #[inline]
    pub fn value(&self, x: [f64; 2]) -> Mat2 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let l = 0.5 * self.c1 * self.inv_om * r2.ln();
        let f = self.c2 * self.inv_om / r2;
        Mat2::new(l - f * x[0] * x[0], -f * x[0] * x[1], -f * x[0] * x[1], l - f * x[1] * x[1])
    }

    /// `[∂_1 Γ, ∂_2 Γ]`.
    #[inline]
    pub fn gradient(&self, x: [f64; 2]) -> [Mat2; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let a = self.c1 * self.inv_om / r2;
        let b = self.c2 * self.inv_om / r2;
        let g = 2.0 * b / r2;
        let mut out = [Mat2::zeros(); 2];
        for (i, m) in out.iter_mut().enumerate() {
            for j in 0..2 {
                for k in 0..2 {
                    let dij = (i == j) as u8 as f64;
                    let dik = (i == k) as u8 as f64;
                    let djk = (j == k) as u8 as f64;
                    m[(j, k)] = a * djk * x[i] - b * (dij * x[k] + dik * x[j]) + g * x[i] * x[j] * x[k];
                }
            }
        }
        out
    }

    /// Double-layer kernel `K_{ik}(x;y)` with `z = x - y`, split into the
    /// weakly singular part and the Cauchy-type part.
    #[inline]
    pub fn conormal(&self, z: [f64; 2], ny: [f64; 2]) -> (Mat2, Mat2) {
        let r2 = z[0] * z[0] + z[1] * z[1];
        let nz = ny[0] * z[0] + ny[1] * z[1];
        let a = -self.mu * self.c1 * self.inv_om * nz / r2;
        let b = -2.0 * self.mu * self.c2 * self.inv_om * nz / (r2 * r2);
        let c = self.mu * self.c2 * self.inv_om / r2;
        let weak = Mat2::new(
            a + b * z[0] * z[0],
            b * z[0] * z[1],
            b * z[1] * z[0],
            a + b * z[1] * z[1],
        );
        let w = c * (z[0] * ny[1] - z[1] * ny[0]);
        let cauchy = Mat2::new(0.0, w, -w, 0.0);
        (weak, cauchy)
    }

    /// Diagonal limit of the weakly singular part at a node with unit tangent
    /// `tau` and signed curvature `kappa = ⟨N, x''⟩/|x'|²`.
    #[inline]
    pub fn conormal_weak_limit(&self, tau: [f64; 2], kappa: f64) -> Mat2 {
        let l = 0.5 * kappa;
        let a = -self.mu * self.c1 * self.inv_om * l;
        let b = -2.0 * self.mu * self.c2 * self.inv_om * l;
        Mat2::new(
            a + b * tau[0] * tau[0],
            b * tau[0] * tau[1],
            b * tau[1] * tau[0],
            a + b * tau[1] * tau[1],
        )
    }

    /// Conormal derivative `(λ+μ)(div u) N + μ (∇u) N` of the columns of a
    /// matrix field with gradient `grad` (`grad[i][(j,k)] = ∂_i u^j_k`).
    /// Entry `(i, k)` is component `i` of the conormal derivative of column `k`.
    #[inline]
    pub fn conormal_of(&self, grad: &[Mat2; 2], n: [f64; 2]) -> Mat2 {
        let mut out = Mat2::zeros();
        for k in 0..2 {
            let div = grad[0][(0, k)] + grad[1][(1, k)];
            for i in 0..2 {
                out[(i, k)] = (self.lambda + self.mu) * div * n[i]
                    + self.mu * (n[0] * grad[0][(i, k)] + n[1] * grad[1][(i, k)]);
            }
        }
        out
    }
}

/// Double-layer kernel with its quadrature split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConormalKernel {
    /// First two displayed terms, `O(|x-y|^{1+α-d})` on smooth curves.
    pub weak: Mat2,
    /// Antisymmetric Cauchy-type third term.
    pub cauchy: Mat2,
}

impl ConormalKernel {
    pub fn total(&self) -> Mat2 {
        self.weak + self.cauchy
    }
}

/// `K_{ik}(x;y)`: component `i` of the conormal derivative in `y` of `Γ_k(x-y)`.
pub fn conormal_kernel(
    x: [f64; 2],
    y: [f64; 2],
    ny: [f64; 2],
    params: &LameParams,
) -> Result<ConormalKernel> {
    if x == y {
        return Err(Error::Singular("conormal kernel at x = y"));
    }
    let (weak, cauchy) = Kelvin2::new(params).conormal([x[0] - y[0], x[1] - y[1]], ny);
    Ok(ConormalKernel { weak, cauchy })
}

/// `K*_{ik}(x;y) - K_{ik}(x;y)` from its closed three-term form.
pub fn kernel_difference(
    x: [f64; 2],
    y: [f64; 2],
    nx: [f64; 2],
    ny: [f64; 2],
    params: &LameParams,
) -> Result<Mat2> {
    if x == y {
        return Err(Error::Singular("kernel difference at x = y"));
    }
    let (c1, c2, om) = lame_constants(params);
    let mu = params.mu;
    let z = [x[0] - y[0], x[1] - y[1]];
    let r2 = z[0] * z[0] + z[1] * z[1];
    let s = [nx[0] + ny[0], nx[1] + ny[1]];
    let dn = [nx[0] - ny[0], nx[1] - ny[1]];
    let zs = z[0] * s[0] + z[1] * s[1];
    Ok(Mat2::from_fn(|i, k| {
        let dik = (i == k) as u8 as f64;
        mu * c1 / om * zs * dik / r2 + 2.0 * c2 * mu / om * z[i] * z[k] * zs / (r2 * r2)
            + mu * c2 / om * (z[i] * dn[k] - z[k] * dn[i]) / r2
    }))
}
