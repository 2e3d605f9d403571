//! Periodic Green function on the unit torus by Ewald summation, its smooth
//! remainder `R = G - Γ`, a bicubic table of `R`, and the scaled Green function.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{Kelvin2, Mat2};
use crate::error::{Error, Result};
use crate::geometry::LameParams;
use crate::special::{ein, e1, one_minus_exp_over, one_minus_exp_over_deriv, EULER_GAMMA};

/// Ewald evaluation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwaldConfig {
    /// Target absolute accuracy of `G`.
    pub accuracy: f64,
    /// Split parameter `α`: real-space terms decay like `exp(-α² r²)`.
    pub alpha: f64,
    /// Fourier modes with `|ξ|_∞ ≤ fourier_cutoff` are summed.
    pub fourier_cutoff: usize,
    /// Nodes per side of the bicubic remainder table (0 disables the table).
    pub table_size: usize,
}

impl Default for EwaldConfig {
    fn default() -> Self {
        Self {
            accuracy: 1e-10,
            alpha: 4.0,
            fourier_cutoff: 8,
            table_size: 257,
        }
    }
}

impl EwaldConfig {
    /// A-priori bound on the truncation error anywhere in the closed cell.
    pub fn error_estimate(&self) -> f64 {
        let a = self.alpha * self.alpha;
        // Nearest omitted real-space image is at distance >= 1.5.
        let real = 16.0 * (e1(a * 2.25) + (-a * 2.25).exp()) / (4.0 * PI);
        let s = 1.0 / (4.0 * a);
        let kmin = 2.0 * PI * (self.fourier_cutoff as f64 + 1.0);
        let sk = s * kmin * kmin;
        let shells = 8.0 * (self.fourier_cutoff as f64 + 1.0);
        let fourier = 2.0 * shells * (-sk).exp() * (1.0 + sk) / (kmin * kmin) / (1.0 - (-s * 4.0 * PI * PI).exp());
        real + fourier
    }
}

/// Scalar Ewald pieces `A = Σ e^{ik·x}/|k|²` and `B = Σ e^{ik·x} kkᵀ/|k|⁴`
/// (sums over `ξ ≠ 0`) with the log singularity of the zero image removed.
/// Stored as `[A, B11, B12, B22]`.
#[derive(Debug, Clone, Copy, Default)]
struct Pieces {
    val: [f64; 4],
    dx: [f64; 4],
    dy: [f64; 4],
}

#[derive(Debug)]
struct EwaldSums {
    alpha: f64,
    modes: Vec<[f64; 5]>,
}

impl EwaldSums {
    fn new(cfg: &EwaldConfig) -> Self {
        let s = 1.0 / (4.0 * cfg.alpha * cfg.alpha);
        let n = cfg.fourier_cutoff as i64;
        let mut modes = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                // half plane; the symmetric partner doubles the weight
                if i < 0 || (i == 0 && j <= 0) {
                    continue;
                }
                let k = [2.0 * PI * i as f64, 2.0 * PI * j as f64];
                let k2 = k[0] * k[0] + k[1] * k[1];
                let wa = 2.0 * (-s * k2).exp() / k2;
                let wb = 2.0 * (-s * k2).exp() * (1.0 + s * k2) / (k2 * k2);
                modes.push([k[0], k[1], wa, wb, 0.0]);
            }
        }
        Self {
            alpha: cfg.alpha,
            modes,
        }
    }

    /// Regular pieces: the zero image is replaced by its smooth part so the
    /// result is finite at `x = 0`.
    fn regular(&self, x: [f64; 2]) -> Pieces {
        let al = self.alpha;
        let a2 = al * al;
        let s = 1.0 / (4.0 * a2);
        let c4 = 1.0 / (4.0 * PI);
        let mut p = Pieces::default();
        // zero image, regularized
        {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let a = a2 * r2;
            let konst = -EULER_GAMMA - 2.0 * al.ln();
            let e = ein(a);
            let g = one_minus_exp_over(a);
            let gp = one_minus_exp_over_deriv(a);
            p.val[0] += c4 * (konst + e);
            let bd = 0.5 * c4 * (konst + e);
            p.val[1] += bd + c4 * a2 * g * x[0] * x[0];
            p.val[2] += c4 * a2 * g * x[0] * x[1];
            p.val[3] += bd + c4 * a2 * g * x[1] * x[1];
            // gradients: ∂_m Ein(a) = 2α² g y_m
            let de = [2.0 * a2 * g * x[0], 2.0 * a2 * g * x[1]];
            let dd = [&mut p.dx, &mut p.dy];
            for (m, d) in dd.into_iter().enumerate() {
                let ym = x[m];
                d[0] += c4 * de[m];
                let bdm = 0.5 * c4 * de[m];
                let q = c4 * a2;
                let t = gp * 2.0 * a2 * ym;
                let dxx = (2.0 * (m == 0) as u8 as f64 * x[0]) * g + x[0] * x[0] * t;
                let dxy = ((m == 0) as u8 as f64 * x[1] + (m == 1) as u8 as f64 * x[0]) * g + x[0] * x[1] * t;
                let dyy = (2.0 * (m == 1) as u8 as f64 * x[1]) * g + x[1] * x[1] * t;
                d[1] += bdm + q * dxx;
                d[2] += q * dxy;
                d[3] += bdm + q * dyy;
            }
        }
        // other real-space images
        for ni in -1i32..=1 {
            for nj in -1i32..=1 {
                if ni == 0 && nj == 0 {
                    continue;
                }
                let y = [x[0] - ni as f64, x[1] - nj as f64];
                let r2 = y[0] * y[0] + y[1] * y[1];
                let a = a2 * r2;
                let ea = (-a).exp();
                let e1v = e1(a);
                let f = ea / r2;
                let fp = -ea * (a2 / r2 + 1.0 / (r2 * r2));
                p.val[0] += c4 * e1v;
                p.val[1] += c4 * (0.5 * e1v - y[0] * y[0] * f);
                p.val[2] += c4 * (-y[0] * y[1] * f);
                p.val[3] += c4 * (0.5 * e1v - y[1] * y[1] * f);
                let dd = [&mut p.dx, &mut p.dy];
                for (m, d) in dd.into_iter().enumerate() {
                    let de1 = -2.0 * y[m] * f;
                    let dm0 = (m == 0) as u8 as f64;
                    let dm1 = (m == 1) as u8 as f64;
                    let t = 2.0 * y[m] * fp;
                    d[0] += c4 * de1;
                    d[1] += c4 * (0.5 * de1 - (2.0 * dm0 * y[0] * f + y[0] * y[0] * t));
                    d[2] += c4 * (-((dm0 * y[1] + dm1 * y[0]) * f + y[0] * y[1] * t));
                    d[3] += c4 * (0.5 * de1 - (2.0 * dm1 * y[1] * f + y[1] * y[1] * t));
                }
            }
        }
        p.val[0] -= s;
        // reciprocal space
        for m in &self.modes {
            let (kx, ky, wa, wb) = (m[0], m[1], m[2], m[3]);
            let ph = kx * x[0] + ky * x[1];
            let (sn, cs) = ph.sin_cos();
            let bxx = wb * kx * kx;
            let bxy = wb * kx * ky;
            let byy = wb * ky * ky;
            p.val[0] += wa * cs;
            p.val[1] += bxx * cs;
            p.val[2] += bxy * cs;
            p.val[3] += byy * cs;
            for (d, km) in [(&mut p.dx, kx), (&mut p.dy, ky)] {
                let sk = -sn * km;
                d[0] += wa * sk;
                d[1] += bxx * sk;
                d[2] += bxy * sk;
                d[3] += byy * sk;
            }
        }
        p
    }
}

/// Bicubic Hermite table of the regular pieces over `[-1/2, 1/2]²`.
#[derive(Debug)]
struct PieceTable {
    m: usize,
    h: f64,
    /// Per node: value, ∂x, ∂y, ∂xy for each of the four pieces.
    data: Vec<[[f64; 4]; 4]>,
}

impl PieceTable {
    fn build(sums: &EwaldSums, m: usize) -> Self {
        use rayon::prelude::*;
        let h = 1.0 / (m - 1) as f64;
        let dlt = 1e-4;
        let data = (0..m * m)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / m, idx % m);
                let x = [-0.5 + i as f64 * h, -0.5 + j as f64 * h];
                let p = sums.regular(x);
                let pu = sums.regular([x[0], x[1] + dlt]);
                let pd = sums.regular([x[0], x[1] - dlt]);
                let pr = sums.regular([x[0] + dlt, x[1]]);
                let pl = sums.regular([x[0] - dlt, x[1]]);
                let mut out = [[0.0; 4]; 4];
                for c in 0..4 {
                    let dxy = 0.5 * ((pu.dx[c] - pd.dx[c]) + (pr.dy[c] - pl.dy[c])) / (2.0 * dlt);
                    out[c] = [p.val[c], p.dx[c], p.dy[c], dxy];
                }
                out
            })
            .collect();
        Self { m, h, data }
    }

    fn eval(&self, x: [f64; 2]) -> Pieces {
        let fx = ((x[0] + 0.5) / self.h).clamp(0.0, (self.m - 1) as f64 - 1e-12);
        let fy = ((x[1] + 0.5) / self.h).clamp(0.0, (self.m - 1) as f64 - 1e-12);
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (i, j) = (i.min(self.m - 2), j.min(self.m - 2));
        let (u, v) = (fx - i as f64, fy - j as f64);
        let basis = |t: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            (
                [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2],
                [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t],
            )
        };
        let (bu, dbu) = basis(u);
        let (bv, dbv) = basis(v);
        let h = self.h;
        let mut p = Pieces::default();
        for (ci, ii) in [(0usize, i), (1, i + 1)] {
            for (cj, jj) in [(0usize, j), (1, j + 1)] {
                let node = &self.data[ii * self.m + jj];
                let (a0, a1) = (bu[2 * ci], bu[2 * ci + 1] * h);
                let (da0, da1) = (dbu[2 * ci] / h, dbu[2 * ci + 1]);
                let (b0, b1) = (bv[2 * cj], bv[2 * cj + 1] * h);
                let (db0, db1) = (dbv[2 * cj] / h, dbv[2 * cj + 1]);
                for c in 0..4 {
                    let [f, fxv, fyv, fxy] = node[c];
                    p.val[c] += a0 * b0 * f + a1 * b0 * fxv + a0 * b1 * fyv + a1 * b1 * fxy;
                    p.dx[c] += da0 * b0 * f + da1 * b0 * fxv + da0 * b1 * fyv + da1 * b1 * fxy;
                    p.dy[c] += a0 * db0 * f + a1 * db0 * fxv + a0 * db1 * fyv + a1 * db1 * fxy;
                }
            }
        }
        p
    }
}

type TableKey = (u64, usize, usize);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<PieceTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<PieceTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Zero-mean periodic Green function of `L` on the unit torus,
/// `L G_k = (δ_0 - 1) e_k`.
#[derive(Debug, Clone)]
pub struct PeriodicGreen {
    pub params: LameParams,
    pub cfg: EwaldConfig,
    kelvin: Kelvin2,
    sums: Arc<EwaldSums>,
    table: Option<Arc<PieceTable>>,
}

/// Matrix value with its gradient `[∂_1, ∂_2]`.
pub type ValueGrad = (Mat2, [Mat2; 2]);

impl PeriodicGreen {
    pub fn new(params: &LameParams, cfg: EwaldConfig) -> Result<Self> {
        if params.dim != 2 {
            return Err(Error::OutOfRange("periodic Green function is planar only".into()));
        }
        if cfg.fourier_cutoff > 20 {
            return Err(Error::OutOfRange("fourier_cutoff above 20 (41² modes)".into()));
        }
        let estimate = cfg.error_estimate();
        if !(estimate <= cfg.accuracy) {
            return Err(Error::Truncation {
                requested: cfg.accuracy,
                estimate,
            });
        }
        let sums = Arc::new(EwaldSums::new(&cfg));
        let table = if cfg.table_size >= 2 {
            let key = (cfg.alpha.to_bits(), cfg.fourier_cutoff, cfg.table_size);
            let mut cache = table_cache().lock().expect("table cache poisoned");
            Some(
                cache
                    .entry(key)
                    .or_insert_with(|| Arc::new(PieceTable::build(&sums, cfg.table_size)))
                    .clone(),
            )
        } else {
            None
        };
        Ok(Self {
            params: *params,
            cfg,
            kelvin: Kelvin2::new(params),
            sums,
            table,
        })
    }

    /// Direct (reference) evaluation without the table.
    pub fn without_table(&self) -> Self {
        Self {
            table: None,
            ..self.clone()
        }
    }

    fn combine(&self, p: &Pieces) -> ValueGrad {
        let mu = self.params.mu;
        let lam = self.params.lambda;
        let beta = (lam + mu) / (mu * (lam + 2.0 * mu));
        let mk = |v: &[f64; 4]| {
            Mat2::new(
                -v[0] / mu + beta * v[1],
                beta * v[2],
                beta * v[2],
                -v[0] / mu + beta * v[3],
            )
        };
        (mk(&p.val), [mk(&p.dx), mk(&p.dy)])
    }

    /// `R(x)` and `∇R(x)` by direct Ewald summation; `x` in the closed cell.
    pub fn remainder_direct(&self, x: [f64; 2]) -> ValueGrad {
        self.combine(&self.sums.regular(x))
    }

    /// `R(x)` and `∇R(x)` for `x` in the closed cell (table when enabled).
    pub fn remainder(&self, x: [f64; 2]) -> ValueGrad {
        match &self.table {
            Some(t) if x[0].abs() <= 0.5 && x[1].abs() <= 0.5 => self.combine(&t.eval(x)),
            _ => self.remainder_direct(x),
        }
    }

    /// `G(x) - Γ(x)` for any `x` away from the nonzero lattice points,
    /// using periodicity of `G` outside the cell.
    pub fn remainder_any(&self, x: [f64; 2]) -> ValueGrad {
        let w = wrap(x);
        if w == x {
            return self.remainder(x);
        }
        let (r, dr) = self.remainder(w);
        let gw = self.kelvin.value(w);
        let dgw = self.kelvin.gradient(w);
        let gx = self.kelvin.value(x);
        let dgx = self.kelvin.gradient(x);
        (r + gw - gx, [dr[0] + dgw[0] - dgx[0], dr[1] + dgw[1] - dgx[1]])
    }

    /// `G(x)` with gradient, `x` reduced to the cell; `x` must not be a lattice point.
    pub fn green(&self, x: [f64; 2]) -> Result<ValueGrad> {
        let w = wrap(x);
        if w[0] == 0.0 && w[1] == 0.0 {
            return Err(Error::Singular("periodic Green function at a lattice point"));
        }
        let (r, dr) = self.remainder(w);
        let g = self.kelvin.value(w);
        let dg = self.kelvin.gradient(w);
        Ok((g + r, [dg[0] + dr[0], dg[1] + dr[1]]))
    }

    /// `R(ηz)` and its gradient in `z`, i.e. `η ∇R(ηz)`.
    pub fn scaled_remainder(&self, z: [f64; 2], eta: f64) -> ValueGrad {
        let (r, dr) = self.remainder_any([eta * z[0], eta * z[1]]);
        (r, [dr[0] * eta, dr[1] * eta])
    }

    /// `G^η(x) = Γ(x) + R(ηx)` with gradient in `x`; evaluated through
    /// `G(ηx) - (c1/2π)(log η) I` away from the hole scale.
    pub fn scaled_green(&self, x: [f64; 2], eta: f64) -> Result<ValueGrad> {
        if x[0] == 0.0 && x[1] == 0.0 {
            return Err(Error::Singular("scaled Green function at x = 0"));
        }
        let w = [eta * x[0], eta * x[1]];
        if wrap(w) == w {
            let (r, dr) = self.remainder(w);
            let g = self.kelvin.value(x);
            let dg = self.kelvin.gradient(x);
            return Ok((g + r, [dg[0] + dr[0] * eta, dg[1] + dr[1] * eta]));
        }
        let (g, dg) = self.green(w)?;
        let shift = self.kelvin.c1 * self.kelvin.inv_om * eta.ln();
        Ok((g - Mat2::identity() * shift, [dg[0] * eta, dg[1] * eta]))
    }
}

/// Reduces a point to the closed cell `[-1/2, 1/2]²` (identity inside it).
pub fn wrap(x: [f64; 2]) -> [f64; 2] {
    let f = |v: f64| if v.abs() <= 0.5 { v } else { v - v.round() };
    [f(x[0]), f(x[1])]
}
