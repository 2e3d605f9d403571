//! Finite-difference oracle for the perforated problem on `D = (0,1)²`, the
//! effective problems, discrepancy fields `ζ^ε`, and the norms used by the
//! rate studies.

use std::io::Write;
use std::path::Path;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{OscillatingField, Regime};
use crate::error::{Error, Result};
use crate::geometry::{LameParams, PerforationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Fluid,
    Hole,
    Boundary,
}

/// Vector field on the nodes `(i h, j h)`, `0 ≤ i, j ≤ n`, stored at index
/// `j (n+1) + i`. Zero on hole and boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub n: usize,
    pub h: f64,
    pub mask: Vec<NodeKind>,
    pub values: Vec<[f64; 2]>,
}

/// Forcing term, given analytically.
pub type Forcing<'a> = &'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync);

impl GridField {
    pub fn zeros(n: usize, mask: Vec<NodeKind>) -> Self {
        Self {
            n,
            h: 1.0 / n as f64,
            values: vec![[0.0; 2]; mask.len()],
            mask,
        }
    }

    /// Samples `f` on fluid nodes.
    pub fn from_fn(n: usize, mask: Vec<NodeKind>, f: Forcing<'_>) -> Self {
        let h = 1.0 / n as f64;
        let values = (0..mask.len())
            .into_par_iter()
            .map(|q| {
                if mask[q] == NodeKind::Fluid {
                    f([(q % (n + 1)) as f64 * h, (q / (n + 1)) as f64 * h])
                } else {
                    [0.0; 2]
                }
            })
            .collect();
        Self { n, h, mask, values }
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn point(&self, q: usize) -> [f64; 2] {
        [(q % (self.n + 1)) as f64 * self.h, (q / (self.n + 1)) as f64 * self.h]
    }

    fn check_same(&self, other: &GridField) -> Result<()> {
        if self.n != other.n {
            return Err(Error::GridMismatch(self.n, other.n));
        }
        Ok(())
    }

    /// `(Σ h² |u|²)^{1/2}` over all nodes (the field is zero off the fluid).
    pub fn l2_norm(&self) -> f64 {
        (self.h * self.h * chunked_sum(&self.values, |v| v[0] * v[0] + v[1] * v[1])).sqrt()
    }

    fn edge_sum(&self, fluid_only: bool) -> f64 {
        let n = self.n;
        let rows: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|j| {
                let mut s = 0.0;
                for i in 0..=n {
                    let a = self.idx(i, j);
                    for (di, dj) in [(1usize, 0usize), (0, 1)] {
                        if i + di > n || j + dj > n {
                            continue;
                        }
                        let b = self.idx(i + di, j + dj);
                        if fluid_only && !(self.mask[a] == NodeKind::Fluid && self.mask[b] == NodeKind::Fluid) {
                            continue;
                        }
                        let d0 = self.values[b][0] - self.values[a][0];
                        let d1 = self.values[b][1] - self.values[a][1];
                        s += d0 * d0 + d1 * d1;
                    }
                }
                s
            })
            .collect();
        rows.iter().sum()
    }

    /// `‖∇u‖_{L²}` of the zero-extended field (forward differences, all edges).
    pub fn h1_seminorm(&self) -> f64 {
        self.edge_sum(false).sqrt()
    }

    /// `‖∇u‖_{L²}` from forward differences on fluid-fluid edges only.
    pub fn h1_seminorm_fluid(&self) -> f64 {
        self.edge_sum(true).sqrt()
    }

    /// Discrete energy `∫ μ|∇u|² + (λ+μ)(div u)²` matching the operator of
    /// [`solve_perforated`] exactly (edge differences plus centered cross terms).
    pub fn energy(&self, params: &LameParams) -> f64 {
        let n = self.n;
        let h = self.h;
        let lm = params.lambda + params.mu;
        let v = &self.values;
        let rows: Vec<f64> = (0..=n)
            .into_par_iter()
            .map(|j| {
                let mut lap = 0.0;
                let mut axial = 0.0;
                let mut cross = 0.0;
                for i in 0..=n {
                    let a = j * (n + 1) + i;
                    if i < n {
                        let b = a + 1;
                        let d = [v[b][0] - v[a][0], v[b][1] - v[a][1]];
                        lap += d[0] * d[0] + d[1] * d[1];
                        axial += d[0] * d[0];
                    }
                    if j < n {
                        let b = a + n + 1;
                        let d = [v[b][0] - v[a][0], v[b][1] - v[a][1]];
                        lap += d[0] * d[0] + d[1] * d[1];
                        axial += d[1] * d[1];
                    }
                    // centered differences; values beyond the grid are zero
                    let at = |ii: isize, jj: isize, c: usize| -> f64 {
                        if ii < 0 || jj < 0 || ii > n as isize || jj > n as isize {
                            0.0
                        } else {
                            v[jj as usize * (n + 1) + ii as usize][c]
                        }
                    };
                    let (ii, jj) = (i as isize, j as isize);
                    let dx = (at(ii + 1, jj, 0) - at(ii - 1, jj, 0)) / (2.0 * h);
                    let dy = (at(ii, jj + 1, 1) - at(ii, jj - 1, 1)) / (2.0 * h);
                    cross += dx * dy;
                }
                params.mu * lap + lm * (axial + 2.0 * h * h * cross)
            })
            .collect();
        rows.iter().sum()
    }

    /// `Σ h² f·u` over fluid nodes.
    pub fn dot(&self, other: &GridField) -> Result<f64> {
        self.check_same(other)?;
        let prods: Vec<f64> = (0..self.values.len())
            .map(|q| {
                if self.mask[q] == NodeKind::Fluid {
                    self.values[q][0] * other.values[q][0] + self.values[q][1] * other.values[q][1]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(self.h * self.h * chunked_sum(&prods, |x| *x))
    }

    /// Flat binary layout: magic line, `n` (u64), `h` (f64), one mask byte per
    /// node (0 fluid, 1 hole, 2 boundary), then `2 (n+1)²` f64, all little-endian.
    pub fn export_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"perfhom-grid-v1\n")?;
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&self.h.to_le_bytes())?;
        let mask: Vec<u8> = self
            .mask
            .iter()
            .map(|m| match m {
                NodeKind::Fluid => 0,
                NodeKind::Hole => 1,
                NodeKind::Boundary => 2,
            })
            .collect();
        f.write_all(&mask)?;
        for v in &self.values {
            f.write_all(&v[0].to_le_bytes())?;
            f.write_all(&v[1].to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// CSV of the row `y = j h`: columns `x, u1, u2, mask`.
    pub fn export_csv_slice(&self, path: &Path, j: usize) -> Result<()> {
        if j > self.n {
            return Err(Error::OutOfRange(format!("row {j} > {}", self.n)));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(["x", "u1", "u2", "mask"]).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..=self.n {
            let q = self.idx(i, j);
            let kind = match self.mask[q] {
                NodeKind::Fluid => "fluid",
                NodeKind::Hole => "hole",
                NodeKind::Boundary => "boundary",
            };
            w.write_record([
                format!("{}", i as f64 * self.h),
                format!("{:e}", self.values[q][0]),
                format!("{:e}", self.values[q][1]),
                kind.to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed-size chunks summed in order: the result does not depend on the
/// worker count.
fn chunked_sum<T: Sync>(xs: &[T], f: impl Fn(&T) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 4096;
    let parts: Vec<f64> = xs.par_chunks(CHUNK).map(|c| c.iter().map(&f).sum::<f64>()).collect();
    parts.iter().sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    let parts: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    parts.iter().sum()
}

/// Node classification for the perforated grid: `∂D` is boundary, retained
/// holes (closures) are masked.
pub fn perforated_mask(perf: &PerforationSpec, n: usize) -> Vec<NodeKind> {
    let h = 1.0 / n as f64;
    (0..(n + 1) * (n + 1))
        .into_par_iter()
        .map(|q| {
            let (i, j) = (q % (n + 1), q / (n + 1));
            if i == 0 || j == 0 || i == n || j == n {
                NodeKind::Boundary
            } else if perf.in_hole([i as f64 * h, j as f64 * h]) {
                NodeKind::Hole
            } else {
                NodeKind::Fluid
            }
        })
        .collect()
}

/// Mask of the unperforated grid.
pub fn plain_mask(n: usize) -> Vec<NodeKind> {
    (0..(n + 1) * (n + 1))
        .map(|q| {
            let (i, j) = (q % (n + 1), q / (n + 1));
            if i == 0 || j == 0 || i == n || j == n {
                NodeKind::Boundary
            } else {
                NodeKind::Fluid
            }
        })
        .collect()
}

/// `-L_h + S` on a square lattice of `side` nodes per direction, acting on
/// stacked node values; non-fluid nodes are Dirichlet zeros.
struct FdOperator<'a> {
    side: usize,
    periodic: bool,
    h: f64,
    mu: f64,
    lm: f64,
    shift: Matrix2<f64>,
    mask: &'a [NodeKind],
}

impl FdOperator<'_> {
    fn diag(&self) -> [f64; 2] {
        let h2 = self.h * self.h;
        let d = 4.0 * self.mu / h2 + 2.0 * self.lm / h2;
        [d + self.shift[(0, 0)], d + self.shift[(1, 1)]]
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let s = self.side;
        let h2 = self.h * self.h;
        let (mu, lm) = (self.mu, self.lm);
        let periodic = self.periodic;
        let nb = |i: usize, d: isize| -> usize {
            let t = i as isize + d;
            if periodic {
                t.rem_euclid(s as isize) as usize
            } else {
                t as usize
            }
        };
        out.par_chunks_mut(2 * s).enumerate().for_each(|(j, row)| {
            for i in 0..s {
                let q = j * s + i;
                if self.mask[q] != NodeKind::Fluid {
                    row[2 * i] = 0.0;
                    row[2 * i + 1] = 0.0;
                    continue;
                }
                let at = |di: isize, dj: isize, c: usize| u[2 * (nb(j, dj) * s + nb(i, di)) + c];
                let mut r = [0.0; 2];
                for c in 0..2 {
                    let lap = at(1, 0, c) + at(-1, 0, c) + at(0, 1, c) + at(0, -1, c) - 4.0 * at(0, 0, c);
                    r[c] = -mu * lap / h2;
                }
                let dxx = (at(1, 0, 0) - 2.0 * at(0, 0, 0) + at(-1, 0, 0)) / h2;
                let dyy = (at(0, 1, 1) - 2.0 * at(0, 0, 1) + at(0, -1, 1)) / h2;
                let dxy = |c: usize| (at(1, 1, c) - at(1, -1, c) - at(-1, 1, c) + at(-1, -1, c)) / (4.0 * h2);
                r[0] -= lm * (dxx + dxy(1));
                r[1] -= lm * (dxy(0) + dyy);
                let u0 = [at(0, 0, 0), at(0, 0, 1)];
                r[0] += self.shift[(0, 0)] * u0[0] + self.shift[(0, 1)] * u0[1];
                r[1] += self.shift[(1, 0)] * u0[0] + self.shift[(1, 1)] * u0[1];
                row[2 * i] = r[0];
                row[2 * i + 1] = r[1];
            }
        });
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

pub const CG_TOL: f64 = 1e-10;

fn conjugate_gradient(op: &FdOperator<'_>, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveStats)> {
    let len = b.len();
    let d = op.diag();
    let inv: Vec<f64> = (0..len)
        .map(|r| if op.mask[r / 2] == NodeKind::Fluid { 1.0 / d[r % 2] } else { 0.0 })
        .collect();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; len];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, w)| a * w).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let max_iter = 50 * op.side + 1000;
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solve(format!("CG breakdown at iteration {it}")));
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        z.par_iter_mut().zip(&r).zip(&inv).for_each(|((zi, ri), wi)| *zi = ri * wi);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::Solve(format!("CG did not reach {tol:e} in {max_iter} iterations")))
}

fn stacked(field: &GridField) -> Vec<f64> {
    field.values.iter().flat_map(|v| [v[0], v[1]]).collect()
}

fn unstack(n: usize, mask: Vec<NodeKind>, x: &[f64]) -> GridField {
    let values = x.chunks(2).map(|c| [c[0], c[1]]).collect();
    GridField {
        n,
        h: 1.0 / n as f64,
        mask,
        values,
    }
}

fn solve_dirichlet(
    n: usize,
    mask: Vec<NodeKind>,
    f: Forcing<'_>,
    params: &LameParams,
    shift: Matrix2<f64>,
) -> Result<(GridField, SolveStats)> {
    let rhs = GridField::from_fn(n, mask.clone(), f);
    let op = FdOperator {
        side: n + 1,
        periodic: false,
        h: 1.0 / n as f64,
        mu: params.mu,
        lm: params.lambda + params.mu,
        shift,
        mask: &mask,
    };
    let (x, stats) = conjugate_gradient(&op, &stacked(&rhs), CG_TOL)?;
    Ok((unstack(n, mask, &x), stats))
}

/// Perforated solve with its structural diagnostics.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub field: GridField,
    pub stats: SolveStats,
    /// `|E_h(ũ) - Σ h² f·ũ| / Σ h² f·ũ`.
    pub energy_identity: f64,
}

/// Minimum grid size for a perforation: `⌈8/(εη)⌉`.
pub fn required_grid(perf: &PerforationSpec) -> usize {
    (8.0 / perf.hole_scale()).ceil() as usize
}

/// `ũ^ε` for `-L u = f` in `D^ε`, `u = 0` on `∂D^ε`.
pub fn solve_perforated(perf: &PerforationSpec, f: Forcing<'_>, params: &LameParams, grid_n: usize) -> Result<OracleSolution> {
    let required = required_grid(perf);
    if grid_n < required {
        return Err(Error::Unresolved {
            grid: grid_n,
            required,
        });
    }
    let mask = perforated_mask(perf, grid_n);
    let (field, stats) = solve_dirichlet(grid_n, mask.clone(), f, params, Matrix2::zeros())?;
    let rhs = GridField::from_fn(grid_n, mask, f);
    let work = rhs.dot(&field)?;
    let e = field.energy(params);
    let energy_identity = if work == 0.0 { (e - work).abs() } else { (e - work).abs() / work.abs() };
    Ok(OracleSolution {
        field,
        stats,
        energy_identity,
    })
}

/// Effective problem of `regime`: `M⁻¹ f` (super-critical, pointwise),
/// `-L u + (M/σ0²) u = f` (critical) or `-L u = f` (sub-critical), with
/// `u = 0` on `∂D` for the differential ones.
pub fn solve_effective(
    regime: Regime,
    m: &Matrix2<f64>,
    sigma0: Option<f64>,
    f: Forcing<'_>,
    params: &LameParams,
    grid_n: usize,
) -> Result<GridField> {
    let sym = (m + m.transpose()) * 0.5;
    if (m - m.transpose()).amax() > 1e-10 * m.amax() || !(sym.symmetric_eigenvalues().min() > 0.0) {
        return Err(Error::Singular("M is not symmetric positive definite"));
    }
    match regime {
        Regime::SuperCritical => {
            let minv = m.try_inverse().ok_or(Error::Singular("M singular"))?;
            let mask = vec![NodeKind::Fluid; (grid_n + 1) * (grid_n + 1)];
            let g = move |x: [f64; 2]| {
                let v = f(x);
                [minv[(0, 0)] * v[0] + minv[(0, 1)] * v[1], minv[(1, 0)] * v[0] + minv[(1, 1)] * v[1]]
            };
            Ok(GridField::from_fn(grid_n, mask, &g))
        }
        Regime::Critical => {
            let s0 = sigma0.ok_or_else(|| Error::OutOfRange("critical regime needs sigma0".into()))?;
            if !(s0 > 0.0) {
                return Err(Error::OutOfRange(format!("sigma0 = {s0}")));
            }
            Ok(solve_dirichlet(grid_n, plain_mask(grid_n), f, params, m / (s0 * s0))?.0)
        }
        Regime::SubCritical => Ok(solve_dirichlet(grid_n, plain_mask(grid_n), f, params, Matrix2::zeros())?.0),
    }
}

/// Discrete oscillating fields: `-L_h v_k = σ⁻² e_k` on one periodic cell of
/// the grid (`n ε` must be an integer), zero on hole nodes, tiled over `D`.
pub fn oscillating_fd(perf: &PerforationSpec, params: &LameParams, grid_n: usize, sigma: f64) -> Result<[GridField; 2]> {
    let period = grid_n as f64 * perf.epsilon;
    let p = period.round() as usize;
    if p < 4 || (period - p as f64).abs() > 1e-9 {
        return Err(Error::OutOfRange(format!("grid {grid_n} is not a multiple of 1/epsilon")));
    }
    let h = 1.0 / grid_n as f64;
    let e = perf.epsilon;
    let s = perf.hole_scale();
    let in_cell_hole = |x: [f64; 2]| {
        let q = [(x[0] / e - (x[0] / e).round()) * e / s, (x[1] / e - (x[1] / e).round()) * e / s];
        q[0].hypot(q[1]) <= perf.curve.r2 && perf.curve.contains(q)
    };
    let cell_mask: Vec<NodeKind> = (0..p * p)
        .map(|q| {
            if in_cell_hole([(q % p) as f64 * h, (q / p) as f64 * h]) {
                NodeKind::Hole
            } else {
                NodeKind::Fluid
            }
        })
        .collect();
    let op = FdOperator {
        side: p,
        periodic: true,
        h,
        mu: params.mu,
        lm: params.lambda + params.mu,
        shift: Matrix2::zeros(),
        mask: &cell_mask,
    };
    let inv_s2 = 1.0 / (sigma * sigma);
    let full_mask: Vec<NodeKind> = (0..(grid_n + 1) * (grid_n + 1))
        .map(|q| {
            let (i, j) = (q % (grid_n + 1), q / (grid_n + 1));
            cell_mask[(j % p) * p + i % p]
        })
        .collect();
    let mut out = Vec::with_capacity(2);
    for k in 0..2 {
        let b: Vec<f64> = (0..2 * p * p)
            .map(|r| if cell_mask[r / 2] == NodeKind::Fluid && r % 2 == k { inv_s2 } else { 0.0 })
            .collect();
        let (x, _) = conjugate_gradient(&op, &b, CG_TOL)?;
        let values = (0..(grid_n + 1) * (grid_n + 1))
            .map(|q| {
                let (i, j) = (q % (grid_n + 1), q / (grid_n + 1));
                let c = (j % p) * p + i % p;
                [x[2 * c], x[2 * c + 1]]
            })
            .collect();
        out.push(GridField {
            n: grid_n,
            h,
            mask: full_mask.clone(),
            values,
        });
    }
    let second = out.pop().expect("two fields");
    let first = out.pop().expect("two fields");
    Ok([first, second])
}

/// Samples `v^ε_k` from the boundary-integral cell solution onto the grid.
pub fn oscillating_on_grid(field: &OscillatingField, mask: &[NodeKind], n: usize) -> [GridField; 2] {
    let vals = field.sample_grid(n);
    let mk = |k: usize| GridField {
        n,
        h: 1.0 / n as f64,
        mask: mask.iter().map(|m| if *m == NodeKind::Hole { NodeKind::Hole } else { NodeKind::Fluid }).collect(),
        values: vals
            .iter()
            .zip(mask)
            .map(|(v, m)| if *m == NodeKind::Hole { [0.0; 2] } else { [v[(0, k)], v[(1, k)]] })
            .collect(),
    };
    [mk(0), mk(1)]
}

#[derive(Debug, Clone)]
pub struct DiscrepancyField {
    pub regime: Regime,
    pub field: GridField,
    pub l2: f64,
    /// Seminorm from fluid-fluid edges.
    pub h1: f64,
}

/// `ζ^ε`: super-critical `ũ/σ² - f^k v_k` (`reference` is `f` sampled on the
/// grid); critical `ũ - σ² (M u/σ0²)^k v_k`; sub-critical `ũ - (M u)^k v_k`
/// (`reference` is `u`).
pub fn discrepancy(
    regime: Regime,
    u_eps: &GridField,
    reference: &GridField,
    v: &[GridField; 2],
    m: &Matrix2<f64>,
    sigma_eps: f64,
    sigma0: Option<f64>,
) -> Result<DiscrepancyField> {
    u_eps.check_same(reference)?;
    u_eps.check_same(&v[0])?;
    u_eps.check_same(&v[1])?;
    let s2 = sigma_eps * sigma_eps;
    let coeff: Matrix2<f64> = match regime {
        Regime::SuperCritical => Matrix2::identity(),
        Regime::Critical => {
            let s0 = sigma0.ok_or_else(|| Error::OutOfRange("critical regime needs sigma0".into()))?;
            m * (s2 / (s0 * s0))
        }
        Regime::SubCritical => *m,
    };
    let scale = if regime == Regime::SuperCritical { 1.0 / s2 } else { 1.0 };
    let values = (0..u_eps.values.len())
        .map(|q| {
            if u_eps.mask[q] != NodeKind::Fluid {
                return [0.0; 2];
            }
            let r = reference.values[q];
            let a = [coeff[(0, 0)] * r[0] + coeff[(0, 1)] * r[1], coeff[(1, 0)] * r[0] + coeff[(1, 1)] * r[1]];
            let u = u_eps.values[q];
            [
                scale * u[0] - a[0] * v[0].values[q][0] - a[1] * v[1].values[q][0],
                scale * u[1] - a[0] * v[0].values[q][1] - a[1] * v[1].values[q][1],
            ]
        })
        .collect();
    let field = GridField {
        n: u_eps.n,
        h: u_eps.h,
        mask: u_eps.mask.clone(),
        values,
    };
    Ok(DiscrepancyField {
        regime,
        l2: field.l2_norm(),
        h1: field.h1_seminorm_fluid(),
        field,
    })
}

/// Compactly supported bump `exp(1 - 1/(1 - |x-c|²/ρ²))` (peak value 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5],
            radius: 0.35,
        }
    }
}

impl Bump {
    /// Value and gradient.
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let s = (d[0] * d[0] + d[1] * d[1]) / (self.radius * self.radius);
        if s >= 1.0 {
            return (0.0, [0.0; 2]);
        }
        let v = (1.0 - 1.0 / (1.0 - s)).exp();
        let ds = -v / ((1.0 - s) * (1.0 - s));
        let g = 2.0 / (self.radius * self.radius);
        (v, [ds * g * d[0], ds * g * d[1]])
    }
}

/// The five integrals of the oscillating-test identity
/// `I1 + I2 - I3 - I4 = I5` and the normalized residual.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdentityReport {
    pub integrals: [f64; 5],
    pub residual: f64,
}

/// Evaluates the identity for component `k` with centered differences.
pub fn oscillating_test_identity(
    u: &GridField,
    v: &GridField,
    k: usize,
    f: Forcing<'_>,
    phi: &Bump,
    sigma_eps: f64,
    params: &LameParams,
) -> Result<IdentityReport> {
    u.check_same(v)?;
    if k > 1 {
        return Err(Error::OutOfRange(format!("component {k}")));
    }
    let n = u.n;
    let h = u.h;
    let mu = params.mu;
    let lm = params.lambda + params.mu;
    let s2 = sigma_eps * sigma_eps;
    let grad = |fld: &GridField, i: usize, j: usize| -> [[f64; 2]; 2] {
        // g[c][m] = ∂_m u^c
        let at = |ii: usize, jj: usize| fld.values[jj * (n + 1) + ii];
        let mut g = [[0.0; 2]; 2];
        for c in 0..2 {
            g[c][0] = (at(i + 1, j)[c] - at(i - 1, j)[c]) / (2.0 * h);
            g[c][1] = (at(i, j + 1)[c] - at(i, j - 1)[c]) / (2.0 * h);
        }
        g
    };
    let rows: Vec<[f64; 5]> = (1..n)
        .into_par_iter()
        .map(|j| {
            let mut s = [0.0; 5];
            for i in 1..n {
                let x = [i as f64 * h, j as f64 * h];
                let (p, dp) = phi.eval(x);
                if p == 0.0 && dp == [0.0, 0.0] {
                    continue;
                }
                let q = j * (n + 1) + i;
                let uu = u.values[q];
                let vv = v.values[q];
                let gu = grad(u, i, j);
                let gv = grad(v, i, j);
                let divu = gu[0][0] + gu[1][1];
                let divv = gv[0][0] + gv[1][1];
                let mut i1 = 0.0;
                let mut i3 = 0.0;
                for c in 0..2 {
                    for m in 0..2 {
                        i1 += gu[c][m] * vv[c] * dp[m];
                        i3 += gv[c][m] * uu[c] * dp[m];
                    }
                }
                let dpv = dp[0] * vv[0] + dp[1] * vv[1];
                let dpu = dp[0] * uu[0] + dp[1] * uu[1];
                let fv = f(x);
                s[0] += mu * i1;
                s[1] += lm * divu * dpv;
                s[2] += mu * i3;
                s[3] += lm * dpu * divv;
                let fu = if u.mask[q] == NodeKind::Fluid { fv[0] * vv[0] + fv[1] * vv[1] } else { 0.0 };
                s[4] += p * (fu - uu[k] / s2);
            }
            s
        })
        .collect();
    let mut tot = [0.0; 5];
    for r in &rows {
        for (a, b) in tot.iter_mut().zip(r) {
            *a += b * h * h;
        }
    }
    let scale = tot.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let res = tot[0] + tot[1] - tot[2] - tot[3] - tot[4];
    Ok(IdentityReport {
        integrals: tot,
        residual: if scale == 0.0 { 0.0 } else { res.abs() / scale },
    })
}

/// `L²` norm of local box averages of `a - b` over windows of side `window`
/// (only boxes inside `D`); requires `window ≥ 2ε`.
pub fn weak_limit_metric(a: &GridField, b: &GridField, window: f64, epsilon: f64) -> Result<f64> {
    a.check_same(b)?;
    if window < 2.0 * epsilon * (1.0 - 1e-12) {
        return Err(Error::OutOfRange(format!("window {window} < 2 epsilon = {}", 2.0 * epsilon)));
    }
    let n = a.n;
    let side = n + 1;
    let half = ((window / a.h) / 2.0).round().max(1.0) as usize;
    // summed-area tables per component
    let mut sat = vec![[0.0f64; 2]; (side + 1) * (side + 1)];
    for j in 0..side {
        for i in 0..side {
            let q = j * side + i;
            for c in 0..2 {
                let d = a.values[q][c] - b.values[q][c];
                sat[(j + 1) * (side + 1) + i + 1][c] = d + sat[j * (side + 1) + i + 1][c] + sat[(j + 1) * (side + 1) + i][c]
                    - sat[j * (side + 1) + i][c];
            }
        }
    }
    let cnt = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut total = 0.0;
    for j in half..side.saturating_sub(half) {
        for i in half..side.saturating_sub(half) {
            let (i0, i1, j0, j1) = (i - half, i + half + 1, j - half, j + half + 1);
            let mut s2 = 0.0;
            for c in 0..2 {
                let s = sat[j1 * (side + 1) + i1][c] - sat[j0 * (side + 1) + i1][c] - sat[j1 * (side + 1) + i0][c]
                    + sat[j0 * (side + 1) + i0][c];
                let m = s / cnt;
                s2 += m * m;
            }
            total += s2;
        }
    }
    Ok((a.h * a.h * total).sqrt())
}

/// `‖ũ‖ / (σ ‖∇ũ‖)`.
pub fn poincare_constant(u: &GridField, sigma_eps: f64) -> f64 {
    u.l2_norm() / (sigma_eps * u.h1_seminorm())
}

/// `‖ũ‖ / (σ² ‖f‖)`.
pub fn a_priori_ratio(u: &GridField, f: &GridField, sigma_eps: f64) -> f64 {
    u.l2_norm() / (sigma_eps * sigma_eps * f.l2_norm())
}

/// `f = sin(πx) sin(πy) e_1`, vanishing on `∂D`.
pub fn standard_forcing(x: [f64; 2]) -> [f64; 2] {
    [(std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin(), 0.0]
}
