//! Lamé parameters, hole curves, quadrature panelizations and perforation lattices.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lamé moduli with the derived Kelvin constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LameParams {
    pub lambda: f64,
    pub mu: f64,
    pub dim: usize,
}

impl LameParams {
    pub fn new(lambda: f64, mu: f64, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidParams(format!("dimension {dim} not in {{2,3}}")));
        }
        if !(mu > 0.0) || !(dim as f64 * lambda + 2.0 * mu > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need mu > 0 and d*lambda + 2 mu > 0 (lambda={lambda}, mu={mu})"
            )));
        }
        Ok(Self { lambda, mu, dim })
    }

    pub fn planar(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(lambda, mu, 2)
    }

    pub fn c1(&self) -> f64 {
        0.5 * (1.0 / self.mu + 1.0 / (self.lambda + 2.0 * self.mu))
    }

    pub fn c2(&self) -> f64 {
        0.5 * (1.0 / self.mu - 1.0 / (self.lambda + 2.0 * self.mu))
    }

    /// Area of the unit sphere in `R^dim`.
    pub fn omega(&self) -> f64 {
        if self.dim == 2 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }
}

/// Shape of the reference hole `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveKind {
    Circle { r: f64 },
    Ellipse { a: f64, b: f64 },
    /// Kite `s (0.25 cos t + 0.1625 cos 2t - 0.1625, 0.375 sin t)`.
    Kite { s: f64 },
}

impl CurveKind {
    pub const KITE_DEFAULT_SCALE: f64 = 0.6;
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CurveKind::Circle { r } => write!(f, "circle:{r}"),
            CurveKind::Ellipse { a, b } => write!(f, "ellipse:{a},{b}"),
            CurveKind::Kite { s } if s == Self::KITE_DEFAULT_SCALE => write!(f, "kite:default"),
            CurveKind::Kite { s } => write!(f, "kite:{s}"),
        }
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("hole spec `{s}` lacks `kind:params`")))?;
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number `{t}` in `{s}`")))
                })
                .collect()
        };
        match kind.trim() {
            "circle" => match nums()?.as_slice() {
                [r] => Ok(CurveKind::Circle { r: *r }),
                _ => Err(Error::Config(format!("circle expects one radius: `{s}`"))),
            },
            "ellipse" => match nums()?.as_slice() {
                [a, b] => Ok(CurveKind::Ellipse { a: *a, b: *b }),
                _ => Err(Error::Config(format!("ellipse expects two semi-axes: `{s}`"))),
            },
            "kite" if args.trim() == "default" => Ok(CurveKind::Kite {
                s: Self::KITE_DEFAULT_SCALE,
            }),
            "kite" => match nums()?.as_slice() {
                [sc] => Ok(CurveKind::Kite { s: *sc }),
                _ => Err(Error::Config(format!("kite expects `default` or a scale: `{s}`"))),
            },
            other => Err(Error::Config(format!("unknown hole kind `{other}`"))),
        }
    }
}

/// Closed analytic curve `∂T`, counter-clockwise, with origin inside `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    /// Extra dilation applied to the base shape.
    pub scale: f64,
    /// Radius of the largest ball about 0 inside `T`.
    pub r1: f64,
    /// Radius of the smallest ball about 0 containing `T`.
    pub r2: f64,
}

impl Curve {
    pub fn point(&self, t: f64) -> [f64; 2] {
        let (c, s) = (t.cos(), t.sin());
        let p = match self.kind {
            CurveKind::Circle { r } => [r * c, r * s],
            CurveKind::Ellipse { a, b } => [a * c, b * s],
            CurveKind::Kite { s: k } => [
                k * (0.25 * c + 0.1625 * (2.0 * t).cos() - 0.1625),
                k * 0.375 * s,
            ],
        };
        [self.scale * p[0], self.scale * p[1]]
    }

    pub fn deriv(&self, t: f64) -> [f64; 2] {
        let (c, s) = (t.cos(), t.sin());
        let p = match self.kind {
            CurveKind::Circle { r } => [-r * s, r * c],
            CurveKind::Ellipse { a, b } => [-a * s, b * c],
            CurveKind::Kite { s: k } => [
                k * (-0.25 * s - 0.325 * (2.0 * t).sin()),
                k * 0.375 * c,
            ],
        };
        [self.scale * p[0], self.scale * p[1]]
    }

    pub fn deriv2(&self, t: f64) -> [f64; 2] {
        let (c, s) = (t.cos(), t.sin());
        let p = match self.kind {
            CurveKind::Circle { r } => [-r * c, -r * s],
            CurveKind::Ellipse { a, b } => [-a * c, -b * s],
            CurveKind::Kite { s: k } => [
                k * (-0.25 * c - 0.65 * (2.0 * t).cos()),
                -k * 0.375 * s,
            ],
        };
        [self.scale * p[0], self.scale * p[1]]
    }

    pub fn speed(&self, t: f64) -> f64 {
        let d = self.deriv(t);
        d[0].hypot(d[1])
    }

    /// Outward unit normal (the curve runs counter-clockwise).
    pub fn normal(&self, t: f64) -> [f64; 2] {
        let d = self.deriv(t);
        let s = d[0].hypot(d[1]);
        [d[1] / s, -d[0] / s]
    }

    /// Area of `T` by the spectrally accurate trapezoid rule.
    pub fn area(&self) -> f64 {
        let n = 2048;
        let h = 2.0 * PI / n as f64;
        (0..n)
            .map(|i| {
                let t = i as f64 * h;
                let p = self.point(t);
                let d = self.deriv(t);
                0.5 * (p[0] * d[1] - p[1] * d[0])
            })
            .sum::<f64>()
            * h
    }

    pub fn length(&self) -> f64 {
        let n = 2048;
        let h = 2.0 * PI / n as f64;
        (0..n).map(|i| self.speed(i as f64 * h)).sum::<f64>() * h
    }

    /// Dilated copy `rT`.
    pub fn scaled(&self, r: f64) -> Curve {
        Curve {
            kind: self.kind,
            scale: self.scale * r,
            r1: self.r1 * r,
            r2: self.r2 * r,
        }
    }

    /// Closed-set membership test `x ∈ T̄`.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        let rr = x[0].hypot(x[1]);
        if rr > self.r2 {
            return false;
        }
        if rr <= self.r1 {
            return true;
        }
        match self.kind {
            CurveKind::Circle { r } => rr <= r * self.scale,
            CurveKind::Ellipse { a, b } => {
                let (a, b) = (a * self.scale, b * self.scale);
                (x[0] / a).powi(2) + (x[1] / b).powi(2) <= 1.0
            }
            CurveKind::Kite { .. } => winding_number(&self.polygon(1024), x) != 0,
        }
    }

    pub fn polygon(&self, m: usize) -> Vec<[f64; 2]> {
        (0..m)
            .map(|i| self.point(2.0 * PI * i as f64 / m as f64))
            .collect()
    }
}

fn winding_number(poly: &[[f64; 2]], p: [f64; 2]) -> i32 {
    let mut wn = 0;
    let m = poly.len();
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % m];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                wn += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Golden-section refinement of an extremum of `|x(θ)|` bracketed around `t0`.
fn refine_radius(curve: &Curve, t0: f64, h: f64, maximize: bool) -> f64 {
    let f = |t: f64| {
        let p = curve.point(t);
        let r = p[0].hypot(p[1]);
        if maximize {
            -r
        } else {
            r
        }
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (t0 - h, t0 + h);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    f(0.5 * (a + b)).abs()
}

/// Builds and validates a hole curve.
pub fn make_curve(kind: CurveKind) -> Result<Curve> {
    let ok = match kind {
        CurveKind::Circle { r } => r > 0.0 && r.is_finite(),
        CurveKind::Ellipse { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
        CurveKind::Kite { s } => s > 0.0 && s.is_finite(),
    };
    if !ok {
        return Err(Error::InvalidCurve(format!("non-positive shape parameters in {kind}")));
    }
    let mut curve = Curve {
        kind,
        scale: 1.0,
        r1: 0.0,
        r2: f64::INFINITY,
    };
    let m = 720;
    let poly = curve.polygon(m);
    for i in 0..m {
        for j in (i + 2)..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % m], poly[j], poly[(j + 1) % m]) {
                return Err(Error::InvalidCurve(format!("{kind} self-intersects")));
            }
        }
    }
    if winding_number(&poly, [0.0, 0.0]) != 1 {
        return Err(Error::InvalidCurve(format!("{kind} does not enclose the origin")));
    }
    let samples = 4096;
    let h = 2.0 * PI / samples as f64;
    let radii: Vec<f64> = (0..samples)
        .map(|i| {
            let p = curve.point(i as f64 * h);
            p[0].hypot(p[1])
        })
        .collect();
    let (imax, _) = radii
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
    let (imin, _) = radii
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |acc, (i, &r)| if r < acc.1 { (i, r) } else { acc });
    let r2 = refine_radius(&curve, imax as f64 * h, h, true).max(radii[imax]);
    let r1 = refine_radius(&curve, imin as f64 * h, h, false).min(radii[imin]);
    if r2 >= 0.5 {
        return Err(Error::HoleTooLarge(r2));
    }
    curve.r1 = r1;
    curve.r2 = r2;
    Ok(curve)
}

/// Equispaced trapezoid discretization of a curve.
#[derive(Debug, Clone)]
pub struct Panelization {
    pub curve: Curve,
    pub n: usize,
    pub theta: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    pub tangents: Vec<[f64; 2]>,
    pub speed: Vec<f64>,
    /// `⟨N, x''⟩ / |x'|²`, the signed curvature (negative on convex curves).
    pub curvature: Vec<f64>,
    /// Trapezoid weight in θ, `2π/n`.
    pub h: f64,
}

impl Panelization {
    /// Arc-length quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.h * self.speed[i]
    }

    pub fn length(&self) -> f64 {
        (0..self.n).map(|i| self.weight(i)).sum()
    }

    /// `∫_{∂T} f ds` for node values `f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().enumerate().map(|(i, v)| v * self.weight(i)).sum()
    }
}

pub fn panelize(curve: &Curve, n: usize) -> Result<Panelization> {
    if !n.is_multiple_of(2) || n < 32 {
        return Err(Error::BadNodeCount(n));
    }
    let h = 2.0 * PI / n as f64;
    let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let points = theta.iter().map(|&t| curve.point(t)).collect();
    let normals = theta.iter().map(|&t| curve.normal(t)).collect();
    let speed: Vec<f64> = theta.iter().map(|&t| curve.speed(t)).collect();
    let tangents = theta
        .iter()
        .zip(&speed)
        .map(|(&t, &s)| {
            let d = curve.deriv(t);
            [d[0] / s, d[1] / s]
        })
        .collect();
    let curvature = theta
        .iter()
        .zip(&speed)
        .map(|(&t, &s)| {
            let nn = curve.normal(t);
            let dd = curve.deriv2(t);
            (nn[0] * dd[0] + nn[1] * dd[1]) / (s * s)
        })
        .collect();
    Ok(Panelization {
        curve: *curve,
        n,
        theta,
        points,
        normals,
        tangents,
        speed,
        curvature,
        h,
    })
}

/// Periodic array of holes `ε(z + ηT̄)` retained inside `D = (0,1)²`.
#[derive(Debug, Clone)]
pub struct PerforationSpec {
    pub epsilon: f64,
    pub eta: f64,
    pub curve: Curve,
    pub centers: Vec<[f64; 2]>,
}

impl PerforationSpec {
    /// Physical size of a hole relative to `T`: `εη`.
    pub fn hole_scale(&self) -> f64 {
        self.epsilon * self.eta
    }

    /// Whether `x` lies in the closure of a retained hole.
    pub fn in_hole(&self, x: [f64; 2]) -> bool {
        let e = self.epsilon;
        let zi = (x[0] / e).round();
        let zj = (x[1] / e).round();
        let c = [zi * e, zj * e];
        let s = self.hole_scale();
        let q = [(x[0] - c[0]) / s, (x[1] - c[1]) / s];
        if q[0].hypot(q[1]) > self.curve.r2 {
            return false;
        }
        if !self.retained(c) {
            return false;
        }
        self.curve.contains(q)
    }

    fn retained(&self, c: [f64; 2]) -> bool {
        let rad = self.hole_scale() * self.curve.r2;
        c.iter().all(|&ci| ci - rad > 0.0 && ci + rad < 1.0)
    }
}

pub fn build_perforation(epsilon: f64, eta: f64, curve: &Curve) -> Result<PerforationSpec> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRange(format!("epsilon = {epsilon} not in (0,1)")));
    }
    if !(eta > 0.0) {
        return Err(Error::OutOfRange(format!("eta = {eta} must be positive")));
    }
    if eta * curve.r2 >= 0.5 {
        return Err(Error::HoleExitsCell(eta * curve.r2));
    }
    let mut spec = PerforationSpec {
        epsilon,
        eta,
        curve: *curve,
        centers: Vec::new(),
    };
    let zmax = (1.0 / epsilon).ceil() as i64;
    for i in 0..=zmax {
        for j in 0..=zmax {
            let c = [i as f64 * epsilon, j as f64 * epsilon];
            if spec.retained(c) {
                spec.centers.push(c);
            }
        }
    }
    Ok(spec)
}
