//! Exponential-integral helpers used by the Ewald split.

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Entire part of the exponential integral: `Ein(x) = E1(x) + γ + ln x`.
pub fn ein(x: f64) -> f64 {
    if x <= 2.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = -term / k;
            sum += add;
            if add.abs() <= 1e-17 * sum.abs().max(1e-300) || k > 200.0 {
                break;
            }
            k += 1.0;
        }
        sum
    } else {
        e1(x) + EULER_GAMMA + x.ln()
    }
}

/// Exponential integral `E1(x)` for `x > 0`.
pub fn e1(x: f64) -> f64 {
    assert!(x > 0.0, "e1 requires x > 0");
    if x <= 1.0 {
        return -EULER_GAMMA - x.ln() + ein(x);
    }
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

/// `(1 - e^{-a}) / a`, smooth through `a = 0`.
pub fn one_minus_exp_over(a: f64) -> f64 {
    if a.abs() < 1e-3 {
        1.0 - a / 2.0 + a * a / 6.0 - a * a * a / 24.0 + a.powi(4) / 120.0
    } else {
        -(-a).exp_m1() / a
    }
}

/// Derivative of [`one_minus_exp_over`].
pub fn one_minus_exp_over_deriv(a: f64) -> f64 {
    if a.abs() < 0.1 {
        // sum_{k>=1} k (-1)^k a^{k-1} / (k+1)!
        let mut sum = 0.0;
        let mut fact = 1.0;
        let mut pow = 1.0;
        for k in 1..20 {
            fact *= (k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * k as f64 * pow / fact;
            pow *= a;
        }
        sum
    } else {
        ((-a).exp() * (1.0 + a) - 1.0) / (a * a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e1_reference_values() {
        // Abramowitz & Stegun table 5.1
        assert!((e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
        assert!((e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((e1(2.0) - 0.048_900_510_708_061_1).abs() < 1e-14);
        assert!((e1(5.0) - 0.001_148_295_591_275_3).abs() < 1e-16);
    }

    #[test]
    fn ein_continuous_across_branch() {
        let a = ein(2.0 - 1e-12);
        let b = ein(2.0 + 1e-12);
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn derivative_matches_difference() {
        for &a in &[1e-4, 0.05, 0.3, 2.0, 7.0] {
            let h = 1e-6;
            let fd = (one_minus_exp_over(a + h) - one_minus_exp_over(a - h)) / (2.0 * h);
            assert!((fd - one_minus_exp_over_deriv(a)).abs() < 1e-8, "a={a}");
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod gauss_tests {
    use super::gauss_legendre;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
