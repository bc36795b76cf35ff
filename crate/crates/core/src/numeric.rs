//! Small numerical helpers shared by the fitting modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Polynomial in the normalized variable `u = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub center: f64,
    pub scale: f64,
    /// Coefficients in increasing powers of `u`.
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        Self {
            center: 0.0,
            scale: 1.0,
            coeffs: vec![c],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    /// Coefficients in powers of the raw variable `x`.
    pub fn raw_coeffs(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        // expand Σ c_k ((x - c)/s)^k
        for (k, &ck) in self.coeffs.iter().enumerate() {
            let f = ck / self.scale.powi(k as i32);
            for j in 0..=k {
                out[j] += f * binomial(k, j) * (-self.center).powi((k - j) as i32);
            }
        }
        out
    }

    /// Weighted least-squares fit of the given degree; `None` if singular.
    pub fn fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>, degree: usize) -> Option<Self> {
        if xs.len() != ys.len() || xs.len() <= degree {
            return None;
        }
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let center = 0.5 * (lo + hi);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let m = xs.len();
        let n = degree + 1;
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for i in 0..m {
            let w = weights.map_or(1.0, |w| w[i]).sqrt();
            let u = (xs[i] - center) / scale;
            let mut p = 1.0;
            for j in 0..n {
                a[(i, j)] = w * p;
                p *= u;
            }
            b[i] = w * ys[i];
        }
        let coeffs = solve_least_squares(&a, &b)?;
        Some(Self {
            center,
            scale,
            coeffs: coeffs.iter().copied().collect(),
        })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Complex-coefficient polynomial in `u = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexPoly {
    pub center: f64,
    pub scale: f64,
    pub coeffs: Vec<Complex64>,
}

impl ComplexPoly {
    pub fn constant(c: Complex64) -> Self {
        Self {
            center: 0.0,
            scale: 1.0,
            coeffs: vec![c],
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        let u = (x - self.center) / self.scale;
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * u + c)
    }
}

/// Least-squares solution of `a x ≈ b` through SVD; `None` when rank deficient.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(svd.singular_values.min() > 1e-13 * smax) {
        return None;
    }
    svd.solve(b, 0.0).ok()
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation about the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Greedy phase unwrapping: removes ±2π jumps between successive samples.
pub fn unwrap_phase(phase: &[f64]) -> Vec<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p - phase[i - 1];
            if d > std::f64::consts::PI {
                offset -= two_pi * ((d + std::f64::consts::PI) / two_pi).floor();
            } else if d < -std::f64::consts::PI {
                offset += two_pi * ((-d + std::f64::consts::PI) / two_pi).floor();
            }
        }
        out.push(p + offset);
    }
    out
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_fit_recovers_quadratic_and_raw_coefficients() {
        let xs: Vec<f64> = (0..40).map(|i| 1e3 + i as f64 * 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3e-3 * x + 1e-6 * x * x).collect();
        let p = Poly::fit(&xs, &ys, None, 2).unwrap();
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!((p.eval(x) - y).abs() < 1e-12);
        }
        let raw = p.raw_coeffs();
        assert!((raw[0] - 2.0).abs() < 1e-8);
        assert!((raw[1] + 3e-3).abs() < 1e-12);
        assert!((raw[2] - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), 1.0);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let truth: Vec<f64> = (0..200).map(|i| i as f64 * 0.3).collect();
        let wrapped: Vec<f64> = truth.iter().map(|&p| wrap_angle(p)).collect();
        let un = unwrap_phase(&wrapped);
        for (a, b) in un.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
