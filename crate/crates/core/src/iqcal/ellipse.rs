//! Mixer imbalance: ellipse-constrained conic fit and the affine map back to
//! the unit circle.
//!
//! A mixer with offsets `(i0, q0)`, gains `(a_i, a_q)` and quadrature skew `γ`
//! maps an ideal point `u + jv` to
//! `I = i0 + a_i·u`, `Q = q0 + a_q·(u cos γ + v sin γ)`.
//! The ideal mixer has `γ = π/2` and unit gains, so the unit circle is the
//! identity calibration. The parametric form `(i0 + a_i cos θ, q0 + a_q cos(θ + γ))`
//! corresponds to `u + jv = e^{-jθ}`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::IqCalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub i0: f64,
    pub q0: f64,
    pub a_i: f64,
    pub a_q: f64,
    pub gamma: f64,
}

impl EllipseParams {
    pub const UNIT_CIRCLE: Self = Self {
        i0: 0.0,
        q0: 0.0,
        a_i: 1.0,
        a_q: 1.0,
        gamma: std::f64::consts::FRAC_PI_2,
    };

    pub fn validate(&self) -> Result<(), IqCalError> {
        let ok = [self.i0, self.q0, self.a_i, self.a_q, self.gamma]
            .iter()
            .all(|v| v.is_finite())
            && self.a_i > 0.0
            && self.a_q > 0.0
            && self.gamma > 0.0
            && self.gamma < std::f64::consts::PI;
        if ok {
            Ok(())
        } else {
            Err(IqCalError::Domain(format!("invalid ellipse {self:?}")))
        }
    }

    /// Point at parameter `θ`: `(i0 + a_i cos θ, q0 + a_q cos(θ + γ))`.
    pub fn parametric(&self, theta: f64) -> Complex64 {
        Complex64::new(
            self.i0 + self.a_i * theta.cos(),
            self.q0 + self.a_q * (theta + self.gamma).cos(),
        )
    }

    /// Forward mixer distortion of an ideal point.
    pub fn distort(&self, z: Complex64) -> Complex64 {
        let (s, c) = self.gamma.sin_cos();
        Complex64::new(self.i0 + self.a_i * z.re, self.q0 + self.a_q * (z.re * c + z.im * s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    pub params: EllipseParams,
    /// RMS of `|ellipse_to_circle(p)| - 1` over the input points.
    pub rms_residual: f64,
}

/// Inverse mixer map; points on the ellipse land on the unit circle.
pub fn ellipse_to_circle(point: Complex64, e: &EllipseParams) -> Complex64 {
    let (s, c) = e.gamma.sin_cos();
    let u = (point.re - e.i0) / e.a_i;
    let w = (point.im - e.q0) / e.a_q;
    Complex64::new(u, (w - u * c) / s)
}

/// Direct least-squares ellipse fit (Fitzgibbon constraint `4ac - b² = 1`,
/// solved in the numerically stable partitioned form).
pub fn fit_ellipse(points: &[Complex64]) -> Result<EllipseFit, IqCalError> {
    if points.len() < 6 {
        return Err(IqCalError::DegenerateConic(format!(
            "need at least 6 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(IqCalError::Domain("non-finite point".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;
    let scale = (points.iter().map(|p| (p - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) {
        return Err(IqCalError::DegenerateConic("coincident points".into()));
    }

    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let z = (p - mean) / scale;
        let (x, y) = (z.re, z.im);
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| IqCalError::DegenerateConic("collinear points".into()))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint matrix
    let mc = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in mc.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * lambda.norm().max(1e-300) {
            continue;
        }
        let Some(v) = null_vector(&(mc - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.as_ref().is_none_or(|b| cond > b.0) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| IqCalError::DegenerateConic("no elliptical solution".into()))?;
    let a2 = t * a1;
    let (a, b, c, d, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);

    // center in normalized coordinates
    let det = 4.0 * a * c - b * b;
    let xc = (b * e - 2.0 * c * d) / det;
    let yc = (b * d - 2.0 * a * e) / det;
    let f_center = f + 0.5 * (d * xc + e * yc);
    if !(f_center != 0.0 && (-f_center / a) > 0.0) {
        return Err(IqCalError::DegenerateConic("imaginary ellipse".into()));
    }
    // a'x² + b'xy + c'y² = 1 about the center, back in raw units
    let k = -f_center * scale * scale;
    let (ap, bp, cp) = (a / k, b / k, c / k);
    let cos_g = -bp / (2.0 * (ap * cp).sqrt());
    let sin2_g = 1.0 - bp * bp / (4.0 * ap * cp);
    if !(sin2_g > 0.0) {
        return Err(IqCalError::DegenerateConic("flat ellipse".into()));
    }
    let params = EllipseParams {
        i0: mean.re + xc * scale,
        q0: mean.im + yc * scale,
        a_i: 1.0 / (ap * sin2_g).sqrt(),
        a_q: 1.0 / (cp * sin2_g).sqrt(),
        gamma: cos_g.clamp(-1.0, 1.0).acos(),
    };
    if !(params.a_i.is_finite() && params.a_q.is_finite()) {
        return Err(IqCalError::DegenerateConic("non-finite axes".into()));
    }
    let rms = (points
        .iter()
        .map(|p| (ellipse_to_circle(*p, &params).norm() - 1.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(EllipseFit {
        params,
        rms_residual: rms,
    })
}

/// Null vector of a rank-2 3×3 matrix via the largest cross product of rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r: Vec<Vector3<f64>> = (0..3).map(|i| m.row(i).transpose()).collect();
    let candidates = [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])];
    let v = candidates
        .into_iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let norm = v.norm();
    (norm > 0.0 && norm.is_finite()).then(|| v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn thetas(n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |k| 2.0 * PI * k as f64 / n as f64)
    }

    #[test]
    fn unit_circle_is_recovered() {
        let pts: Vec<Complex64> = thetas(40).map(|t| Complex64::from_polar(1.0, t)).collect();
        let fit = fit_ellipse(&pts).unwrap().params;
        assert!(fit.i0.abs() < 1e-12 && fit.q0.abs() < 1e-12);
        assert!((fit.a_i - 1.0).abs() < 1e-12 && (fit.a_q - 1.0).abs() < 1e-12);
        assert!((fit.gamma - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn parametric_ellipse_round_trip() {
        let truth = EllipseParams {
            i0: 0.1,
            q0: -0.05,
            a_i: 2.0,
            a_q: 1.5,
            gamma: 1.3,
        };
        let pts: Vec<Complex64> = thetas(64).map(|t| truth.parametric(t)).collect();
        let fit = fit_ellipse(&pts).unwrap();
        let p = fit.params;
        assert!((p.i0 - truth.i0).abs() < 1e-6);
        assert!((p.q0 - truth.q0).abs() < 1e-6);
        assert!((p.a_i - truth.a_i).abs() < 1e-6);
        assert!((p.a_q - truth.a_q).abs() < 1e-6);
        assert!((p.gamma - truth.gamma).abs() < 1e-6);
        assert!(fit.rms_residual < 1e-9);
        for t in thetas(17) {
            let z = ellipse_to_circle(truth.parametric(t), &truth);
            assert!((z - Complex64::from_polar(1.0, -t)).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<Complex64> = (0..6).map(|k| Complex64::new(k as f64, 0.5 * k as f64 + 1.0)).collect();
        assert!(matches!(fit_ellipse(&pts), Err(IqCalError::DegenerateConic(_))));
    }

    #[test]
    fn unit_map_is_identity_and_center_goes_to_origin() {
        let z = Complex64::new(0.3, -0.8);
        assert!((ellipse_to_circle(z, &EllipseParams::UNIT_CIRCLE) - z).norm() < 1e-15);
        let e = EllipseParams {
            i0: 1.0,
            q0: 2.0,
            a_i: 0.5,
            a_q: 3.0,
            gamma: 0.7,
        };
        assert_eq!(ellipse_to_circle(Complex64::new(1.0, 2.0), &e), Complex64::new(0.0, 0.0));
        assert!((ellipse_to_circle(e.distort(z), &e) - z).norm() < 1e-14);
    }
}
