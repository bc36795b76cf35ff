//! Algebraic circle fit and the center rotation that puts the resonance gap
//! on a chosen direction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{IqCalError, IqTrace};
use crate::numeric::{solve_least_squares, unwrap_phase, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Complex64,
    pub radius: f64,
    /// RMS of `|p - center| - radius` over the fitted points.
    pub rms_residual: f64,
}

/// Kåsa fit: minimizes `Σ (|p - c|² - R²)²`, which is linear in
/// `(D, E, F)` for `x² + y² + Dx + Ey + F = 0`.
pub fn fit_circle(points: &[Complex64]) -> Result<Circle, IqCalError> {
    if points.len() < 3 {
        return Err(IqCalError::CircleFitFailed(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Complex64>() / n;
    let scale = (points.iter().map(|p| (p - mean).norm_sqr()).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(IqCalError::CircleFitFailed("points are coincident".into()));
    }
    let mut a = DMatrix::zeros(points.len(), 3);
    let mut b = DVector::zeros(points.len());
    for (k, p) in points.iter().enumerate() {
        let z = (p - mean) / scale;
        a[(k, 0)] = z.re;
        a[(k, 1)] = z.im;
        a[(k, 2)] = 1.0;
        b[k] = -z.norm_sqr();
    }
    let sol = solve_least_squares(&a, &b)
        .ok_or_else(|| IqCalError::CircleFitFailed("collinear points".into()))?;
    let c = Complex64::new(-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = c.norm_sqr() - sol[2];
    if !(r2 > 0.0) {
        return Err(IqCalError::CircleFitFailed("negative squared radius".into()));
    }
    let center = mean + c * scale;
    let radius = r2.sqrt() * scale;
    let rms = (points
        .iter()
        .map(|p| ((p - center).norm() - radius).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(Circle {
        center,
        radius,
        rms_residual: rms,
    })
}

/// Maximum accepted `rms_residual / radius` for an arc to count as circular.
pub const ARC_TOLERANCE: f64 = 0.1;

/// Direction (seen from `center`) of the midpoint of the arc not covered by
/// the trace. Points must be in sweep order: the swept angle is followed
/// from the first to the last point, so noise cannot open a spurious gap.
pub fn gap_direction(points: &[Complex64], center: Complex64) -> f64 {
    let raw: Vec<f64> = points.iter().map(|p| (p - center).arg()).collect();
    let swept = unwrap_phase(&raw);
    let (first, last) = (swept[0], swept[swept.len() - 1]);
    let total = last - first;
    let two_pi = 2.0 * std::f64::consts::PI;
    let missing = (two_pi - total.abs()).max(0.0);
    wrap_angle(last + total.signum() * missing / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterRotation {
    pub trace: IqTrace,
    /// Rotation applied about `circle.center`.
    pub angle: f64,
    pub circle: Circle,
}

/// Rotates the trace about its fitted center so the gap midpoint points
/// along `target` (0 is the +I axis).
pub fn center_rotation_to(trace: &IqTrace, target: f64) -> Result<CenterRotation, IqCalError> {
    let circle = fit_circle(&trace.points)?;
    if circle.rms_residual > ARC_TOLERANCE * circle.radius {
        return Err(IqCalError::CircleFitFailed(format!(
            "residual {:.3e} exceeds {} of radius {:.3e}",
            circle.rms_residual, ARC_TOLERANCE, circle.radius
        )));
    }
    let angle = wrap_angle(target - gap_direction(&trace.points, circle.center));
    let rot = Complex64::from_polar(1.0, angle);
    let points = trace
        .points
        .iter()
        .map(|p| circle.center + (p - circle.center) * rot)
        .collect();
    Ok(CenterRotation {
        trace: IqTrace {
            axis: trace.axis.clone(),
            points,
        },
        angle,
        circle,
    })
}

/// Center rotation onto the +I axis.
pub fn center_rotation(trace: &IqTrace) -> Result<(IqTrace, f64), IqCalError> {
    let r = center_rotation_to(trace, 0.0)?;
    Ok((r.trace, r.angle))
}

/// Unwrapped phase about the circle center and amplitude in units of the radius.
pub fn phase_amplitude(points: &[Complex64], circle: &Circle) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = points.iter().map(|p| (p - circle.center).arg()).collect();
    let amp = points
        .iter()
        .map(|p| (p - circle.center).norm() / circle.radius)
        .collect();
    (unwrap_phase(&raw), amp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn arc(center: Complex64, r: f64, gap_at: f64, gap_width: f64, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                let t = gap_at + gap_width / 2.0 + (2.0 * PI - gap_width) * k as f64 / (n - 1) as f64;
                center + Complex64::from_polar(r, t)
            })
            .collect()
    }

    #[test]
    fn fits_exact_circle() {
        let c = Complex64::new(0.3, -1.2);
        let pts = arc(c, 0.7, 1.0, 1.0, 50);
        let fit = fit_circle(&pts).unwrap();
        assert!((fit.center - c).norm() < 1e-12);
        assert!((fit.radius - 0.7).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Complex64> = (0..10).map(|k| Complex64::new(k as f64, 2.0 * k as f64)).collect();
        assert!(fit_circle(&pts).is_err());
    }

    #[test]
    fn gap_is_rotated_onto_target() {
        let c = Complex64::new(0.5, 0.2);
        let pts = arc(c, 0.3, PI / 2.0, 0.8, 200);
        let trace = IqTrace::new((0..200).map(|k| k as f64).collect(), pts).unwrap();
        let (out, angle) = center_rotation(&trace).unwrap();
        assert!((angle + PI / 2.0).abs() < 1e-9);
        let fit = fit_circle(&out.points).unwrap();
        assert!(gap_direction(&out.points, fit.center).abs() < 1e-6);

        let pts = arc(c, 0.3, 0.0, 0.8, 200);
        let trace = IqTrace::new((0..200).map(|k| k as f64).collect(), pts).unwrap();
        let (_, angle) = center_rotation(&trace).unwrap();
        assert!(angle.abs() < 1e-9);
    }

    #[test]
    fn phase_amplitude_basics() {
        let circle = Circle {
            center: Complex64::new(1.0, 1.0),
            radius: 2.0,
            rms_residual: 0.0,
        };
        let (ph, amp) = phase_amplitude(&[Complex64::new(3.0, 1.0), Complex64::new(1.0, 1.0)], &circle);
        assert_eq!(ph[0], 0.0);
        assert_eq!(amp[0], 1.0);
        assert_eq!(amp[1], 0.0);
    }
}
