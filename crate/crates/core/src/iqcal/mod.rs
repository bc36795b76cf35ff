//! IQ-plane corrections: cable delay, mixer ellipse, background, center
//! rotation and asymmetry rotation, plus phase and Möbius readouts.

pub mod chain;
pub mod circle;
pub mod ellipse;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{unwrap_phase, Poly};
use crate::resonance::ComplexSweep;

pub use chain::{fit_chain, CalibrationChain, CalibrationData, ChainConfig, ChainReport};
pub use circle::{
    center_rotation, center_rotation_to, fit_circle, gap_direction, phase_amplitude, CenterRotation, Circle, ARC_TOLERANCE,
};
pub use ellipse::{ellipse_to_circle, fit_ellipse, EllipseFit, EllipseParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IqCalError {
    #[error("frequency {0} Hz outside the delay profile")]
    FrequencyOutOfRange(f64),
    #[error("degenerate conic: {0}")]
    DegenerateConic(String),
    #[error("insufficient background: {0}")]
    InsufficientBackground(String),
    #[error("circle fit failed: {0}")]
    CircleFitFailed(String),
    #[error("Möbius transform pole at S21 = 1")]
    PoleAtUnity,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resonance fit failed: {0}")]
    Resonance(String),
}

/// IQ samples against an axis (frequency in Hz or time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqTrace {
    pub axis: Vec<f64>,
    pub points: Vec<Complex64>,
}

impl IqTrace {
    pub fn new(axis: Vec<f64>, points: Vec<Complex64>) -> Result<Self, IqCalError> {
        if axis.len() != points.len() {
            return Err(IqCalError::Domain("axis and points differ in length".into()));
        }
        if axis.iter().any(|v| !v.is_finite()) || points.iter().any(|p| !p.is_finite()) {
            return Err(IqCalError::Domain("non-finite trace value".into()));
        }
        if axis.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IqCalError::Domain("axis must be strictly increasing".into()));
        }
        Ok(Self { axis, points })
    }

    pub fn from_sweep(sweep: &ComplexSweep) -> Self {
        Self {
            axis: sweep.freqs().to_vec(),
            points: sweep.s21().to_vec(),
        }
    }

    pub fn to_sweep(&self) -> Result<ComplexSweep, IqCalError> {
        ComplexSweep::new(self.axis.clone(), self.points.clone())
            .map_err(|e| IqCalError::Domain(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> Self {
        Self {
            axis: self.axis.clone(),
            points: self.axis.iter().zip(&self.points).map(|(&x, &p)| f(x, p)).collect(),
        }
    }
}

/// Tabulated additive cable-delay profile, stored as parallel arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub freqs_hz: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl DelayProfile {
    pub fn new(freqs_hz: Vec<f64>, values: &[Complex64]) -> Result<Self, IqCalError> {
        if freqs_hz.len() != values.len() || freqs_hz.is_empty() {
            return Err(IqCalError::Domain("delay profile arrays differ in length".into()));
        }
        if freqs_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IqCalError::Domain("delay profile frequencies must increase".into()));
        }
        Ok(Self {
            freqs_hz,
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        })
    }

    /// Zero profile spanning `[lo, hi]`.
    pub fn zero(lo: f64, hi: f64) -> Self {
        Self {
            freqs_hz: vec![lo, hi],
            re: vec![0.0; 2],
            im: vec![0.0; 2],
        }
    }

    /// Linear interpolation; exact at the nodes.
    pub fn at(&self, f: f64) -> Result<Complex64, IqCalError> {
        let fs = &self.freqs_hz;
        let n = fs.len();
        if !(f >= fs[0] && f <= fs[n - 1]) {
            return Err(IqCalError::FrequencyOutOfRange(f));
        }
        let k = fs.partition_point(|&x| x <= f);
        if k == 0 {
            return Ok(Complex64::new(self.re[0], self.im[0]));
        }
        let i = k - 1;
        if i == n - 1 || fs[i] == f {
            return Ok(Complex64::new(self.re[i], self.im[i]));
        }
        let t = (f - fs[i]) / (fs[i + 1] - fs[i]);
        Ok(Complex64::new(
            self.re[i] + t * (self.re[i + 1] - self.re[i]),
            self.im[i] + t * (self.im[i + 1] - self.im[i]),
        ))
    }
}

/// Subtracts the interpolated delay profile point by point.
pub fn correct_cable_delay(trace: &IqTrace, profile: &DelayProfile) -> Result<IqTrace, IqCalError> {
    let points = trace
        .axis
        .iter()
        .zip(&trace.points)
        .map(|(&f, &p)| Ok(p - profile.at(f)?))
        .collect::<Result<_, IqCalError>>()?;
    Ok(IqTrace {
        axis: trace.axis.clone(),
        points,
    })
}

/// Amplitude `A(ω)` and phase `φ(ω)` polynomials in angular frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub amplitude: Poly,
    pub phase: Poly,
}

impl Background {
    pub fn identity() -> Self {
        Self {
            amplitude: Poly::constant(1.0),
            phase: Poly::constant(0.0),
        }
    }

    pub fn at(&self, omega: f64) -> Complex64 {
        Complex64::from_polar(self.amplitude.eval(omega), self.phase.eval(omega))
    }
}

pub const MIN_BACKGROUND_POINTS: usize = 10;

/// Fits `|S21|` and unwrapped `arg S21` outside `exclude` (Hz) with
/// polynomials of the given degree in `ω = 2πf`.
pub fn fit_background(
    scan: &ComplexSweep,
    exclude: (f64, f64),
    degree: usize,
) -> Result<Background, IqCalError> {
    let phase = unwrap_phase(&scan.s21().iter().map(|z| z.arg()).collect::<Vec<_>>());
    let mut omega = Vec::new();
    let mut amp = Vec::new();
    let mut ph = Vec::new();
    for (k, (&f, z)) in scan.freqs().iter().zip(scan.s21()).enumerate() {
        if f < exclude.0 || f > exclude.1 {
            omega.push(2.0 * std::f64::consts::PI * f);
            amp.push(z.norm());
            ph.push(phase[k]);
        }
    }
    let needed = MIN_BACKGROUND_POINTS.max(degree + 1);
    if omega.len() < needed {
        return Err(IqCalError::InsufficientBackground(format!(
            "{} points outside the excluded band, need {}",
            omega.len(),
            needed
        )));
    }
    let fail = || IqCalError::InsufficientBackground("singular polynomial fit".into());
    Ok(Background {
        amplitude: Poly::fit(&omega, &amp, None, degree).ok_or_else(fail)?,
        phase: Poly::fit(&omega, &ph, None, degree).ok_or_else(fail)?,
    })
}

/// `S21 · e^{-jφ(ω)} / A(ω)`.
pub fn apply_background(s21: Complex64, omega: f64, bg: &Background) -> Result<Complex64, IqCalError> {
    let a = bg.amplitude.eval(omega);
    if !(a > 0.0) {
        return Err(IqCalError::Domain(format!("background amplitude {a} at ω = {omega}")));
    }
    Ok(s21 * Complex64::from_polar(1.0 / a, -bg.phase.eval(omega)))
}

/// `1 - cos θ · e^{jθ} · (1 - S21)`.
pub fn asymmetry_rotation(s21: Complex64, theta: f64) -> Complex64 {
    1.0 - theta.cos() * Complex64::from_polar(1.0, theta) * (1.0 - s21)
}

/// Inverse of [`asymmetry_rotation`].
pub fn asymmetry_distort(s21: Complex64, theta: f64) -> Complex64 {
    1.0 - (1.0 - s21) * Complex64::from_polar(1.0 / theta.cos(), -theta)
}

/// `1 / (1 - S21)`.
pub fn mobius_readout(s21: Complex64) -> Result<Complex64, IqCalError> {
    let d = 1.0 - s21;
    if d.norm() < 1e-12 {
        return Err(IqCalError::PoleAtUnity);
    }
    Ok(1.0 / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resonance::{s21_ideal, s21_model, ResonanceParams};

    #[test]
    fn delay_profile_interpolation_and_range() {
        let p = DelayProfile::new(
            vec![1.0, 2.0, 4.0],
            &[Complex64::new(0.0, 0.0), Complex64::new(1.0, -1.0), Complex64::new(3.0, 1.0)],
        )
        .unwrap();
        assert_eq!(p.at(2.0).unwrap(), Complex64::new(1.0, -1.0));
        assert_eq!(p.at(3.0).unwrap(), Complex64::new(2.0, 0.0));
        assert_eq!(p.at(4.0).unwrap(), Complex64::new(3.0, 1.0));
        assert!(matches!(p.at(4.5), Err(IqCalError::FrequencyOutOfRange(_))));

        let trace = IqTrace::new(vec![1.0, 2.0, 4.0], vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, -1.0), Complex64::new(3.0, 1.0)]).unwrap();
        let out = correct_cable_delay(&trace, &p).unwrap();
        assert!(out.points.iter().all(|z| z.norm() == 0.0));
        let same = correct_cable_delay(&trace, &DelayProfile::zero(0.0, 10.0)).unwrap();
        assert_eq!(same, trace);
    }

    #[test]
    fn background_basics() {
        let freqs: Vec<f64> = (0..100).map(|k| 1e9 + k as f64 * 1e5).collect();
        let flat = ComplexSweep::new(freqs.clone(), vec![Complex64::new(1.0, 0.0); 100]).unwrap();
        let bg = fit_background(&flat, (1e9 + 4e6, 1e9 + 6e6), 2).unwrap();
        for &f in &freqs {
            let w = 2.0 * std::f64::consts::PI * f;
            assert!((bg.amplitude.eval(w) - 1.0).abs() < 1e-12);
            assert!(bg.phase.eval(w).abs() < 1e-12);
        }
        assert!(matches!(
            fit_background(&flat, (0.0, 2e9), 2),
            Err(IqCalError::InsufficientBackground(_))
        ));
        let w = 3.0;
        let z = bg.at(w);
        assert!((apply_background(z, w, &bg).unwrap() - 1.0).norm() < 1e-12);
    }

    #[test]
    fn asymmetry_cases() {
        let z = Complex64::new(0.3, 0.4);
        assert!((asymmetry_rotation(z, 0.0) - z).norm() < 1e-15);
        for th in [-1.2, -0.3, 0.5, 1.4] {
            assert!((asymmetry_rotation(Complex64::new(1.0, 0.0), th) - 1.0).norm() < 1e-15);
            assert!((asymmetry_distort(asymmetry_rotation(z, th), th) - z).norm() < 1e-12);
        }
        // the asymmetric resonance with φ0 = -θ becomes symmetric about the real axis
        let theta = 0.6;
        let p = ResonanceParams::new(5e9, 5e3, 1.2e4, -theta).unwrap();
        let on = asymmetry_rotation(s21_model(5e9, &p).unwrap(), theta);
        assert!(on.im.abs() < 1e-9);
        let above = asymmetry_rotation(s21_model(5e9 + 3e5, &p).unwrap(), theta);
        let below = asymmetry_rotation(s21_model(5e9 - 3e5, &p).unwrap(), theta);
        assert!((above - below.conj()).norm() < 1e-9);
    }

    #[test]
    fn mobius_cases() {
        assert_eq!(mobius_readout(Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(mobius_readout(Complex64::new(1.0, 0.0)), Err(IqCalError::PoleAtUnity));
        let (f0, q, qc) = (6e9, 2e4, 5e4);
        let on = mobius_readout(s21_ideal(f0, f0, q, qc).unwrap()).unwrap();
        assert!((on.re - qc / q).abs() < 1e-9 && on.im.abs() < 1e-9);
        for k in 0..50 {
            let f = f0 * (1.0 + (k as f64 - 25.0) * 1e-5);
            let m = mobius_readout(s21_ideal(f, f0, q, qc).unwrap()).unwrap();
            assert!((m.re - qc / q).abs() < 1e-9);
            assert!((m.im - 2.0 * qc * (f - f0) / f0).abs() < 1e-6);
        }
    }
}
