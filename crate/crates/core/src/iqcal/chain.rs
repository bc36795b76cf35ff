//! Fitting and applying the full correction chain
//! (delay → ellipse → background → center rotation → asymmetry).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::circle::{center_rotation_to, fit_circle, gap_direction, Circle};
use super::ellipse::{ellipse_to_circle, fit_ellipse, EllipseParams};
use super::{
    apply_background, asymmetry_rotation, correct_cable_delay, fit_background, Background,
    DelayProfile, IqCalError, IqTrace,
};
use crate::resonance::{fit_resonance, FitConfig, ResonanceError, ResonanceFit};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationChain {
    pub delay: DelayProfile,
    pub ellipse: EllipseParams,
    pub background: Background,
    pub rotation_center: Complex64,
    pub center_rotation: f64,
    pub asymmetry_theta: f64,
    /// Circle traced by the corrected calibration resonance.
    pub circle: Option<Circle>,
}

impl CalibrationChain {
    pub fn identity(f_lo: f64, f_hi: f64) -> Self {
        Self {
            delay: DelayProfile::zero(f_lo, f_hi),
            ellipse: EllipseParams::UNIT_CIRCLE,
            background: Background::identity(),
            rotation_center: Complex64::new(0.0, 0.0),
            center_rotation: 0.0,
            asymmetry_theta: 0.0,
            circle: None,
        }
    }

    fn rotate(&self, z: Complex64) -> Complex64 {
        self.rotation_center + (z - self.rotation_center) * Complex64::from_polar(1.0, self.center_rotation)
    }

    /// Corrects one raw sample taken at frequency `f` (Hz).
    pub fn apply(&self, f: f64, raw: Complex64) -> Result<Complex64, IqCalError> {
        let z = raw - self.delay.at(f)?;
        let z = ellipse_to_circle(z, &self.ellipse);
        let z = apply_background(z, TWO_PI * f, &self.background)?;
        Ok(asymmetry_rotation(self.rotate(z), self.asymmetry_theta))
    }

    /// Corrects a frequency-axis trace.
    pub fn apply_trace(&self, trace: &IqTrace) -> Result<IqTrace, IqCalError> {
        let points = trace
            .axis
            .iter()
            .zip(&trace.points)
            .map(|(&f, &p)| self.apply(f, p))
            .collect::<Result<_, _>>()?;
        Ok(IqTrace {
            axis: trace.axis.clone(),
            points,
        })
    }

    /// Corrects samples all taken at the readout frequency `f` (pulse records).
    pub fn apply_at(&self, f: f64, raw: &[Complex64]) -> Result<Vec<Complex64>, IqCalError> {
        raw.iter().map(|&p| self.apply(f, p)).collect()
    }
}

/// Raw measurements needed to fit a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationData {
    /// Measured additive delay profile.
    pub delay: DelayProfile,
    /// Frequency at which the mixer ellipse was recorded.
    pub mixer_freq_hz: f64,
    /// Mixer response to a full-phase unit-amplitude tone.
    pub mixer_points: Vec<Complex64>,
    /// Wide frequency scan around the resonance.
    pub wide_scan: IqTrace,
    /// Narrow scan across the resonance.
    pub resonance: IqTrace,
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub background_degree: usize,
    /// Width of the band excluded from the background fit, in linewidths `f0/Q`.
    pub exclude_linewidths: f64,
    /// Asymmetry angle; defaults to `-φ0` of the resonance fit.
    pub theta: Option<f64>,
    pub resonance: FitConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            background_degree: 2,
            exclude_linewidths: 10.0,
            theta: None,
            resonance: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub ellipse_rms: f64,
    pub exclude_band_hz: (f64, f64),
    pub resonance: ResonanceFit,
    /// Circle fit of the fully corrected calibration resonance.
    pub circle: Circle,
    pub residual_fraction: f64,
    /// Gap midpoint direction seen from the corrected circle center.
    pub gap_direction: f64,
}

fn resonance_of(trace: &IqTrace, config: &FitConfig) -> Result<ResonanceFit, IqCalError> {
    let sweep = trace.to_sweep()?;
    match fit_resonance(&sweep, config) {
        Ok(fit) => Ok(fit),
        Err(ResonanceError::NonConvergence { best, .. }) => {
            log::warn!("resonance fit did not converge; using best iterate");
            Ok(*best)
        }
        Err(e) => Err(IqCalError::Resonance(e.to_string())),
    }
}

pub fn fit_chain(data: &CalibrationData, config: &ChainConfig) -> Result<(CalibrationChain, ChainReport), IqCalError> {
    let d_m = data.delay.at(data.mixer_freq_hz)?;
    let mixer: Vec<Complex64> = data.mixer_points.iter().map(|p| p - d_m).collect();
    let ellipse = fit_ellipse(&mixer)?;

    let to_ideal = |t: &IqTrace| -> Result<IqTrace, IqCalError> {
        Ok(correct_cable_delay(t, &data.delay)?.map(|_, p| ellipse_to_circle(p, &ellipse.params)))
    };
    let narrow = to_ideal(&data.resonance)?;
    let first = resonance_of(&narrow, &config.resonance)?;
    let half = 0.5 * config.exclude_linewidths * first.params.f0 / first.params.q_total;
    let band = (first.params.f0 - half, first.params.f0 + half);

    let wide = to_ideal(&data.wide_scan)?.to_sweep()?;
    let background = fit_background(&wide, band, config.background_degree)?;

    let normalized = narrow
        .axis
        .iter()
        .zip(&narrow.points)
        .map(|(&f, &p)| apply_background(p, TWO_PI * f, &background))
        .collect::<Result<Vec<_>, _>>()?;
    let normalized = IqTrace {
        axis: narrow.axis.clone(),
        points: normalized,
    };
    let refit = resonance_of(
        &normalized,
        &FitConfig {
            background_degree: 0,
            ..config.resonance.clone()
        },
    )?;
    let theta = config.theta.unwrap_or(-refit.params.phi0);
    if !(theta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(IqCalError::Domain(format!("asymmetry angle {theta} outside (-π/2, π/2)")));
    }

    let rotated = center_rotation_to(&normalized, -theta)?;
    let mut chain = CalibrationChain {
        delay: data.delay.clone(),
        ellipse: ellipse.params,
        background,
        rotation_center: rotated.circle.center,
        center_rotation: rotated.angle,
        asymmetry_theta: theta,
        circle: None,
    };
    let corrected = chain.apply_trace(&data.resonance)?;
    let circle = fit_circle(&corrected.points)?;
    chain.circle = Some(circle);
    let report = ChainReport {
        ellipse_rms: ellipse.rms_residual,
        exclude_band_hz: band,
        resonance: refit,
        circle,
        residual_fraction: circle.rms_residual / circle.radius,
        gap_direction: gap_direction(&corrected.points, circle.center),
    };
    Ok((chain, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_chain_is_identity() {
        let chain = CalibrationChain::identity(1e9, 2e9);
        for z in [Complex64::new(0.3, -0.2), Complex64::new(-1.0, 2.5)] {
            let out = chain.apply(1.5e9, z).unwrap();
            assert!((out - z).norm() < 1e-12);
        }
        assert!(chain.apply(3e9, Complex64::new(0.0, 0.0)).is_err());
    }
}
