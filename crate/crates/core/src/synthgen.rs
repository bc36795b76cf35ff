//! Seeded synthetic inputs with known truth for every analysis stage.
//!
//! All randomness comes from ChaCha8 seeded with `seed_from_u64(config.seed)`.
//! Each generator uses its own stream (`set_stream`), and per-record streams
//! are offset by the record index, so any subset of records can be
//! regenerated independently with identical results.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gapfit::{inv_qi_model_kondo, GapError, QiSeries};
use crate::iqcal::{asymmetry_distort, CalibrationData, DelayProfile, EllipseParams, IqTrace};
use crate::numeric::{ComplexPoly, Poly};
use crate::optfilter::{dft, idft};
use crate::pulse::Record;
use crate::resonance::{s21_ideal, synthesize, ComplexSweep, ResonanceError, ResonanceParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error(transparent)]
    Gap(#[from] GapError),
}

const STREAM_SWEEP: u64 = 1;
const STREAM_QI: u64 = 2;
const STREAM_CAL: u64 = 3;
const STREAM_SIGNAL: u64 = 1 << 32;
const STREAM_NOISE: u64 = 2 << 32;

/// Generator for one named stream of a scenario.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResonanceTruth {
    pub f0_hz: f64,
    pub q: f64,
    pub qc: f64,
    pub phi0: f64,
    /// Constant complex background `[re, im]`.
    pub background: [f64; 2],
    pub n_points: usize,
    /// Sweep span in linewidths `f0/Q`.
    pub span_linewidths: f64,
    /// Per-quadrature noise as a fraction of `|background|`.
    pub noise_fraction: f64,
}

impl Default for ResonanceTruth {
    fn default() -> Self {
        Self {
            f0_hz: 5380.6e6,
            q: 4050.0,
            qc: 10600.0,
            phi0: 1.004,
            background: [1.0, 0.0],
            n_points: 1001,
            span_linewidths: 20.0,
            noise_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapTruth {
    pub delta_ev: f64,
    pub alpha: f64,
    pub inv_qi0: f64,
    pub kondo_b: f64,
    pub kondo_tk: f64,
    pub f0_hz: f64,
    pub t_start_k: f64,
    pub t_step_k: f64,
    pub n_temperatures: usize,
    /// Relative one-sigma error of each 1/Qi value.
    pub noise_fraction: f64,
}

impl Default for GapTruth {
    fn default() -> Self {
        Self {
            delta_ev: 0.150e-3,
            alpha: 0.1,
            inv_qi0: 1.0 / 6440.0,
            kondo_b: 5e-6,
            kondo_tk: 1.0,
            f0_hz: 5380.6e6,
            t_start_k: 0.040,
            t_step_k: 0.010,
            n_temperatures: 27,
            noise_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationTruth {
    pub f0_hz: f64,
    pub q: f64,
    pub qc: f64,
    /// Asymmetry applied to the ideal resonance.
    pub theta: f64,
    /// Global phase rotation about the origin.
    pub rotation: f64,
    /// Mixer ellipse; drawn at random from the calibration stream when absent.
    pub ellipse: Option<EllipseParams>,
    /// `A(u)` and `φ(u)` coefficients, `u = (ω - ω0) / (2π · wide half-span)`.
    pub amplitude_coeffs: Vec<f64>,
    pub phase_coeffs: Vec<f64>,
    /// Additive leakage `d0 · e^{-j2πfτ}`.
    pub delay_amplitude: f64,
    pub delay_tau_s: f64,
    pub delay_points: usize,
    pub snr_db: f64,
    pub mixer_points: usize,
    pub wide_span_linewidths: f64,
    pub wide_points: usize,
    pub narrow_span_linewidths: f64,
    pub narrow_points: usize,
}

impl Default for CalibrationTruth {
    fn default() -> Self {
        Self {
            f0_hz: 5380.6e6,
            q: 4050.0,
            qc: 10600.0,
            theta: 0.5,
            rotation: 0.8,
            ellipse: None,
            amplitude_coeffs: vec![1.2, 0.15, -0.08],
            phase_coeffs: vec![0.3, 2.0, 0.5],
            delay_amplitude: 0.05,
            delay_tau_s: 10e-9,
            delay_points: 8001,
            snr_db: 40.0,
            mixer_points: 4096,
            wide_span_linewidths: 400.0,
            wide_points: 4001,
            narrow_span_linewidths: 20.0,
            narrow_points: 801,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseTruth {
    pub tau_rise_s: f64,
    pub tau_fall_s: f64,
    /// Pulse height per absorbed photon (template units).
    pub amplitude_per_photon: f64,
    /// Height added to every signal pulse; appears as the spectrum shift.
    pub pedestal: f64,
    pub onset_index: usize,
    /// Onsets are uniform in `onset_index ± jitter`.
    pub jitter: usize,
}

impl Default for PulseTruth {
    fn default() -> Self {
        Self {
            tau_rise_s: 0.2e-6,
            tau_fall_s: 4e-6,
            amplitude_per_photon: 0.1,
            pedestal: 0.7,
            onset_index: 1000,
            jitter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseTruth {
    pub white_sigma: f64,
    /// Amplitude shaping `sqrt(1 + knee/f)`; `None` for white noise.
    pub knee_hz: Option<f64>,
}

impl Default for NoiseTruth {
    fn default() -> Self {
        Self {
            white_sigma: 0.05,
            knee_hz: Some(DEFAULT_KNEE_HZ),
        }
    }
}

/// Knee that sets the optimum-filter resolution of the default pulse to 27.6e-3.
pub const DEFAULT_KNEE_HZ: f64 = 2.87e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Acquisition {
    pub sample_rate_hz: f64,
    pub record_length: usize,
    pub n_records: usize,
    pub n_noise_records: usize,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            sample_rate_hz: 5e7,
            record_length: 6000,
            n_records: 1000,
            n_noise_records: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotonTruth {
    pub mu: f64,
}

impl Default for PhotonTruth {
    fn default() -> Self {
        Self { mu: 12.4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub resonance: ResonanceTruth,
    pub gap: GapTruth,
    pub calibration: CalibrationTruth,
    pub pulse: PulseTruth,
    pub noise: NoiseTruth,
    pub acquisition: Acquisition,
    pub photons: PhotonTruth,
}

fn positive(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), SynthError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(SynthError::Config(format!("{name} must be non-negative, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let r = &self.resonance;
        positive("resonance.f0_hz", r.f0_hz)?;
        positive("resonance.q", r.q)?;
        positive("resonance.qc", r.qc)?;
        positive("resonance.span_linewidths", r.span_linewidths)?;
        non_negative("resonance.noise_fraction", r.noise_fraction)?;
        if r.q >= r.qc {
            return Err(SynthError::Config("resonance.q must be below resonance.qc".into()));
        }
        if r.n_points < ComplexSweep::MIN_POINTS {
            return Err(SynthError::Config("resonance.n_points too small".into()));
        }
        let g = &self.gap;
        positive("gap.delta_ev", g.delta_ev)?;
        positive("gap.alpha", g.alpha)?;
        positive("gap.inv_qi0", g.inv_qi0)?;
        positive("gap.kondo_tk", g.kondo_tk)?;
        positive("gap.f0_hz", g.f0_hz)?;
        positive("gap.t_start_k", g.t_start_k)?;
        positive("gap.t_step_k", g.t_step_k)?;
        non_negative("gap.noise_fraction", g.noise_fraction)?;
        if g.alpha > 1.0 {
            return Err(SynthError::Config("gap.alpha must not exceed 1".into()));
        }
        if g.n_temperatures < QiSeries::MIN_POINTS {
            return Err(SynthError::Config("gap.n_temperatures must be at least 5".into()));
        }
        let c = &self.calibration;
        positive("calibration.f0_hz", c.f0_hz)?;
        positive("calibration.q", c.q)?;
        positive("calibration.qc", c.qc)?;
        if c.q >= c.qc * c.theta.cos() {
            return Err(SynthError::Config("calibration.q must be below qc·cos(theta)".into()));
        }
        if !(c.theta.abs() < PI / 2.0) {
            return Err(SynthError::Config("calibration.theta must lie in (-π/2, π/2)".into()));
        }
        if let Some(e) = &c.ellipse {
            e.validate().map_err(|e| SynthError::Config(e.to_string()))?;
        }
        if c.amplitude_coeffs.is_empty() || c.amplitude_coeffs[0] <= 0.0 || c.phase_coeffs.is_empty() {
            return Err(SynthError::Config("calibration background coefficients missing".into()));
        }
        non_negative("calibration.delay_amplitude", c.delay_amplitude)?;
        if c.mixer_points < 6 || c.wide_points < 20 || c.narrow_points < 20 || c.delay_points < 2 {
            return Err(SynthError::Config("calibration point counts too small".into()));
        }
        if c.wide_span_linewidths <= c.narrow_span_linewidths {
            return Err(SynthError::Config("wide scan must be wider than the narrow scan".into()));
        }
        let p = &self.pulse;
        positive("pulse.tau_rise_s", p.tau_rise_s)?;
        positive("pulse.tau_fall_s", p.tau_fall_s)?;
        if p.tau_rise_s >= p.tau_fall_s {
            return Err(SynthError::Config("pulse.tau_rise_s must be below tau_fall_s".into()));
        }
        non_negative("pulse.amplitude_per_photon", p.amplitude_per_photon)?;
        non_negative("pulse.pedestal", p.pedestal)?;
        let a = &self.acquisition;
        positive("acquisition.sample_rate_hz", a.sample_rate_hz)?;
        if a.record_length < 64 {
            return Err(SynthError::Config("acquisition.record_length too small".into()));
        }
        if p.onset_index < p.jitter || p.onset_index + p.jitter >= a.record_length {
            return Err(SynthError::Config("pulse onset window outside the record".into()));
        }
        non_negative("noise.white_sigma", self.noise.white_sigma)?;
        if let Some(k) = self.noise.knee_hz {
            non_negative("noise.knee_hz", k)?;
        }
        non_negative("photons.mu", self.photons.mu)?;
        Ok(())
    }
}

fn complex_noise(rng: &mut ChaCha8Rng, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * sigma
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Resonance truth as model parameters.
pub fn resonance_params(truth: &ResonanceTruth) -> Result<ResonanceParams, SynthError> {
    Ok(ResonanceParams::new(truth.f0_hz, truth.q, truth.qc, truth.phi0)?.with_background(
        ComplexPoly::constant(Complex64::new(truth.background[0], truth.background[1])),
    ))
}

/// Non-ideal resonance sweep with complex Gaussian noise.
pub fn gen_sweep(config: &ScenarioConfig) -> Result<ComplexSweep, SynthError> {
    config.validate()?;
    let t = &config.resonance;
    let params = resonance_params(t)?;
    let half = 0.5 * t.span_linewidths * t.f0_hz / t.q;
    let freqs = linspace(t.f0_hz - half, t.f0_hz + half, t.n_points);
    let mut s21 = synthesize(&freqs, &params)?;
    let sigma = t.noise_fraction * Complex64::new(t.background[0], t.background[1]).norm();
    if sigma > 0.0 {
        let mut rng = stream_rng(config.seed, STREAM_SWEEP);
        for z in s21.iter_mut() {
            *z += complex_noise(&mut rng, sigma);
        }
    }
    Ok(ComplexSweep::new(freqs, s21)?)
}

/// Temperatures of the generated series.
pub fn qi_temperatures(g: &GapTruth) -> Vec<f64> {
    (0..g.n_temperatures)
        .map(|k| g.t_start_k + k as f64 * g.t_step_k)
        .collect()
}

/// 1/Qi(T) with the logarithmic term and relative Gaussian errors.
pub fn gen_qi_series(config: &ScenarioConfig) -> Result<QiSeries, SynthError> {
    config.validate()?;
    let g = &config.gap;
    let omega = 2.0 * PI * g.f0_hz;
    let mut rng = stream_rng(config.seed, STREAM_QI);
    let temps = qi_temperatures(g);
    let mut inv_qi = Vec::with_capacity(temps.len());
    let mut errs = Vec::with_capacity(temps.len());
    for &t in &temps {
        let m = inv_qi_model_kondo(t, g.delta_ev, g.inv_qi0, g.alpha, omega, g.kondo_b, g.kondo_tk)?;
        let e = g.noise_fraction * m;
        let z: f64 = rng.sample(StandardNormal);
        inv_qi.push(m + e * z);
        errs.push(if e > 0.0 { e } else { 1e-6 * m });
    }
    Ok(QiSeries::new(temps, inv_qi, errs, g.f0_hz, "synthetic")?)
}

/// Double-exponential pulse with peak value `amp`, zero before `onset`.
pub fn gen_pulse(t: &[f64], onset: f64, amp: f64, tau_rise: f64, tau_fall: f64) -> Result<Vec<f64>, SynthError> {
    positive("tau_rise", tau_rise)?;
    if tau_rise >= tau_fall {
        return Err(SynthError::Config("tau_rise must be below tau_fall".into()));
    }
    let t_peak = tau_rise * tau_fall / (tau_fall - tau_rise) * (tau_fall / tau_rise).ln();
    let peak = (-t_peak / tau_fall).exp() - (-t_peak / tau_rise).exp();
    Ok(t.iter()
        .map(|&ti| {
            let dt = ti - onset;
            if dt < 0.0 {
                0.0
            } else {
                amp * ((-dt / tau_fall).exp() - (-dt / tau_rise).exp()) / peak
            }
        })
        .collect())
}

/// Unit-peak pulse starting exactly at sample `onset`.
pub fn pulse_shape(config: &ScenarioConfig, onset: usize) -> Result<Vec<f64>, SynthError> {
    let a = &config.acquisition;
    let t: Vec<f64> = (0..a.record_length).map(|k| k as f64 / a.sample_rate_hz).collect();
    gen_pulse(
        &t,
        onset as f64 / a.sample_rate_hz,
        1.0,
        config.pulse.tau_rise_s,
        config.pulse.tau_fall_s,
    )
}

/// Amplitude shaping of the noise spectrum at each DFT bin.
fn noise_shape(n: usize, sample_rate: f64, knee: Option<f64>) -> Vec<f64> {
    (0..n)
        .map(|k| match knee {
            Some(fk) if k > 0 => {
                let f = k.min(n - k) as f64 * sample_rate / n as f64;
                (1.0 + fk / f).sqrt()
            }
            _ => 1.0,
        })
        .collect()
}

/// One noise realization: white Gaussian, optionally shaped to `1 + knee/f` power.
pub fn gen_noise(rng: &mut ChaCha8Rng, n: usize, sample_rate: f64, noise: &NoiseTruth) -> Vec<f64> {
    let white: Vec<f64> = (0..n)
        .map(|_| noise.white_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    match noise.knee_hz {
        Some(k) if k > 0.0 => {
            let shape = noise_shape(n, sample_rate, Some(k));
            let shaped: Vec<Complex64> = dft(&white).iter().zip(&shape).map(|(x, s)| x * s).collect();
            idft(&shaped).iter().map(|z| z.re).collect()
        }
        _ => white,
    }
}

/// Expected per-bin noise power (one-sided) of [`gen_noise`].
pub fn expected_noise_psd(n: usize, sample_rate: f64, noise: &NoiseTruth) -> Vec<f64> {
    let shape = noise_shape(n, sample_rate, noise.knee_hz.filter(|k| *k > 0.0));
    (0..=n / 2)
        .map(|k| noise.white_sigma.powi(2) * shape[k] * shape[k])
        .collect()
}

/// Optimum-filter resolution implied by the configured pulse and noise.
pub fn analytic_resolution(config: &ScenarioConfig) -> Result<f64, SynthError> {
    let a = &config.acquisition;
    let template = pulse_shape(config, config.pulse.onset_index)?;
    let n = a.record_length;
    let psd = expected_noise_psd(n, a.sample_rate_hz, &config.noise);
    let t = dft(&template);
    let info: f64 = (1..n).map(|k| t[k].norm_sqr() / psd[k.min(n - k)]).sum();
    Ok((n as f64 / info).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub signal: Vec<Record>,
    pub noise: Vec<Record>,
    pub onsets: Vec<usize>,
    pub photons: Vec<u64>,
    pub amplitudes: Vec<f64>,
}

/// Signal record `index` of the scenario.
pub fn gen_signal_record(config: &ScenarioConfig, index: usize) -> Result<(Record, usize, u64, f64), SynthError> {
    let a = &config.acquisition;
    let p = &config.pulse;
    let mut rng = stream_rng(config.seed, STREAM_SIGNAL + index as u64);
    let n_ph: u64 = if config.photons.mu > 0.0 {
        let d = Poisson::new(config.photons.mu).map_err(|e| SynthError::Config(e.to_string()))?;
        d.sample(&mut rng) as u64
    } else {
        0
    };
    let jitter = p.jitter as i64;
    let onset = (p.onset_index as i64 + rng.random_range(-jitter..=jitter)) as usize;
    let amp = p.pedestal + n_ph as f64 * p.amplitude_per_photon;
    let noise = gen_noise(&mut rng, a.record_length, a.sample_rate_hz, &config.noise);
    let samples = if amp > 0.0 {
        let shape = pulse_shape(config, onset)?;
        shape.iter().zip(&noise).map(|(s, w)| amp * s + w).collect()
    } else {
        noise
    };
    Ok((Record::new(samples, a.sample_rate_hz), onset, n_ph, amp))
}

/// Pulse-free record `index` of the scenario.
pub fn gen_noise_record(config: &ScenarioConfig, index: usize) -> Record {
    let a = &config.acquisition;
    let mut rng = stream_rng(config.seed, STREAM_NOISE + index as u64);
    Record::new(
        gen_noise(&mut rng, a.record_length, a.sample_rate_hz, &config.noise),
        a.sample_rate_hz,
    )
}

pub fn gen_records(config: &ScenarioConfig) -> Result<RecordSet, SynthError> {
    config.validate()?;
    let a = &config.acquisition;
    let mut set = RecordSet {
        signal: Vec::with_capacity(a.n_records),
        noise: Vec::with_capacity(a.n_noise_records),
        onsets: Vec::with_capacity(a.n_records),
        photons: Vec::with_capacity(a.n_records),
        amplitudes: Vec::with_capacity(a.n_records),
    };
    for i in 0..a.n_records {
        let (r, onset, n, amp) = gen_signal_record(config, i)?;
        set.signal.push(r);
        set.onsets.push(onset);
        set.photons.push(n);
        set.amplitudes.push(amp);
    }
    for i in 0..a.n_noise_records {
        set.noise.push(gen_noise_record(config, i));
    }
    Ok(set)
}

/// Forward model of the IQ distortions, the inverse of the correction chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub theta: f64,
    pub rotation: f64,
    pub background: crate::iqcal::Background,
    pub ellipse: EllipseParams,
    pub delay_amplitude: f64,
    pub delay_tau_s: f64,
}

impl Distortion {
    pub fn delay(&self, f: f64) -> Complex64 {
        Complex64::from_polar(self.delay_amplitude, -2.0 * PI * f * self.delay_tau_s)
    }

    /// Raw mixer output for an ideal (calibrated) value at frequency `f`.
    pub fn apply(&self, f: f64, ideal: Complex64) -> Complex64 {
        let z = asymmetry_distort(ideal, self.theta) * Complex64::from_polar(1.0, self.rotation);
        let z = z * self.background.at(2.0 * PI * f);
        self.ellipse.distort(z) + self.delay(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortedIq {
    pub data: CalibrationData,
    pub truth: Distortion,
    /// Ideal resonance on the narrow grid.
    pub ideal: IqTrace,
    /// Distorted narrow trace without noise.
    pub clean: IqTrace,
}

fn random_ellipse(rng: &mut ChaCha8Rng) -> EllipseParams {
    EllipseParams {
        i0: rng.random_range(-0.2..0.2),
        q0: rng.random_range(-0.2..0.2),
        a_i: rng.random_range(0.6..1.6),
        a_q: rng.random_range(0.6..1.6),
        gamma: PI / 2.0 + rng.random_range(-0.4..0.4),
    }
}

/// Calibration dataset obtained by pushing ideal data through the distortions.
pub fn gen_distorted_iq(config: &ScenarioConfig) -> Result<DistortedIq, SynthError> {
    config.validate()?;
    let c = &config.calibration;
    let mut rng = stream_rng(config.seed, STREAM_CAL);
    let ellipse = match c.ellipse {
        Some(e) => e,
        None => random_ellipse(&mut rng),
    };
    let lw = c.f0_hz / c.q;
    let wide_half = 0.5 * c.wide_span_linewidths * lw;
    let omega_center = 2.0 * PI * c.f0_hz;
    let omega_scale = 2.0 * PI * wide_half;
    let truth = Distortion {
        theta: c.theta,
        rotation: c.rotation,
        background: crate::iqcal::Background {
            amplitude: Poly {
                center: omega_center,
                scale: omega_scale,
                coeffs: c.amplitude_coeffs.clone(),
            },
            phase: Poly {
                center: omega_center,
                scale: omega_scale,
                coeffs: c.phase_coeffs.clone(),
            },
        },
        ellipse,
        delay_amplitude: c.delay_amplitude,
        delay_tau_s: c.delay_tau_s,
    };

    let a0 = c.amplitude_coeffs[0];
    let scale = a0 * ((ellipse.a_i.powi(2) + ellipse.a_q.powi(2)) / 2.0).sqrt();
    let sigma = if c.snr_db.is_finite() {
        scale * 10f64.powf(-c.snr_db / 20.0) / 2f64.sqrt()
    } else {
        0.0
    };
    let noisy = |z: Complex64, rng: &mut ChaCha8Rng| {
        if sigma > 0.0 {
            z + complex_noise(rng, sigma)
        } else {
            z
        }
    };

    let ideal_at = |f: f64| s21_ideal(f, c.f0_hz, c.q, c.qc);

    let delay_freqs = linspace(c.f0_hz - wide_half, c.f0_hz + wide_half, c.delay_points);
    // the reference profile is taken as noiseless; its noise would be subtracted from every sample
    let delay_vals: Vec<Complex64> = delay_freqs.iter().map(|&f| truth.delay(f)).collect();
    let delay = DelayProfile::new(delay_freqs, &delay_vals).map_err(|e| SynthError::Config(e.to_string()))?;

    let mixer_freq = c.f0_hz;
    let mixer_points: Vec<Complex64> = (0..c.mixer_points)
        .map(|k| {
            let phase = 2.0 * PI * k as f64 / c.mixer_points as f64;
            let z = ellipse.distort(Complex64::from_polar(1.0, phase)) + truth.delay(mixer_freq);
            noisy(z, &mut rng)
        })
        .collect();

    let wide_freqs = linspace(c.f0_hz - wide_half, c.f0_hz + wide_half, c.wide_points);
    let mut wide_pts = Vec::with_capacity(wide_freqs.len());
    for &f in &wide_freqs {
        wide_pts.push(noisy(truth.apply(f, ideal_at(f)?), &mut rng));
    }

    let narrow_half = 0.5 * c.narrow_span_linewidths * lw;
    let narrow_freqs = linspace(c.f0_hz - narrow_half, c.f0_hz + narrow_half, c.narrow_points);
    let ideal_pts = narrow_freqs.iter().map(|&f| ideal_at(f)).collect::<Result<Vec<_>, _>>()?;
    let clean_pts: Vec<Complex64> = narrow_freqs.iter().zip(&ideal_pts).map(|(&f, &z)| truth.apply(f, z)).collect();
    let narrow_pts: Vec<Complex64> = clean_pts.iter().map(|&z| noisy(z, &mut rng)).collect();

    let trace = |axis: &[f64], pts: Vec<Complex64>| IqTrace {
        axis: axis.to_vec(),
        points: pts,
    };
    Ok(DistortedIq {
        data: CalibrationData {
            delay,
            mixer_freq_hz: mixer_freq,
            mixer_points,
            wide_scan: trace(&wide_freqs, wide_pts),
            resonance: trace(&narrow_freqs, narrow_pts),
        },
        truth,
        ideal: trace(&narrow_freqs, ideal_pts),
        clean: trace(&narrow_freqs, clean_pts),
    })
}

/// Gaussian draw helper for callers that need extra samples on a named stream.
pub fn normal_samples(seed: u64, stream: u64, n: usize, sigma: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let d = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_shape_properties() {
        let t: Vec<f64> = (0..4000).map(|k| k as f64 * 1e-8).collect();
        let p = gen_pulse(&t, 1e-6, 2.5, 0.2e-6, 4e-6).unwrap();
        assert!(p[..100].iter().all(|v| *v == 0.0));
        let peak = p.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 2.5).abs() < 1e-3);
        let far = gen_pulse(&[1.0], 0.0, 1.0, 0.2e-6, 4e-6).unwrap();
        assert!(far[0].abs() < 1e-30);
        assert!(gen_pulse(&t, 0.0, 1.0, 4e-6, 4e-6).is_err());
    }

    #[test]
    fn analytic_peak_is_exact() {
        let (tr, tf) = (0.2e-6f64, 4e-6f64);
        let tp = tr * tf / (tf - tr) * (tf / tr).ln();
        let p = gen_pulse(&[tp], 0.0, 1.7, tr, tf).unwrap();
        assert!((p[0] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn default_noise_gives_target_resolution() {
        let r = analytic_resolution(&ScenarioConfig::default()).unwrap();
        assert!((r / 27.6e-3 - 1.0).abs() < 0.01, "resolution {r}");
    }

    #[test]
    fn zero_noise_sweep_is_model() {
        let mut cfg = ScenarioConfig::default();
        cfg.resonance.noise_fraction = 0.0;
        let s = gen_sweep(&cfg).unwrap();
        let p = resonance_params(&cfg.resonance).unwrap();
        for (&f, &z) in s.freqs().iter().zip(s.s21()) {
            assert!((z - crate::resonance::s21_model(f, &p).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_distortion_is_ideal() {
        let mut cfg = ScenarioConfig::default();
        let c = &mut cfg.calibration;
        c.theta = 0.0;
        c.rotation = 0.0;
        c.ellipse = Some(EllipseParams::UNIT_CIRCLE);
        c.amplitude_coeffs = vec![1.0];
        c.phase_coeffs = vec![0.0];
        c.delay_amplitude = 0.0;
        c.snr_db = f64::INFINITY;
        let d = gen_distorted_iq(&cfg).unwrap();
        for (a, b) in d.data.resonance.points.iter().zip(&d.ideal.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_mu_and_zero_pedestal_gives_noise_only() {
        let mut cfg = ScenarioConfig::default();
        cfg.photons.mu = 0.0;
        cfg.pulse.pedestal = 0.0;
        cfg.acquisition.n_records = 3;
        cfg.acquisition.n_noise_records = 0;
        let set = gen_records(&cfg).unwrap();
        assert!(set.amplitudes.iter().all(|a| *a == 0.0));
        assert!(set.photons.iter().all(|n| *n == 0));
    }

    #[test]
    fn zero_jitter_gives_identical_onsets() {
        let mut cfg = ScenarioConfig::default();
        cfg.pulse.jitter = 0;
        cfg.acquisition.n_records = 5;
        cfg.acquisition.n_noise_records = 0;
        let set = gen_records(&cfg).unwrap();
        assert!(set.onsets.iter().all(|&o| o == 1000));
    }
}
