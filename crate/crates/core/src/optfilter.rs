//! Frequency-domain optimum filter: noise power spectrum, average pulse,
//! transfer function and the filtered amplitude (OFF) estimator.
//!
//! DFT convention: `X_k = Σ_n x_n e^{-2πikn/N}`, no window, no padding. The
//! noise spectrum is the per-bin power `⟨|X_k|²⟩ / N`, stored one-sided
//! (bins `0..=N/2`, not folded), so summing all `N` two-sided bins gives
//! `N·σ²` for white noise of variance `σ²`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::median;
use crate::pulse::Record;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OfError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("record length {got} does not match filter length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least {needed} records, got {got}")]
    InsufficientRecords { needed: usize, got: usize },
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Forward DFT of a real sequence (full length).
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(x.len(), false).process(&mut buf);
    buf
}

/// Inverse DFT including the `1/N` factor.
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    plan(x.len(), true).process(&mut buf);
    let s = 1.0 / x.len() as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    buf
}

fn one_sided_len(n: usize) -> usize {
    n / 2 + 1
}

pub const MIN_NOISE_RECORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfModel {
    /// Peak-normalized average pulse.
    pub template: Vec<f64>,
    /// One-sided per-bin noise power.
    pub noise_psd: Vec<f64>,
    /// One-sided `conj(T_k)/J_k`, zero at DC.
    pub transfer: Vec<Complex64>,
    /// Scale that makes the estimator return 1 on the template.
    pub normalization: f64,
    /// Leading samples used for the baseline median.
    pub pretrigger: usize,
}

/// Per-sample mean of aligned records, baseline-subtracted with the median
/// of the first `pretrigger` samples and scaled to unit peak.
pub fn average_pulse(aligned: &[Record], pretrigger: usize) -> Result<Vec<f64>, OfError> {
    if aligned.len() < 2 {
        return Err(OfError::InsufficientRecords {
            needed: 2,
            got: aligned.len(),
        });
    }
    let n = aligned[0].len();
    if let Some(r) = aligned.iter().find(|r| r.len() != n) {
        return Err(OfError::LengthMismatch {
            expected: n,
            got: r.len(),
        });
    }
    if pretrigger == 0 || pretrigger >= n {
        return Err(OfError::Domain(format!("pretrigger must lie in 1..{n}")));
    }
    let mut avg = vec![0.0; n];
    for r in aligned {
        for (a, v) in avg.iter_mut().zip(&r.samples) {
            *a += v;
        }
    }
    let m = aligned.len() as f64;
    avg.iter_mut().for_each(|a| *a /= m);
    let base = median(&avg[..pretrigger]);
    avg.iter_mut().for_each(|a| *a -= base);
    let peak = avg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(OfError::Domain("average pulse has no positive peak".into()));
    }
    avg.iter_mut().for_each(|a| *a /= peak);
    Ok(avg)
}

/// Mean per-bin power of pulse-free records, one-sided.
pub fn noise_psd(noise: &[Record]) -> Result<Vec<f64>, OfError> {
    noise_psd_from(&noise.iter().map(|r| r.samples.as_slice()).collect::<Vec<_>>())
}

pub fn noise_psd_from(noise: &[&[f64]]) -> Result<Vec<f64>, OfError> {
    if noise.len() < MIN_NOISE_RECORDS {
        return Err(OfError::InsufficientRecords {
            needed: MIN_NOISE_RECORDS,
            got: noise.len(),
        });
    }
    let n = noise[0].len();
    if n < 2 {
        return Err(OfError::Domain("records too short".into()));
    }
    let mut psd = vec![0.0; one_sided_len(n)];
    for r in noise {
        if r.len() != n {
            return Err(OfError::LengthMismatch {
                expected: n,
                got: r.len(),
            });
        }
        let x = dft(r);
        for (p, v) in psd.iter_mut().zip(&x) {
            *p += v.norm_sqr();
        }
    }
    let s = 1.0 / (noise.len() as f64 * n as f64);
    psd.iter_mut().for_each(|p| *p *= s);
    Ok(psd)
}

/// `H_k = conj(T_k)/J_k` with the DC bin removed.
pub fn build_filter(template: &[f64], psd: &[f64], pretrigger: usize) -> Result<OfModel, OfError> {
    let n = template.len();
    if psd.len() != one_sided_len(n) {
        return Err(OfError::LengthMismatch {
            expected: one_sided_len(n),
            got: psd.len(),
        });
    }
    if psd[1..].iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(OfError::Domain("noise PSD must be positive".into()));
    }
    if pretrigger == 0 || pretrigger >= n {
        return Err(OfError::Domain(format!("pretrigger must lie in 1..{n}")));
    }
    let t = dft(template);
    let mut transfer = vec![Complex64::new(0.0, 0.0); psd.len()];
    for k in 1..psd.len() {
        transfer[k] = t[k].conj() / psd[k];
    }
    let full = expand(&transfer, n);
    let info: f64 = full.iter().zip(&t).map(|(h, t)| (h * t).re).sum();
    if !(info > 0.0 && info.is_finite()) {
        return Err(OfError::Domain("template carries no signal power".into()));
    }
    Ok(OfModel {
        template: template.to_vec(),
        noise_psd: psd.to_vec(),
        transfer,
        normalization: 1.0 / info,
        pretrigger,
    })
}

/// Rebuilds the full Hermitian transfer from the one-sided half.
fn expand(one: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| if k < one.len() { one[k] } else { one[n - k].conj() })
        .collect()
}

impl OfModel {
    pub fn len(&self) -> usize {
        self.template.len()
    }

    pub fn is_empty(&self) -> bool {
        self.template.is_empty()
    }

    fn spectrum_of(&self, samples: &[f64]) -> Result<Vec<Complex64>, OfError> {
        if samples.len() != self.len() {
            return Err(OfError::LengthMismatch {
                expected: self.len(),
                got: samples.len(),
            });
        }
        let base = median(&samples[..self.pretrigger]);
        let x: Vec<f64> = samples.iter().map(|v| v - base).collect();
        Ok(dft(&x))
    }

    /// Equivalent time-domain weights: `OFF = Σ_n w_n s_n`.
    pub fn time_kernel(&self) -> Vec<f64> {
        let full = expand(&self.transfer, self.len());
        let mut g = full;
        plan(self.len(), false).process(&mut g);
        g.iter().map(|v| v.re * self.normalization).collect()
    }
}

/// Optimum-filter amplitude of a record, in template units.
pub fn estimate_amplitude(samples: &[f64], model: &OfModel) -> Result<f64, OfError> {
    let s = model.spectrum_of(samples)?;
    let h = expand(&model.transfer, model.len());
    let sum: f64 = h.iter().zip(&s).map(|(h, s)| (h * s).re).sum();
    Ok(model.normalization * sum)
}

/// Same estimate evaluated as a time-domain dot product.
pub fn estimate_amplitude_time(samples: &[f64], kernel: &[f64]) -> f64 {
    kernel.iter().zip(samples).map(|(k, s)| k * s).sum()
}

/// Inverse DFT of `normalization·H_k·S_k`, scaled so lag 0 equals the OFF value.
pub fn filtered_trace(samples: &[f64], model: &OfModel) -> Result<Vec<f64>, OfError> {
    let s = model.spectrum_of(samples)?;
    let h = expand(&model.transfer, model.len());
    let prod: Vec<Complex64> = h.iter().zip(&s).map(|(h, s)| h * s * model.normalization).collect();
    let n = model.len() as f64;
    Ok(idft(&prod).iter().map(|v| v.re * n).collect())
}

/// RMS of the estimator over pulse-free records.
pub fn resolution(noise: &[&[f64]], model: &OfModel) -> Result<f64, OfError> {
    if noise.len() < MIN_NOISE_RECORDS {
        return Err(OfError::InsufficientRecords {
            needed: MIN_NOISE_RECORDS,
            got: noise.len(),
        });
    }
    let mut s2 = 0.0;
    for r in noise {
        let a = estimate_amplitude(r, model)?;
        s2 += a * a;
    }
    Ok((s2 / noise.len() as f64).sqrt())
}

/// Naive height estimator used as the comparison baseline.
pub fn peak_to_peak(samples: &[f64]) -> f64 {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template(n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 - 100.0;
                if t < 0.0 {
                    0.0
                } else {
                    (-t / 80.0).exp() - (-t / 8.0).exp()
                }
            })
            .collect();
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        raw.iter().map(|v| v / peak).collect()
    }

    #[test]
    fn dft_round_trip_6000() {
        let x: Vec<f64> = (0..6000).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let back = idft(&dft(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn template_normalization_and_linearity() {
        let t = template(512);
        let psd = vec![1.0; 257];
        let m = build_filter(&t, &psd, 50).unwrap();
        assert!((estimate_amplitude(&t, &m).unwrap() - 1.0).abs() < 1e-9);
        let scaled: Vec<f64> = t.iter().map(|v| 3.7 * v).collect();
        assert!((estimate_amplitude(&scaled, &m).unwrap() - 3.7).abs() < 1e-9);
        let k = m.time_kernel();
        assert!((estimate_amplitude_time(&scaled, &k) - 3.7).abs() < 1e-9);

        let doubled = build_filter(&t, &vec![2.0; 257], 50).unwrap();
        assert!((estimate_amplitude(&scaled, &doubled).unwrap() - 3.7).abs() < 1e-12);
        let zero = filtered_trace(&vec![0.0; 512], &m).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn white_filter_is_matched_filter() {
        let t = template(256);
        let m = build_filter(&t, &vec![0.5; 129], 50).unwrap();
        let tk = dft(&t);
        for k in 1..129 {
            let expect = tk[k].conj() / 0.5;
            assert!((m.transfer[k] - expect).norm() < 1e-9 * expect.norm().max(1.0));
        }
        assert_eq!(m.transfer[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn dc_and_sinusoid_psd() {
        let dc: Vec<Vec<f64>> = (0..8).map(|_| vec![2.0; 64]).collect();
        let refs: Vec<&[f64]> = dc.iter().map(|v| v.as_slice()).collect();
        let p = noise_psd_from(&refs).unwrap();
        assert!((p[0] - 4.0 * 64.0).abs() < 1e-9);
        assert!(p[1..].iter().all(|v| v.abs() < 1e-20));

        let sin: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..64).map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 64.0).sin()).collect())
            .collect();
        let refs: Vec<&[f64]> = sin.iter().map(|v| v.as_slice()).collect();
        let p = noise_psd_from(&refs).unwrap();
        let total: f64 = p.iter().sum();
        assert!(p[5] / total > 0.999);
        assert!(noise_psd_from(&refs[..3]).is_err());
    }

    #[test]
    fn record_length_checked() {
        let t = template(128);
        let m = build_filter(&t, &vec![1.0; 65], 20).unwrap();
        assert!(matches!(
            estimate_amplitude(&[0.0; 100], &m),
            Err(OfError::LengthMismatch { .. })
        ));
    }
}
