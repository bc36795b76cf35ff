//! Photon-number spectra: Poisson-weighted Gaussian comb, event simulation,
//! histogramming and the binned least-squares fit with σ held fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::lm::{self, LmConfig};
use crate::numeric::median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("histogram has no counts")]
    EmptyHistogram,
    #[error("spectrum fit did not converge")]
    NonConvergence { best: Box<SpectrumFit> },
    #[error("spectrum fit covariance is singular")]
    IllConditioned,
}

pub const MIN_AMPLITUDE: f64 = 1e-5;
pub const MIN_N_MAX: usize = 30;
/// Ceiling on μ during fitting; keeps the photon-number table bounded when a fit runs away.
pub const MAX_MU: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    pub mu: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub shift: f64,
    pub e_gamma: f64,
    pub n_max: usize,
}

/// Photon-number cutoff large enough that the truncated Poisson tail is negligible.
pub fn default_n_max(mu: f64) -> usize {
    ((mu + 10.0 * mu.sqrt() + 10.0).ceil() as usize).max(MIN_N_MAX)
}

impl SpectrumModel {
    pub fn new(mu: f64, sigma: f64, amplitude: f64, shift: f64, e_gamma: f64) -> Result<Self, SpectrumError> {
        let m = Self {
            mu,
            sigma,
            amplitude,
            shift,
            e_gamma,
            n_max: default_n_max(mu),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        let err = |m: String| Err(SpectrumError::Domain(m));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return err(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.amplitude > MIN_AMPLITUDE && self.amplitude.is_finite()) {
            return err(format!("amplitude must exceed {MIN_AMPLITUDE}, got {}", self.amplitude));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return err(format!("shift must lie in [0, 1], got {}", self.shift));
        }
        if !self.e_gamma.is_finite() {
            return err("e_gamma must be finite".into());
        }
        let need = (self.mu + 6.0 * self.mu.sqrt()).ceil() as usize;
        if self.n_max < need {
            return err(format!("n_max {} below ceil(mu + 6 sqrt(mu)) = {need}", self.n_max));
        }
        Ok(())
    }
}

/// Poisson masses `P(0..=n_max; μ)` by recurrence.
fn poisson_masses(mu: f64, n_max: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n_max + 1);
    // log-space start keeps large μ finite
    let mut v = (-mu).exp();
    if v == 0.0 {
        for n in 0..=n_max {
            let ln = n as f64 * mu.ln() - mu - statrs::function::gamma::ln_gamma(n as f64 + 1.0);
            p.push(ln.exp());
        }
        return p;
    }
    p.push(v);
    for n in 1..=n_max {
        v *= mu / n as f64;
        p.push(v);
    }
    p
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `A Σ_n P(n; μ) G(off; n E_γ + shift, σ)`.
pub fn model_density(off: f64, m: &SpectrumModel) -> f64 {
    let p = poisson_masses(m.mu, m.n_max);
    density_with(off, m, &p)
}

fn density_with(off: f64, m: &SpectrumModel, p: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .enumerate()
        .map(|(n, pn)| {
            let z = (off - n as f64 * m.e_gamma - m.shift) / m.sigma;
            pn * (-0.5 * z * z).exp()
        })
        .sum();
    m.amplitude * s * INV_SQRT_2PI / m.sigma
}

/// Upper tail `P(Z > z)`.
fn upper(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `P(a < Z < b)` computed on the side that avoids cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper(a) - upper(b)
    } else if b <= 0.0 {
        upper(-b) - upper(-a)
    } else {
        1.0 - upper(b) - upper(-a)
    }
}

/// Expected counts in `[lo, hi)` (difference of normal CDFs).
pub fn bin_integral(lo: f64, hi: f64, m: &SpectrumModel) -> f64 {
    let p = poisson_masses(m.mu, m.n_max);
    bin_integral_with(lo, hi, m, &p)
}

fn bin_integral_with(lo: f64, hi: f64, m: &SpectrumModel, p: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .enumerate()
        .map(|(n, pn)| {
            let c = n as f64 * m.e_gamma + m.shift;
            pn * normal_mass((lo - c) / m.sigma, (hi - c) / m.sigma)
        })
        .sum();
    m.amplitude * s
}

/// Draws `n ~ Poisson(μ)` then `OFF ~ N(n E_γ + shift, σ)` per event; `σ = 0` is allowed.
pub fn simulate_spectrum(m: &SpectrumModel, n_events: usize, seed: u64) -> Result<Vec<f64>, SpectrumError> {
    let pois = Poisson::new(m.mu).map_err(|e| SpectrumError::Domain(e.to_string()))?;
    let noise = Normal::new(0.0, m.sigma).map_err(|e| SpectrumError::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_events)
        .map(|_| {
            let n: f64 = pois.sample(&mut rng);
            n * m.e_gamma + m.shift + noise.sample(&mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// `max(1, √counts)`.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    FreedmanDiaconis,
    Width(f64),
    Count(usize),
}

impl Histogram {
    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self, SpectrumError> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(SpectrumError::Domain("need len(edges) = len(counts) + 1 >= 2".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectrumError::Domain("bin edges must increase".into()));
        }
        let errors = counts.iter().map(|&c| (c as f64).sqrt().max(1.0)).collect();
        Ok(Self { edges, counts, errors })
    }

    pub fn from_values(values: &[f64], binning: Binning) -> Result<Self, SpectrumError> {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(SpectrumError::EmptyHistogram);
        }
        let (lo, hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = hi - lo;
        let nbins = match binning {
            Binning::Count(n) => n.max(1),
            Binning::Width(w) => {
                if !(w > 0.0) {
                    return Err(SpectrumError::Domain(format!("bin width must be positive, got {w}")));
                }
                ((span / w).ceil() as usize).max(1)
            }
            Binning::FreedmanDiaconis => {
                let w = freedman_diaconis(&finite);
                if w > 0.0 {
                    ((span / w).ceil() as usize).max(1)
                } else {
                    1
                }
            }
        };
        let width = match binning {
            Binning::Width(w) => w,
            _ if span > 0.0 => span / nbins as f64,
            _ => 1.0,
        };
        let start = if span > 0.0 { lo } else { lo - 0.5 * width };
        let edges: Vec<f64> = (0..=nbins).map(|k| start + k as f64 * width).collect();
        let mut counts = vec![0u64; nbins];
        for v in &finite {
            let k = (((v - start) / width).floor() as isize).clamp(0, nbins as isize - 1) as usize;
            counts[k] += 1;
        }
        Self::from_counts(edges, counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Same bins with every error multiplied by `factor`.
    pub fn with_scaled_errors(&self, factor: f64) -> Self {
        Self {
            errors: self.errors.iter().map(|e| e * factor).collect(),
            ..self.clone()
        }
    }
}

/// `2·IQR / n^{1/3}`.
pub fn freedman_diaconis(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let i = x.floor() as usize;
        let j = (i + 1).min(v.len() - 1);
        v[i] + (x - i as f64) * (v[j] - v[i])
    };
    2.0 * (q(0.75) - q(0.25)) / (v.len() as f64).cbrt()
}

/// Local maxima whose topographic prominence exceeds `k·√counts` of the peak.
pub fn count_peaks(counts: &[u64], k: f64) -> usize {
    let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
    let n = c.len();
    let mut peaks = 0;
    let mut i = 0;
    while i < n {
        // plateau [i, j]
        let mut j = i;
        while j + 1 < n && c[j + 1] == c[i] {
            j += 1;
        }
        let left_ok = i == 0 || c[i - 1] < c[i];
        let right_ok = j + 1 == n || c[j + 1] < c[i];
        if left_ok && right_ok && c[i] > 0.0 {
            let h = c[i];
            let mut lmin = h;
            let mut l = i;
            while l > 0 && c[l - 1] <= h {
                l -= 1;
                lmin = lmin.min(c[l]);
            }
            let left_base = if l == 0 { lmin.min(c[0]) } else { lmin };
            let mut rmin = h;
            let mut r = j;
            while r + 1 < n && c[r + 1] <= h {
                r += 1;
                rmin = rmin.min(c[r]);
            }
            let base = left_base.max(rmin);
            if h - base > k * h.sqrt() {
                peaks += 1;
            }
        }
        i = j + 1;
    }
    peaks
}

/// Which parameters the fit may move; σ is always held.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    pub fix_mu: bool,
    pub fix_e_gamma: bool,
    pub fix_shift: bool,
    /// Lower bound on the photon-number cutoff.
    pub n_max: Option<usize>,
    pub lm: LmConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumErrors {
    pub mu: f64,
    pub amplitude: f64,
    pub shift: f64,
    pub e_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub model: SpectrumModel,
    pub errors: SpectrumErrors,
    pub chi2: f64,
    pub chi2_dof: f64,
    pub n_bins: usize,
    pub n_free: usize,
    pub iterations: usize,
}

/// Fixed `μ` and its one-sigma error.
pub fn photon_count_estimate(fit: &SpectrumFit) -> (f64, f64) {
    (fit.model.mu, fit.errors.mu)
}

const SHIFT_EPS: f64 = 1e-9;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(SHIFT_EPS, 1.0 - SHIFT_EPS);
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, PartialEq)]
enum Slot {
    LnMu,
    LnAmp,
    LogitShift,
    EGamma,
}

struct Problem<'a> {
    hist: &'a Histogram,
    base: SpectrumModel,
    free: Vec<Slot>,
    n_max_floor: usize,
}

impl Problem<'_> {
    fn model(&self, p: &[f64]) -> SpectrumModel {
        let mut m = self.base;
        for (slot, &v) in self.free.iter().zip(p) {
            match slot {
                Slot::LnMu => m.mu = v.exp().min(MAX_MU),
                Slot::LnAmp => m.amplitude = MIN_AMPLITUDE + v.exp(),
                Slot::LogitShift => m.shift = logistic(v),
                Slot::EGamma => m.e_gamma = v,
            }
        }
        m.n_max = self.n_max_floor.max(default_n_max(m.mu));
        m
    }

    fn pack(&self, m: &SpectrumModel) -> Vec<f64> {
        self.free
            .iter()
            .map(|slot| match slot {
                Slot::LnMu => m.mu.ln(),
                Slot::LnAmp => (m.amplitude - MIN_AMPLITUDE).max(1e-300).ln(),
                Slot::LogitShift => logit(m.shift),
                Slot::EGamma => m.e_gamma,
            })
            .collect()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let m = self.model(p);
        let pm = poisson_masses(m.mu, m.n_max);
        let h = self.hist;
        for i in 0..h.len() {
            let e = bin_integral_with(h.edges[i], h.edges[i + 1], &m, &pm);
            out[i] = (h.counts[i] as f64 - e) / h.errors[i];
        }
    }
}

/// Binned least-squares fit of the comb model.
pub fn fit_spectrum(hist: &Histogram, init: &SpectrumModel, constraints: &Constraints) -> Result<SpectrumFit, SpectrumError> {
    if hist.total() == 0 {
        return Err(SpectrumError::EmptyHistogram);
    }
    let mut start = *init;
    start.n_max = start.n_max.max(default_n_max(start.mu));
    start.validate()?;
    let mut free = Vec::new();
    if !constraints.fix_mu {
        free.push(Slot::LnMu);
    }
    free.push(Slot::LnAmp);
    if !constraints.fix_shift {
        free.push(Slot::LogitShift);
    }
    if !constraints.fix_e_gamma {
        free.push(Slot::EGamma);
    }
    let n_bins = hist.len();
    if n_bins <= free.len() {
        return Err(SpectrumError::Domain(format!(
            "{n_bins} bins cannot constrain {} parameters",
            free.len()
        )));
    }
    let prob = Problem {
        hist,
        base: start,
        free,
        n_max_floor: constraints.n_max.unwrap_or(0).max(init.n_max),
    };
    let p0 = prob.pack(&start);
    let out = lm::minimize(|p, r| prob.residuals(p, r), &p0, n_bins, &constraints.lm);
    let model = prob.model(&out.params);

    let cov = out.covariance();
    let mut errors = SpectrumErrors::default();
    if let Some(c) = &cov {
        for (k, slot) in prob.free.iter().enumerate() {
            let sd = c[(k, k)].max(0.0).sqrt();
            match slot {
                Slot::LnMu => errors.mu = model.mu * sd,
                Slot::LnAmp => errors.amplitude = (model.amplitude - MIN_AMPLITUDE) * sd,
                Slot::LogitShift => errors.shift = model.shift * (1.0 - model.shift) * sd,
                Slot::EGamma => errors.e_gamma = sd,
            }
        }
    }
    let n_free = prob.free.len();
    let fit = SpectrumFit {
        model,
        errors,
        chi2: out.cost,
        chi2_dof: out.cost / (n_bins - n_free) as f64,
        n_bins,
        n_free,
        iterations: out.iterations,
    };
    if !out.converged {
        return Err(SpectrumError::NonConvergence { best: Box::new(fit) });
    }
    if cov.is_none() {
        return Err(SpectrumError::IllConditioned);
    }
    Ok(fit)
}

/// Starting point from histogram moments scanned over a log grid of `E_γ`.
pub fn initial_guess(hist: &Histogram, sigma: f64) -> Result<SpectrumModel, SpectrumError> {
    let total = hist.total() as f64;
    if total == 0.0 {
        return Err(SpectrumError::EmptyHistogram);
    }
    if !(sigma > 0.0) {
        return Err(SpectrumError::Domain("sigma must be positive".into()));
    }
    let centers = hist.centers();
    let mean = centers.iter().zip(&hist.counts).map(|(c, &n)| c * n as f64).sum::<f64>() / total;
    let var = centers
        .iter()
        .zip(&hist.counts)
        .map(|(c, &n)| (c - mean).powi(2) * n as f64)
        .sum::<f64>()
        / total;
    let width = median(&hist.edges.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>());
    // bin-width smearing adds w²/12 to the observed variance
    let excess = (var - sigma * sigma - width * width / 12.0).max(1e-6 * var.max(1e-300));

    let span = hist.edges[hist.len()] - hist.edges[0];
    let e_lo = (width / 4.0).max(sigma / 50.0).max(1e-12);
    let e_hi = span.max(2.0 * e_lo);
    let steps = ((e_hi / e_lo).ln() / 0.005_f64.ln_1p()).ceil().clamp(2.0, 5000.0) as usize;
    let mut best: Option<(f64, SpectrumModel)> = None;
    for k in 0..=steps {
        let e = e_lo * (e_hi / e_lo).powf(k as f64 / steps as f64);
        let mu = excess / (e * e);
        let shift = mean - mu * e;
        if !(mu > 1e-6 && (0.0..=1.0).contains(&shift)) {
            continue;
        }
        let m = SpectrumModel {
            mu,
            sigma,
            amplitude: total,
            shift,
            e_gamma: e,
            n_max: default_n_max(mu),
        };
        let pm = poisson_masses(m.mu, m.n_max);
        let cost: f64 = (0..hist.len())
            .map(|i| {
                let x = bin_integral_with(hist.edges[i], hist.edges[i + 1], &m, &pm);
                ((hist.counts[i] as f64 - x) / hist.errors[i]).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, m));
        }
    }
    best.map(|b| b.1).ok_or_else(|| {
        SpectrumError::Domain("no admissible starting point (shift outside [0, 1])".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_model() -> SpectrumModel {
        SpectrumModel::new(12.4, 27.6e-3, 2000.0, 0.7, 0.016).unwrap()
    }

    #[test]
    fn tiny_mu_is_single_gaussian() {
        let m = SpectrumModel::new(1e-9, 0.05, 10.0, 0.3, 0.2).unwrap();
        let g = 10.0 * INV_SQRT_2PI / 0.05;
        assert!((model_density(0.3, &m) / g - 1.0).abs() < 1e-8);
    }

    #[test]
    fn density_integrates_to_poisson_mass() {
        let m = reference_model();
        let (lo, hi, n) = (0.2, 1.6, 200_000);
        let h = (hi - lo) / n as f64;
        let simpson: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * model_density(lo + k as f64 * h, &m)
            })
            .sum::<f64>()
            * h
            / 3.0;
        let mass: f64 = poisson_masses(m.mu, m.n_max).iter().sum();
        assert!((simpson / (m.amplitude * mass) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn comb_has_local_maxima() {
        let m = SpectrumModel::new(3.0, 0.01, 1.0, 0.1, 0.2).unwrap();
        for n in 1..6 {
            let c = 0.1 + 0.2 * n as f64;
            let d = model_density(c, &m);
            assert!(d > model_density(c - 0.02, &m) && d > model_density(c + 0.02, &m));
        }
    }

    #[test]
    fn simulation_is_deterministic_and_exact_at_zero_sigma() {
        let m = reference_model();
        assert_eq!(simulate_spectrum(&m, 100, 7).unwrap(), simulate_spectrum(&m, 100, 7).unwrap());
        let z = SpectrumModel { sigma: 0.0, ..m };
        for v in simulate_spectrum(&z, 500, 3).unwrap() {
            let n = (v - 0.7) / 0.016;
            assert!((n - n.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_histogram_rejected() {
        let h = Histogram::from_counts(vec![0.0, 1.0, 2.0], vec![0, 0]).unwrap();
        assert_eq!(fit_spectrum(&h, &reference_model(), &Constraints::default()), Err(SpectrumError::EmptyHistogram));
    }

    #[test]
    fn bin_integral_matches_quadrature() {
        let m = reference_model();
        let (lo, hi) = (0.83, 0.86);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let q: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * model_density(lo + k as f64 * h, &m)
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((bin_integral(lo, hi, &m) / q - 1.0).abs() < 1e-8);
    }

    #[test]
    fn peak_counting() {
        assert_eq!(count_peaks(&[0, 100, 0, 100, 0, 100, 0], 3.0), 3);
        assert_eq!(count_peaks(&[1, 10, 40, 90, 100, 98, 60, 20, 3], 3.0), 1);
        assert_eq!(count_peaks(&[50, 51, 50], 3.0), 0);
    }

    #[test]
    fn model_validation() {
        assert!(SpectrumModel::new(0.0, 0.1, 1.0, 0.5, 0.1).is_err());
        assert!(SpectrumModel::new(1.0, 0.1, 1e-6, 0.5, 0.1).is_err());
        assert!(SpectrumModel::new(1.0, 0.1, 1.0, 1.5, 0.1).is_err());
        let mut m = reference_model();
        m.n_max = 5;
        assert!(m.validate().is_err());
    }
}
