//! Complex S21 resonance models and the nonlinear fit that extracts the
//! resonant frequency and quality factors from a frequency sweep.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iqcal::circle::fit_circle;
use crate::lm::{self, LmConfig};
use crate::numeric::{median, wrap_angle, ComplexPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("no resonance dip found in sweep")]
    NoDipFound,
    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Box<ResonanceFit>,
    },
    #[error("Jacobian is rank deficient at the optimum")]
    IllConditioned,
    #[error("domain error: {0}")]
    Domain(String),
}

/// Optional acquisition metadata carried with a sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub temperature_k: Option<f64>,
    pub power_dbm: Option<f64>,
    pub resonator_id: Option<String>,
}

/// Frequency-indexed complex transmission samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSweep {
    freqs: Vec<f64>,
    s21: Vec<Complex64>,
    pub meta: Option<SweepMeta>,
}

impl ComplexSweep {
    pub const MIN_POINTS: usize = 8;

    pub fn new(freqs: Vec<f64>, s21: Vec<Complex64>) -> Result<Self, ResonanceError> {
        if freqs.len() != s21.len() {
            return Err(ResonanceError::InvalidSweep(format!(
                "{} frequencies but {} samples",
                freqs.len(),
                s21.len()
            )));
        }
        if freqs.len() < Self::MIN_POINTS {
            return Err(ResonanceError::InvalidSweep(format!(
                "need at least {} points, got {}",
                Self::MIN_POINTS,
                freqs.len()
            )));
        }
        if freqs.iter().any(|f| !f.is_finite()) || s21.iter().any(|z| !z.is_finite()) {
            return Err(ResonanceError::InvalidSweep("non-finite value".into()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ResonanceError::InvalidSweep(
                "frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            freqs,
            s21,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: SweepMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.freqs[0], self.freqs[self.freqs.len() - 1])
    }
}

/// One-sigma uncertainties of the fitted resonance quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceErrors {
    pub f0_hz: f64,
    pub q: f64,
    pub qc: f64,
    pub qi: f64,
    pub phi0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceParams {
    pub f0: f64,
    pub q_total: f64,
    pub q_c: f64,
    /// Always `q_internal(q_total, q_c)`.
    pub q_i: f64,
    pub phi0: f64,
    pub background: ComplexPoly,
    pub uncertainties: ResonanceErrors,
}

impl ResonanceParams {
    /// Parameters with a unit background and derived `q_i`.
    pub fn new(f0: f64, q_total: f64, q_c: f64, phi0: f64) -> Result<Self, ResonanceError> {
        let q_i = q_internal(q_total, q_c)?;
        Ok(Self {
            f0,
            q_total,
            q_c,
            q_i,
            phi0,
            background: ComplexPoly::constant(Complex64::new(1.0, 0.0)),
            uncertainties: ResonanceErrors::default(),
        })
    }

    pub fn with_background(mut self, background: ComplexPoly) -> Self {
        self.background = background;
        self
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), ResonanceError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ResonanceError::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// Ideal capacitively coupled resonator, `1 - (Q/Qc) / (1 + 2jQ(f - f0)/f0)`.
pub fn s21_ideal(f: f64, f0: f64, q: f64, qc: f64) -> Result<Complex64, ResonanceError> {
    check_positive("f0", f0)?;
    check_positive("q", q)?;
    check_positive("qc", qc)?;
    Ok(notch(f, f0, q, qc, 0.0))
}

fn notch(f: f64, f0: f64, q: f64, qc: f64, phi0: f64) -> Complex64 {
    let x = (f - f0) / f0;
    let denom = Complex64::new(1.0, 2.0 * q * x);
    1.0 - (q / qc) * Complex64::from_polar(1.0, phi0) / denom
}

/// Resonance with impedance-mismatch phase `phi0` and a complex polynomial background.
pub fn s21_model(f: f64, params: &ResonanceParams) -> Result<Complex64, ResonanceError> {
    check_positive("f0", params.f0)?;
    check_positive("q", params.q_total)?;
    check_positive("qc", params.q_c)?;
    Ok(params.background.eval(f) * notch(f, params.f0, params.q_total, params.q_c, params.phi0))
}

/// Internal quality factor from `1/Q = 1/Qi + 1/Qc`.
pub fn q_internal(q_total: f64, q_c: f64) -> Result<f64, ResonanceError> {
    check_positive("q_total", q_total)?;
    check_positive("q_c", q_c)?;
    if q_total >= q_c {
        return Err(ResonanceError::Domain(format!(
            "q_total ({q_total}) must be below q_c ({q_c})"
        )));
    }
    Ok(1.0 / (1.0 / q_total - 1.0 / q_c))
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Degree of the complex background polynomial, 0 to 2.
    pub background_degree: usize,
    pub lm: LmConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            background_degree: 1,
            lm: LmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    pub params: ResonanceParams,
    pub converged: bool,
    pub cost: f64,
    pub initial_cost: f64,
    /// Cost per degree of freedom (residuals are unweighted).
    pub chi2_dof: f64,
    pub iterations: usize,
}

const OFF_RESONANCE_FRACTION: f64 = 0.1;

/// Seeds a fit from the dip in `|S21|`.
pub fn estimate_initial(sweep: &ComplexSweep) -> Result<ResonanceParams, ResonanceError> {
    let n = sweep.len();
    let mags: Vec<f64> = sweep.s21().iter().map(|z| z.norm()).collect();
    let (imin, &min_mag) = mags
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("sweep is non-empty");
    if !(min_mag < 0.95 * median(&mags)) {
        return Err(ResonanceError::NoDipFound);
    }

    let edge = ((n as f64 * OFF_RESONANCE_FRACTION).ceil() as usize).max(2);
    let off: Vec<usize> = (0..edge).chain(n - edge..n).collect();
    let baseline = median(&off.iter().map(|&i| mags[i]).collect::<Vec<_>>());
    let bg = Complex64::new(
        median(&off.iter().map(|&i| sweep.s21()[i].re).collect::<Vec<_>>()),
        median(&off.iter().map(|&i| sweep.s21()[i].im).collect::<Vec<_>>()),
    );

    let freqs = sweep.freqs();
    let f0 = freqs[imin];
    let level = 0.5 * (min_mag * min_mag + baseline * baseline);
    let p2: Vec<f64> = mags.iter().map(|m| m * m).collect();
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imin;
        for i in range {
            if p2[i] >= level {
                let t = (level - p2[prev]) / (p2[i] - p2[prev]);
                return Some(freqs[prev] + t * (freqs[i] - freqs[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imin).rev()).unwrap_or(freqs[0]);
    let right = crossing(&mut (imin + 1..n)).unwrap_or(freqs[n - 1]);
    let fwhm = (right - left).max(freqs[1] - freqs[0]);
    let q = f0 / fwhm;
    let depth = (1.0 - min_mag / baseline).clamp(1e-3, 0.999);
    let qc = q / depth;

    let (lo, hi) = sweep.span();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); 1];
    coeffs[0] = bg;
    Ok(ResonanceParams {
        f0,
        q_total: q,
        q_c: qc,
        q_i: q_internal(q, qc).unwrap_or(f64::NAN),
        phi0: 0.0,
        background: ComplexPoly {
            center: 0.5 * (lo + hi),
            scale: 0.5 * (hi - lo),
            coeffs,
        },
        uncertainties: ResonanceErrors::default(),
    })
}

/// Refines the seed using the resonance circle: the off-resonance point and
/// the on-resonance point are diametrically opposite, which gives Q/Qc and φ0.
fn circle_seed(sweep: &ComplexSweep, seed: &ResonanceParams) -> Option<ResonanceParams> {
    let bg = seed.background.coeffs[0];
    let pts: Vec<Complex64> = sweep.s21().iter().map(|z| z / bg).collect();
    let circle = fit_circle(&pts).ok()?;
    let ratio = 2.0 * (Complex64::new(1.0, 0.0) - circle.center);
    let on_res = 2.0 * circle.center - 1.0;
    let (imin, _) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - on_res).norm().total_cmp(&(b.1 - on_res).norm()))?;
    let depth = ratio.norm();
    if !(depth > 0.0 && depth < 1.0) {
        return None;
    }
    let mut out = seed.clone();
    out.f0 = sweep.freqs()[imin];
    out.q_c = seed.q_total / depth;
    out.phi0 = ratio.arg();
    Some(out)
}

struct Layout {
    f_ref: f64,
    f_unit: f64,
    bg_center: f64,
    bg_scale: f64,
    degree: usize,
}

impl Layout {
    fn n_params(&self) -> usize {
        4 + 2 * (self.degree + 1)
    }

    fn pack(&self, p: &ResonanceParams) -> Vec<f64> {
        let mut v = vec![
            (p.f0 - self.f_ref) / self.f_unit,
            p.q_total.ln(),
            p.q_c.ln(),
            p.phi0,
        ];
        let bg = rebase(&p.background, self.bg_center, self.bg_scale);
        for k in 0..=self.degree {
            let c = bg.coeffs.get(k).copied().unwrap_or_default();
            v.push(c.re);
            v.push(c.im);
        }
        v
    }

    fn unpack(&self, v: &[f64]) -> (f64, f64, f64, f64, ComplexPoly) {
        let coeffs = (0..=self.degree)
            .map(|k| Complex64::new(v[4 + 2 * k], v[5 + 2 * k]))
            .collect();
        (
            self.f_ref + v[0] * self.f_unit,
            v[1].exp(),
            v[2].exp(),
            v[3],
            ComplexPoly {
                center: self.bg_center,
                scale: self.bg_scale,
                coeffs,
            },
        )
    }
}

/// Re-expresses a polynomial of degree ≤ 2 about a new center and scale.
fn rebase(p: &ComplexPoly, center: f64, scale: f64) -> ComplexPoly {
    // sample at three points and re-solve exactly
    let deg = p.degree().min(2);
    let us: Vec<f64> = (0..=deg).map(|k| k as f64 - deg as f64 / 2.0).collect();
    let vals: Vec<Complex64> = us.iter().map(|&u| p.eval(center + u * scale)).collect();
    let coeffs = match deg {
        0 => vec![vals[0]],
        1 => vec![0.5 * (vals[0] + vals[1]), vals[1] - vals[0]],
        _ => {
            // u = -1, 0, 1
            let c0 = vals[1];
            let c1 = 0.5 * (vals[2] - vals[0]);
            let c2 = 0.5 * (vals[2] + vals[0]) - vals[1];
            vec![c0, c1, c2]
        }
    };
    ComplexPoly {
        center,
        scale,
        coeffs,
    }
}

fn residuals(sweep: &ComplexSweep, layout: &Layout, v: &[f64], out: &mut [f64]) {
    let (f0, q, qc, phi0, bg) = layout.unpack(v);
    let n = sweep.len();
    for (i, (&f, &z)) in sweep.freqs().iter().zip(sweep.s21()).enumerate() {
        let m = bg.eval(f) * notch(f, f0, q, qc, phi0);
        out[i] = m.re - z.re;
        out[n + i] = m.im - z.im;
    }
}

/// Fits the resonance model to both quadratures of the sweep.
pub fn fit_resonance(sweep: &ComplexSweep, config: &FitConfig) -> Result<ResonanceFit, ResonanceError> {
    if config.background_degree > 2 {
        return Err(ResonanceError::Domain(format!(
            "background degree must be 0..=2, got {}",
            config.background_degree
        )));
    }
    let seed = estimate_initial(sweep)?;
    let (lo, hi) = sweep.span();
    let layout = Layout {
        f_ref: seed.f0,
        f_unit: seed.f0 / seed.q_total,
        bg_center: 0.5 * (lo + hi),
        bg_scale: 0.5 * (hi - lo),
        degree: config.background_degree,
    };
    let m = 2 * sweep.len();
    let n_par = layout.n_params();
    if m <= n_par {
        return Err(ResonanceError::InvalidSweep("too few points for the model".into()));
    }

    let mut seeds = vec![seed.clone()];
    if let Some(s) = circle_seed(sweep, &seed) {
        seeds.push(s);
    }

    let mut best: Option<lm::LmOutcome> = None;
    let mut best_initial = f64::INFINITY;
    for s in &seeds {
        let p0 = layout.pack(s);
        let out = lm::minimize(|v, r| residuals(sweep, &layout, v, r), &p0, m, &config.lm);
        best_initial = best_initial.min(out.initial_cost);
        if best.as_ref().is_none_or(|b| out.cost < b.cost) {
            best = Some(out);
        }
    }
    let out = best.expect("at least one seed");

    let (f0, q, qc, phi0, background) = layout.unpack(&out.params);
    let dof = (m - n_par) as f64;
    let s2 = out.cost / dof;
    let cov = out.covariance().ok_or(ResonanceError::IllConditioned)?;
    let sd = |i: usize| (cov[(i, i)] * s2).sqrt();
    let q_i = q_internal(q, qc)?;
    let var_qi = q_i.powi(4)
        * (cov[(1, 1)] / (q * q) + cov[(2, 2)] / (qc * qc) - 2.0 * cov[(1, 2)] / (q * qc))
        * s2;
    let params = ResonanceParams {
        f0,
        q_total: q,
        q_c: qc,
        q_i,
        phi0: wrap_angle(phi0),
        background,
        uncertainties: ResonanceErrors {
            f0_hz: layout.f_unit * sd(0),
            q: q * sd(1),
            qc: qc * sd(2),
            qi: var_qi.max(0.0).sqrt(),
            phi0: sd(3),
        },
    };
    let fit = ResonanceFit {
        params,
        converged: out.converged,
        cost: out.cost,
        initial_cost: best_initial,
        chi2_dof: s2,
        iterations: out.iterations,
    };
    if !out.converged || f0 < lo || f0 > hi {
        return Err(ResonanceError::NonConvergence {
            iterations: out.iterations,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Evaluates the model over a set of frequencies.
pub fn synthesize(freqs: &[f64], params: &ResonanceParams) -> Result<Vec<Complex64>, ResonanceError> {
    freqs.iter().map(|&f| s21_model(f, params)).collect()
}
