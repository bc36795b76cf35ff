//! Temperature dependence of 1/Qi: gap extraction, optional logarithmic
//! (Kondo-like) loss term, kinetic inductance fraction and weighted means.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{self, LmConfig};
use crate::numeric::{median, solve_least_squares};
use crate::physics::{delta_to_tc, mattis_bardeen, PhysicsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GapError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("gap fit did not converge")]
    NonConvergence { best: Box<GapFitResult> },
    #[error("gap unidentifiable from data: {0}")]
    DegenerateData(String),
}

/// `1/Qi(T) = 1/Qi(0) + α σ1 / (2 σ2)`, with `Δ0 = Δ`.
pub fn inv_qi_model(t: f64, delta: f64, inv_qi0: f64, alpha: f64, omega: f64) -> Result<f64, GapError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GapError::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let s = mattis_bardeen(t, omega, delta, delta)?;
    Ok(inv_qi0 + alpha * s.sigma1_over_sigman / (2.0 * s.sigma2_over_sigman))
}

/// [`inv_qi_model`] minus `b ln(T/T_K)`.
pub fn inv_qi_model_kondo(
    t: f64,
    delta: f64,
    inv_qi0: f64,
    alpha: f64,
    omega: f64,
    b: f64,
    tk: f64,
) -> Result<f64, GapError> {
    if !(tk > 0.0) {
        return Err(GapError::Domain(format!("tk must be positive, got {tk}")));
    }
    Ok(inv_qi_model(t, delta, inv_qi0, alpha, omega)? - b * (t / tk).ln())
}

/// Internal-loss measurements of one resonator against temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiSeries {
    pub temperatures: Vec<f64>,
    pub inv_qi: Vec<f64>,
    pub inv_qi_err: Vec<f64>,
    pub f0_hz: f64,
    pub resonator_id: String,
}

impl QiSeries {
    pub const MIN_POINTS: usize = 5;

    pub fn new(
        temperatures: Vec<f64>,
        inv_qi: Vec<f64>,
        inv_qi_err: Vec<f64>,
        f0_hz: f64,
        resonator_id: impl Into<String>,
    ) -> Result<Self, GapError> {
        let s = Self {
            temperatures,
            inv_qi,
            inv_qi_err,
            f0_hz,
            resonator_id: resonator_id.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), GapError> {
        let n = self.temperatures.len();
        let bad = |m: &str| Err(GapError::InvalidSeries(m.to_string()));
        if self.inv_qi.len() != n || self.inv_qi_err.len() != n {
            return bad("arrays differ in length");
        }
        if n < Self::MIN_POINTS {
            return bad("need at least 5 temperatures");
        }
        if self.temperatures.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || self.temperatures.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("temperatures must be positive and strictly increasing");
        }
        if self.inv_qi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("inv_qi must be positive");
        }
        if self.inv_qi_err.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("errors must be positive");
        }
        if !(self.f0_hz.is_finite() && self.f0_hz > 0.0) {
            return bad("f0 must be positive");
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f0_hz
    }
}

#[derive(Debug, Clone)]
pub struct GapFitConfig {
    pub use_kondo: bool,
    /// `T_K` is held here; `b` and `1/Qi(0)` absorb the degenerate direction.
    pub tk_reference: f64,
    pub lm: LmConfig,
}

impl Default for GapFitConfig {
    fn default() -> Self {
        Self {
            use_kondo: true,
            tk_reference: 1.0,
            lm: LmConfig::default(),
        }
    }
}

pub const TK_RANGE: (f64, f64) = (0.01, 10.0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GapErrors {
    pub delta: f64,
    pub inv_qi0: f64,
    pub kondo_b: f64,
    /// Not identifiable separately from `b` and `1/Qi(0)`.
    pub kondo_tk: Option<f64>,
    pub tc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFitResult {
    pub delta: f64,
    pub inv_qi0: f64,
    pub kondo_b: f64,
    pub kondo_tk: f64,
    pub alpha: f64,
    pub tc: f64,
    pub uncertainties: GapErrors,
    pub chi2_dof: f64,
    pub use_kondo: bool,
    pub iterations: usize,
}

const DELTA_GRID: (f64, f64, usize) = (1e-5, 2e-3, 240);
/// Minimum χ² improvement over the model without quasiparticle losses.
const MIN_DELTA_CHI2: f64 = 9.0;
const MAX_REL_DELTA_ERR: f64 = 0.5;

struct Problem<'a> {
    series: &'a QiSeries,
    alpha: f64,
    omega: f64,
    kondo: bool,
    y_scale: f64,
}

impl Problem<'_> {
    fn qp_term(&self, t: f64, delta: f64) -> f64 {
        match mattis_bardeen(t, self.omega, delta, delta) {
            Ok(s) => self.alpha * s.sigma1_over_sigman / (2.0 * s.sigma2_over_sigman),
            Err(_) => f64::NAN,
        }
    }

    /// p = [ln Δ, c / y_scale, b / y_scale]; model `c + qp(T) - b ln T`.
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let delta = p[0].exp();
        let s = self.series;
        for i in 0..s.temperatures.len() {
            let t = s.temperatures[i];
            let mut m = p[1] * self.y_scale + self.qp_term(t, delta);
            if self.kondo {
                m -= p[2] * self.y_scale * t.ln();
            }
            out[i] = (m - s.inv_qi[i]) / s.inv_qi_err[i];
        }
    }

    /// Weighted linear solve for (c, b) with the quasiparticle term fixed
    /// (or absent); returns the scaled linear parameters and χ².
    fn linear(&self, delta: Option<f64>) -> Option<(Vec<f64>, f64)> {
        let s = self.series;
        let n = s.temperatures.len();
        let k = if self.kondo { 2 } else { 1 };
        let mut a = DMatrix::zeros(n, k);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let t = s.temperatures[i];
            let w = 1.0 / s.inv_qi_err[i];
            a[(i, 0)] = w * self.y_scale;
            if self.kondo {
                a[(i, 1)] = -w * self.y_scale * t.ln();
            }
            let qp = delta.map_or(0.0, |d| self.qp_term(t, d));
            y[i] = w * (s.inv_qi[i] - qp);
        }
        let x = solve_least_squares(&a, &y)?;
        let chi2 = (&a * &x - &y).norm_squared();
        chi2.is_finite().then(|| (x.iter().copied().collect(), chi2))
    }
}

/// Weighted least-squares fit of the loss model to a [`QiSeries`].
pub fn fit_gap(series: &QiSeries, alpha: f64, config: &GapFitConfig) -> Result<GapFitResult, GapError> {
    series.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(GapError::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let tk = config.tk_reference;
    if !(tk >= TK_RANGE.0 && tk <= TK_RANGE.1) {
        return Err(GapError::Domain(format!("tk_reference {tk} outside [0.01, 10] K")));
    }
    let prob = Problem {
        series,
        alpha,
        omega: series.omega(),
        kondo: config.use_kondo,
        y_scale: median(&series.inv_qi),
    };
    let n = series.temperatures.len();
    let n_par = if config.use_kondo { 3 } else { 2 };
    if n <= n_par {
        return Err(GapError::InvalidSeries("more parameters than points".into()));
    }

    let (lo, hi, steps) = DELTA_GRID;
    let mut seed: Option<(f64, Vec<f64>, f64)> = None;
    for k in 0..steps {
        let d = lo * (hi / lo).powf(k as f64 / (steps - 1) as f64);
        if let Some((x, chi2)) = prob.linear(Some(d)) {
            if seed.as_ref().is_none_or(|s| chi2 < s.2) {
                seed = Some((d, x, chi2));
            }
        }
    }
    let (d0, lin0, _) = seed.ok_or_else(|| GapError::DegenerateData("no admissible starting point".into()))?;
    let mut p0 = vec![d0.ln()];
    p0.extend(lin0);

    let out = lm::minimize(|p, r| prob.residuals(p, r), &p0, n, &config.lm);
    let delta = out.params[0].exp();
    let c = out.params[1] * prob.y_scale;
    let b = if config.use_kondo { out.params[2] * prob.y_scale } else { 0.0 };
    let inv_qi0 = c - b * tk.ln();
    let tc = delta_to_tc(delta)?;
    let chi2 = out.cost;

    let cov = out
        .covariance()
        .ok_or_else(|| GapError::DegenerateData("singular Jacobian".into()))?;
    let rel_delta = cov[(0, 0)].sqrt();
    let ys = prob.y_scale;
    let (var_q0, sd_b) = if config.use_kondo {
        let l = tk.ln();
        (
            ys * ys * (cov[(1, 1)] + l * l * cov[(2, 2)] - 2.0 * l * cov[(1, 2)]),
            ys * cov[(2, 2)].sqrt(),
        )
    } else {
        (ys * ys * cov[(1, 1)], 0.0)
    };
    let result = GapFitResult {
        delta,
        inv_qi0,
        kondo_b: b,
        kondo_tk: tk,
        alpha,
        tc,
        uncertainties: GapErrors {
            delta: delta * rel_delta,
            inv_qi0: var_q0.max(0.0).sqrt(),
            kondo_b: sd_b,
            kondo_tk: None,
            tc: tc * rel_delta,
        },
        chi2_dof: chi2 / (n - n_par) as f64,
        use_kondo: config.use_kondo,
        iterations: out.iterations,
    };

    if !out.converged {
        return Err(GapError::NonConvergence { best: Box::new(result) });
    }
    if !(rel_delta <= MAX_REL_DELTA_ERR) {
        return Err(GapError::DegenerateData(format!(
            "relative gap uncertainty {rel_delta:.3} exceeds {MAX_REL_DELTA_ERR}"
        )));
    }
    let null_chi2 = prob.linear(None).map_or(f64::INFINITY, |x| x.1);
    if !(null_chi2 - chi2 >= MIN_DELTA_CHI2) {
        return Err(GapError::DegenerateData(format!(
            "quasiparticle term improves χ² by only {:.2}",
            null_chi2 - chi2
        )));
    }
    Ok(result)
}

/// `α = 1 - (f_meas / f_sim)²`.
pub fn kinetic_fraction(f_meas: f64, f_sim: f64) -> Result<f64, GapError> {
    if !(f_meas >= 0.0 && f_sim > 0.0 && f_meas <= f_sim) {
        return Err(GapError::Domain(format!(
            "need 0 <= f_meas <= f_sim, got f_meas = {f_meas}, f_sim = {f_sim}"
        )));
    }
    let r = f_meas / f_sim;
    Ok(1.0 - r * r)
}

/// Inverse-variance weighted mean and its error.
pub fn weighted_mean(values: &[f64], errors: &[f64]) -> Result<(f64, f64), GapError> {
    if values.is_empty() || values.len() != errors.len() {
        return Err(GapError::Domain("need equal, non-empty inputs".into()));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(GapError::Domain("errors must be positive".into()));
    }
    let (sw, swv) = values
        .iter()
        .zip(errors)
        .fold((0.0, 0.0), |(sw, swv), (v, e)| {
            let w = 1.0 / (e * e);
            (sw + w, swv + w * v)
        });
    Ok((swv / sw, 1.0 / sw.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const OMEGA: f64 = 2.0 * std::f64::consts::PI * 5380.6e6;
    const DELTA: f64 = 0.150e-3;

    #[test]
    fn model_limits() {
        let q0 = 1.0 / 6440.0;
        assert!((inv_qi_model(1e-3, DELTA, q0, 0.05, OMEGA).unwrap() - q0).abs() < 1e-300);
        for t in [0.05, 0.2, 0.3] {
            assert_eq!(inv_qi_model(t, DELTA, q0, 0.0, OMEGA).unwrap(), q0);
        }
        let base = inv_qi_model(0.25, DELTA, q0, 0.05, OMEGA).unwrap();
        assert_eq!(inv_qi_model_kondo(0.25, DELTA, q0, 0.05, OMEGA, 3e-5, 0.25).unwrap(), base);
        assert_eq!(inv_qi_model_kondo(0.25, DELTA, q0, 0.05, OMEGA, 0.0, 0.7).unwrap(), base);
        let k = inv_qi_model_kondo(0.4, DELTA, q0, 0.05, OMEGA, 1e-5, 0.2).unwrap();
        let plain = inv_qi_model(0.4, DELTA, q0, 0.05, OMEGA).unwrap();
        assert!((k - (plain - 1e-5 * 2f64.ln())).abs() < 1e-18);
    }

    #[test]
    fn model_golden() {
        // 40-digit evaluation of the same closed form
        let v = inv_qi_model(0.25, DELTA, 1.0 / 6440.0, 0.05, OMEGA).unwrap();
        assert!((v / 1.698_952_217_635_977_6e-4 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_temperature() {
        let mut prev = 0.0;
        for k in 0..=260 {
            let t = 0.04 + k as f64 * 1e-3;
            let v = inv_qi_model(t, DELTA, 1e-4, 1.0, OMEGA).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn kinetic_fraction_cases() {
        assert_eq!(kinetic_fraction(5e9, 5e9).unwrap(), 0.0);
        assert!((kinetic_fraction(5e9 / 2f64.sqrt(), 5e9).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kinetic_fraction(0.0, 5e9).unwrap(), 1.0);
        assert!(kinetic_fraction(6e9, 5e9).is_err());
    }

    #[test]
    fn weighted_mean_cases() {
        assert_eq!(weighted_mean(&[2.0], &[0.5]).unwrap(), (2.0, 0.5));
        let (m, e) = weighted_mean(&[3.0, 3.0], &[0.2, 0.2]).unwrap();
        assert!((m - 3.0).abs() < 1e-15 && (e - 0.2 / 2f64.sqrt()).abs() < 1e-15);
        let v = [0.149e-3, 0.151e-3, 0.150e-3];
        let s = [1e-6, 2e-6, 1.5e-6];
        let w: Vec<f64> = s.iter().map(|e| 1.0 / (e * e)).collect();
        let sw: f64 = w.iter().sum();
        let expect = (v[0] * w[0] + v[1] * w[1] + v[2] * w[2]) / sw;
        let (m, e) = weighted_mean(&v, &s).unwrap();
        assert!((m - expect).abs() < 1e-18);
        assert!((e - sw.powf(-0.5)).abs() < 1e-18);
        assert!(weighted_mean(&[], &[]).is_err());
        assert!(weighted_mean(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn series_validation() {
        let t = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert!(QiSeries::new(t.clone(), vec![1e-4; 5], vec![1e-6; 5], 5e9, "r").is_ok());
        assert!(QiSeries::new(t.clone(), vec![1e-4; 4], vec![1e-6; 5], 5e9, "r").is_err());
        assert!(QiSeries::new(t.clone(), vec![-1e-4; 5], vec![1e-6; 5], 5e9, "r").is_err());
        assert!(QiSeries::new(t, vec![1e-4; 5], vec![0.0; 5], 5e9, "r").is_err());
    }
}
