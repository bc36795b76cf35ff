//! Physical constants, exponentially scaled modified Bessel functions and the
//! low-temperature Mattis–Bardeen conductivity ratios.
//!
//! The Bessel routines return `e^(-x) I0(x)` and `e^(x) K0(x)` so that the
//! conductivity formulas can be evaluated at any `ξ = ħω / 2k_BT` without
//! overflow. Evaluation uses the power series below [`BESSEL_CROSSOVER`] and
//! the Hankel asymptotic expansion above it. Relative accuracy is better than
//! 1e-9 away from the crossover and about 1e-7 just above it, where the
//! asymptotic series reaches its smallest term.

use thiserror::Error;

/// Boltzmann constant in eV/K (CODATA 2018, exact).
pub const K_B: f64 = 8.617333262e-5;
/// Reduced Planck constant in eV·s (CODATA 2018).
pub const HBAR: f64 = 6.582119569e-16;
/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Argument at which the Bessel evaluation switches from series to asymptotic form.
pub const BESSEL_CROSSOVER: f64 = 8.0;

/// Gap-to-critical-temperature ratio, `2Δ = 3.5 k_B T_c`.
const GAP_RATIO: f64 = 3.5;

/// Fractions of Δ0 above which `ħω` or `k_B T` leave the low-frequency,
/// low-temperature regime of the analytic conductivity formulas.
const REGIME_LIMIT: f64 = 0.25;

/// The constants used throughout the crate, bundled for callers that want
/// them as a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysConstants {
    pub k_b: f64,
    pub hbar: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self { k_b: K_B, hbar: HBAR }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("{name} = {value} is outside the domain of {function}")]
    Domain {
        function: &'static str,
        name: &'static str,
        value: f64,
    },
}

fn domain(function: &'static str, name: &'static str, value: f64) -> PhysicsError {
    PhysicsError::Domain {
        function,
        name,
        value,
    }
}

/// `e^(-x) I0(x)` for `x >= 0`.
pub fn bessel_i0_scaled(x: f64) -> Result<f64, PhysicsError> {
    if !x.is_finite() || x < 0.0 {
        return Err(domain("bessel_i0_scaled", "x", x));
    }
    if x < BESSEL_CROSSOVER {
        Ok(i0_series(x) * (-x).exp())
    } else {
        Ok(i0_asymptotic_scaled(x))
    }
}

/// `e^(x) K0(x)` for `x > 0`.
pub fn bessel_k0_scaled(x: f64) -> Result<f64, PhysicsError> {
    if !x.is_finite() || x <= 0.0 {
        return Err(domain("bessel_k0_scaled", "x", x));
    }
    if x < BESSEL_CROSSOVER {
        Ok(k0_series(x) * x.exp())
    } else {
        Ok(k0_asymptotic_scaled(x))
    }
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        sum += term;
        if term < f64::EPSILON * 1e-2 * sum {
            break;
        }
    }
    sum
}

fn k0_series(x: f64) -> f64 {
    // K0(x) = -(ln(x/2) + γ) I0(x) + Σ_k (x²/4)^k / (k!)² · H_k
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut i0 = 1.0;
    let mut tail = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        harmonic += 1.0 / kf;
        i0 += term;
        tail += term * harmonic;
        if term * harmonic < f64::EPSILON * 1e-2 * tail.abs().max(i0) {
            break;
        }
    }
    -((0.5 * x).ln() + EULER_GAMMA) * i0 + tail
}

/// Hankel expansion `1/sqrt(2πx) Σ ((2k-1)!!)² / (k! (8x)^k)`, summed while
/// the terms keep shrinking.
fn i0_asymptotic_scaled(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        let kf = k as f64;
        let next = term * (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
        if next >= term {
            break;
        }
        term = next;
        sum += term;
        if term < f64::EPSILON * 1e-2 * sum {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Same expansion with alternating signs for K0, truncated at the smallest term.
fn k0_asymptotic_scaled(x: f64) -> f64 {
    let mut term: f64 = 1.0;
    let mut sum = 1.0;
    for k in 1..500 {
        let kf = k as f64;
        let next = -term * (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < f64::EPSILON * 1e-2 * sum.abs() {
            break;
        }
    }
    sum * (std::f64::consts::PI / (2.0 * x)).sqrt()
}

/// Normalized complex conductivity `σ1/σn` and `σ2/σn`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConductivityRatios {
    pub sigma1_over_sigman: f64,
    pub sigma2_over_sigman: f64,
    /// False when `ħω` or `k_B T` is not small compared to Δ0.
    pub in_regime: bool,
}

/// Low-temperature Mattis–Bardeen ratios.
///
/// `temperature` in K, `omega` in rad/s, `delta` and `delta0` in eV. Inputs
/// outside the `ħω, k_BT ≪ Δ0` regime are still evaluated; the result carries
/// `in_regime = false`.
pub fn mattis_bardeen(
    temperature: f64,
    omega: f64,
    delta: f64,
    delta0: f64,
) -> Result<ConductivityRatios, PhysicsError> {
    const F: &str = "mattis_bardeen";
    for (name, v) in [
        ("temperature", temperature),
        ("omega", omega),
        ("delta", delta),
        ("delta0", delta0),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(domain(F, name, v));
        }
    }
    let kt = K_B * temperature;
    let hw = HBAR * omega;
    let xi = hw / (2.0 * kt);
    let boltzmann = (-delta0 / kt).exp();

    // sinh(ξ) K0(ξ) = ½ (1 - e^(-2ξ)) · e^ξ K0(ξ)
    let sinh_k0 = 0.5 * (-(-2.0 * xi).exp_m1()) * bessel_k0_scaled(xi)?;
    let sigma1 = 4.0 * delta / hw * boltzmann * sinh_k0;
    // e^(-ξ) I0(-ξ) = e^(-ξ) I0(ξ)
    let sigma2 = std::f64::consts::PI * delta / hw * (1.0 - 2.0 * boltzmann * bessel_i0_scaled(xi)?);

    Ok(ConductivityRatios {
        sigma1_over_sigman: sigma1,
        sigma2_over_sigman: sigma2,
        in_regime: hw < REGIME_LIMIT * delta0 && kt < REGIME_LIMIT * delta0,
    })
}

/// Critical temperature in K from the energy gap in eV.
pub fn delta_to_tc(delta: f64) -> Result<f64, PhysicsError> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(domain("delta_to_tc", "delta", delta));
    }
    Ok(2.0 * delta / (GAP_RATIO * K_B))
}
