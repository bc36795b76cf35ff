//! Pulse-record triggering: moving-average smoothing, Savitzky–Golay
//! filtering and differentiation, onset detection on the second derivative,
//! integer alignment and record tagging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{mad, median};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no onset found")]
    NoOnset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Good,
    Empty,
    Multiple,
    Bad,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Good => "good",
            Tag::Empty => "empty",
            Tag::Multiple => "multiple",
            Tag::Bad => "bad",
        }
    }
}

impl std::str::FromStr for Tag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "good" => Ok(Tag::Good),
            "empty" => Ok(Tag::Empty),
            "multiple" => Ok(Tag::Multiple),
            "bad" => Ok(Tag::Bad),
            other => Err(format!("unknown tag {other:?}")),
        }
    }
}

/// One acquisition window on a single (phase) channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub trigger_index: Option<usize>,
    pub tag: Option<Tag>,
    /// Integer shift applied by alignment.
    pub shift: Option<i64>,
}

impl Record {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            trigger_index: None,
            tag: None,
            shift: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Centered moving average; near the edges the window shrinks symmetrically.
pub fn moving_average(samples: &[f64], window: usize) -> Result<Vec<f64>, PulseError> {
    if window.is_multiple_of(2) || window == 0 || window > samples.len() {
        return Err(PulseError::Domain(format!(
            "moving-average window must be odd and <= {} samples, got {window}",
            samples.len()
        )));
    }
    let n = samples.len();
    let h = window / 2;
    Ok((0..n)
        .map(|i| {
            let k = h.min(i).min(n - 1 - i);
            let s: f64 = samples[i - k..=i + k].iter().sum();
            s / (2 * k + 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SavGolConfig {
    pub window: usize,
    pub poly_order: usize,
    pub deriv_order: usize,
}

impl Default for SavGolConfig {
    fn default() -> Self {
        Self {
            window: 51,
            poly_order: 3,
            deriv_order: 2,
        }
    }
}

impl SavGolConfig {
    pub fn validate(&self) -> Result<(), PulseError> {
        if self.window < 5 || self.window.is_multiple_of(2) {
            return Err(PulseError::Domain(format!("window must be odd and >= 5, got {}", self.window)));
        }
        if self.poly_order >= self.window {
            return Err(PulseError::Domain("poly_order must be below window".into()));
        }
        if self.deriv_order > 2 || self.deriv_order > self.poly_order {
            return Err(PulseError::Domain("deriv_order must be 0..=2 and <= poly_order".into()));
        }
        Ok(())
    }
}

/// Least-squares polynomial weights over offsets `0..window`, evaluated (or
/// differentiated) at offset `pos`; derivative in units of samples⁻ᵈ.
fn savgol_weights(window: usize, order: usize, deriv: usize, pos: f64) -> Vec<f64> {
    let h = (window / 2) as f64;
    let center = h;
    // scaled abscissa for conditioning
    let u: Vec<f64> = (0..window).map(|k| (k as f64 - center) / h).collect();
    let m = order + 1;
    let a = DMatrix::from_fn(window, m, |i, j| u[i].powi(j as i32));
    let ata = a.transpose() * &a;
    let x = (pos - center) / h;
    // d^deriv/du^deriv of u^j at x
    let e = DVector::from_fn(m, |j, _| {
        if j < deriv {
            0.0
        } else {
            let falling: f64 = (0..deriv).map(|q| (j - q) as f64).product();
            falling * x.powi((j - deriv) as i32)
        }
    });
    let z = ata
        .cholesky()
        .expect("Vandermonde normal matrix is positive definite")
        .solve(&e);
    let w = &a * z;
    let scale = h.powi(deriv as i32);
    w.iter().map(|v| v / scale).collect()
}

/// Convolution weights for the window center (sample `k` weights offset `k - window/2`).
pub fn savgol_coefficients(config: &SavGolConfig) -> Result<Vec<f64>, PulseError> {
    config.validate()?;
    Ok(savgol_weights(
        config.window,
        config.poly_order,
        config.deriv_order,
        (config.window / 2) as f64,
    ))
}

/// Savitzky–Golay smoothing or differentiation (per sample). The first and
/// last `window/2` outputs evaluate the edge window's fit off-center.
pub fn savgol_filter(samples: &[f64], config: &SavGolConfig) -> Result<Vec<f64>, PulseError> {
    config.validate()?;
    let n = samples.len();
    let w = config.window;
    if n < w {
        return Err(PulseError::Domain(format!("need at least {w} samples, got {n}")));
    }
    let h = w / 2;
    let center = savgol_coefficients(config)?;
    let dot = |ws: &[f64], start: usize| ws.iter().zip(&samples[start..start + w]).map(|(a, b)| a * b).sum::<f64>();
    let mut out = vec![0.0; n];
    for i in h..n - h {
        out[i] = dot(&center, i - h);
    }
    for i in 0..h {
        let ws = savgol_weights(w, config.poly_order, config.deriv_order, i as f64);
        out[i] = dot(&ws, 0);
        let ws = savgol_weights(w, config.poly_order, config.deriv_order, (w - h + i) as f64);
        out[n - h + i] = dot(&ws, n - w);
    }
    Ok(out)
}

/// [`savgol_filter`] with derivatives scaled to per-second units.
pub fn savgol_filter_physical(samples: &[f64], config: &SavGolConfig, sample_rate: f64) -> Result<Vec<f64>, PulseError> {
    let s = sample_rate.powi(config.deriv_order as i32);
    Ok(savgol_filter(samples, config)?.into_iter().map(|v| v * s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub smoothing_window: usize,
    pub savgol: SavGolConfig,
    /// Multiple of the robust noise scale of the second-derivative trace.
    pub threshold: f64,
    /// Above-threshold regions closer than this (samples) count as one.
    pub merge_gap: usize,
    /// Absolute sample value treated as saturation.
    pub full_scale: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            smoothing_window: 9,
            savgol: SavGolConfig::default(),
            threshold: 5.0,
            merge_gap: 200,
            full_scale: 10.0,
        }
    }
}

/// Gaussian-consistent MAD factor.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// Smoothed second derivative used for triggering.
pub fn second_derivative(samples: &[f64], config: &TriggerConfig) -> Result<Vec<f64>, PulseError> {
    let smooth = moving_average(samples, config.smoothing_window)?;
    savgol_filter(&smooth, &config.savgol)
}

/// Maximal runs where `|d2|` exceeds the trigger level, over the interior
/// `[window/2, n - window/2)`, merged across gaps shorter than `merge_gap`.
fn trigger_regions(d2: &[f64], config: &TriggerConfig) -> Vec<(usize, usize)> {
    let h = config.savgol.window / 2;
    let n = d2.len();
    if n <= 2 * h {
        return Vec::new();
    }
    let inner = &d2[h..n - h];
    let level = config.threshold * MAD_TO_SIGMA * mad(inner);
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for (k, v) in inner.iter().enumerate() {
        if v.abs() > level {
            let i = k + h;
            match regions.last_mut() {
                Some(r) if i - r.1 <= config.merge_gap => r.1 = i,
                _ => regions.push((i, i)),
            }
        }
    }
    regions
}

/// First sample whose smoothed second derivative leaves the noise band.
pub fn detect_onset(samples: &[f64], config: &TriggerConfig) -> Result<usize, PulseError> {
    let d2 = second_derivative(samples, config)?;
    trigger_regions(&d2, config)
        .first()
        .map(|r| r.0)
        .ok_or(PulseError::NoOnset)
}

pub fn classify_record(record: &Record, config: &TriggerConfig) -> Tag {
    if record
        .samples
        .iter()
        .any(|v| !v.is_finite() || v.abs() >= config.full_scale)
    {
        return Tag::Bad;
    }
    let Ok(d2) = second_derivative(&record.samples, config) else {
        return Tag::Bad;
    };
    match trigger_regions(&d2, config).len() {
        0 => Tag::Empty,
        1 => Tag::Good,
        _ => Tag::Multiple,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub records: Vec<Record>,
    /// Input indices of records without a detectable onset.
    pub flagged: Vec<usize>,
}

/// Shifts `record` so sample `onset` moves to `target`.
pub fn shift_record(record: &Record, onset: usize, target: usize) -> Record {
    let n = record.len();
    let fill = if onset > 0 {
        median(&record.samples[..onset.min(n)])
    } else {
        median(&record.samples)
    };
    let shift = target as i64 - onset as i64;
    let samples = (0..n as i64)
        .map(|i| {
            let src = i - shift;
            if src >= 0 && src < n as i64 {
                record.samples[src as usize]
            } else {
                fill
            }
        })
        .collect();
    Record {
        samples,
        sample_rate: record.sample_rate,
        trigger_index: Some(target),
        tag: record.tag,
        shift: Some(shift),
    }
}

/// Aligns every record's detected onset onto `target`; records without an
/// onset are dropped and listed in `flagged`.
pub fn align_records(records: &[Record], config: &TriggerConfig, target: usize) -> Alignment {
    let mut out = Vec::with_capacity(records.len());
    let mut flagged = Vec::new();
    for (k, r) in records.iter().enumerate() {
        match detect_onset(&r.samples, config) {
            Ok(onset) => out.push(shift_record(r, onset, target)),
            Err(_) => flagged.push(k),
        }
    }
    Alignment { records: out, flagged }
}
