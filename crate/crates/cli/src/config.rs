//! Pipeline configuration: the synthetic scenario plus one section per stage.

use std::path::Path;

use mkid_core::gapfit::GapFitConfig;
use mkid_core::iqcal::ChainConfig;
use mkid_core::pulse::TriggerConfig;
use mkid_core::resonance::FitConfig;
use mkid_core::spectrum::{Binning, Constraints};
use mkid_core::synthgen::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub resonance: ResonanceStage,
    pub gap: GapStage,
    pub iq: IqStage,
    pub trigger: TriggerStage,
    pub offilter: OfStage,
    pub spectrum: SpectrumStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceStage {
    pub background_degree: usize,
}

impl Default for ResonanceStage {
    fn default() -> Self {
        Self { background_degree: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapStage {
    pub use_kondo: bool,
    pub tk_reference: f64,
    /// Overrides the kinetic-inductance fraction stored next to the series.
    pub alpha: Option<f64>,
}

impl Default for GapStage {
    fn default() -> Self {
        Self {
            use_kondo: true,
            tk_reference: 1.0,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqStage {
    pub background_degree: usize,
    pub exclude_linewidths: f64,
    pub theta: Option<f64>,
}

impl Default for IqStage {
    fn default() -> Self {
        Self {
            background_degree: 2,
            exclude_linewidths: 10.0,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerStage {
    pub detector: TriggerConfig,
    /// Sample index every detected onset is moved to.
    pub target_index: usize,
}

impl Default for TriggerStage {
    fn default() -> Self {
        Self {
            detector: TriggerConfig::default(),
            target_index: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfStage {
    /// Pre-trigger length of the template; defaults to the alignment target.
    pub pretrigger: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct SpectrumStage {
    /// Gaussian width; defaults to the optimum-filter resolution.
    pub sigma: Option<f64>,
    /// Defaults to bins of half the Gaussian width, fine enough to resolve the comb.
    pub binning: Option<Binning>,
    pub fix_mu: Option<f64>,
    pub fix_e_gamma: Option<f64>,
    pub fix_shift: Option<f64>,
}


fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl PipelineConfig {
    /// Reads a JSON config; a missing file is an I/O error, bad content a config error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate()?;
        check(self.resonance.background_degree <= 2, || {
            "resonance.background_degree must be 0, 1 or 2".into()
        })?;
        check(self.gap.tk_reference.is_finite() && self.gap.tk_reference > 0.0, || {
            "gap.tk_reference must be positive".into()
        })?;
        if let Some(a) = self.gap.alpha {
            check(a > 0.0 && a <= 1.0, || format!("gap.alpha must lie in (0, 1], got {a}"))?;
        }
        check(self.iq.background_degree <= 4, || "iq.background_degree must be at most 4".into())?;
        check(self.iq.exclude_linewidths.is_finite() && self.iq.exclude_linewidths > 0.0, || {
            "iq.exclude_linewidths must be positive".into()
        })?;
        if let Some(t) = self.iq.theta {
            check(t.abs() < std::f64::consts::FRAC_PI_2, || "iq.theta must lie in (-π/2, π/2)".into())?;
        }
        let d = &self.trigger.detector;
        d.savgol
            .validate()
            .map_err(|e| CliError::Config(format!("trigger.detector.savgol: {e}")))?;
        check(d.smoothing_window % 2 == 1, || "trigger.detector.smoothing_window must be odd".into())?;
        check(d.threshold.is_finite() && d.threshold > 0.0, || {
            "trigger.detector.threshold must be positive".into()
        })?;
        check(d.full_scale > 0.0, || "trigger.detector.full_scale must be positive".into())?;
        let s = &self.spectrum;
        if let Some(sigma) = s.sigma {
            check(sigma.is_finite() && sigma > 0.0, || "spectrum.sigma must be positive".into())?;
        }
        match s.binning {
            Some(Binning::Width(w)) => check(w.is_finite() && w > 0.0, || "spectrum.binning width must be positive".into())?,
            Some(Binning::Count(n)) => check(n > 0, || "spectrum.binning count must be positive".into())?,
            Some(Binning::FreedmanDiaconis) | None => {}
        }
        if let Some(mu) = s.fix_mu {
            check(mu > 0.0, || "spectrum.fix_mu must be positive".into())?;
        }
        if let Some(e) = s.fix_e_gamma {
            check(e > 0.0, || "spectrum.fix_e_gamma must be positive".into())?;
        }
        if let Some(sh) = s.fix_shift {
            check(sh > 0.0 && sh < 1.0, || "spectrum.fix_shift must lie in (0, 1)".into())?;
        }
        Ok(())
    }

    /// Checks the stage settings against a record layout.
    pub fn check_records(&self, record_length: usize) -> Result<(), CliError> {
        check(self.trigger.target_index < record_length, || {
            format!(
                "trigger.target_index {} outside records of length {record_length}",
                self.trigger.target_index
            )
        })?;
        check(self.trigger.detector.savgol.window <= record_length, || {
            "trigger savgol window longer than the records".into()
        })?;
        check(self.pretrigger() < record_length, || "offilter.pretrigger outside the records".into())
    }

    pub fn pretrigger(&self) -> usize {
        self.offilter.pretrigger.unwrap_or(self.trigger.target_index)
    }

    pub fn resonance_fit(&self) -> FitConfig {
        FitConfig {
            background_degree: self.resonance.background_degree,
            ..FitConfig::default()
        }
    }

    pub fn gap_fit(&self) -> GapFitConfig {
        GapFitConfig {
            use_kondo: self.gap.use_kondo,
            tk_reference: self.gap.tk_reference,
            ..GapFitConfig::default()
        }
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            background_degree: self.iq.background_degree,
            exclude_linewidths: self.iq.exclude_linewidths,
            theta: self.iq.theta,
            ..ChainConfig::default()
        }
    }

    pub fn binning(&self, sigma: f64) -> Binning {
        self.spectrum.binning.unwrap_or(Binning::Width(0.5 * sigma))
    }

    pub fn constraints(&self) -> Constraints {
        Constraints {
            fix_mu: self.spectrum.fix_mu.is_some(),
            fix_e_gamma: self.spectrum.fix_e_gamma.is_some(),
            fix_shift: self.spectrum.fix_shift.is_some(),
            ..Constraints::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
        let partial: PipelineConfig = serde_json::from_str(r#"{"trigger": {"target_index": 900}}"#).unwrap();
        assert_eq!(partial.trigger.target_index, 900);
        assert_eq!(partial.pretrigger(), 900);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"spectrum": {"sigmaa": 1}}"#).is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut c = PipelineConfig::default();
        c.spectrum.sigma = Some(-1.0);
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = PipelineConfig::default();
        c.scenario.pulse.tau_rise_s = 1.0;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = PipelineConfig::default();
        assert!(c.check_records(500).is_err());
    }
}
