//! One function per pipeline stage. Each works on in-memory inputs and
//! returns the files it wants written; nothing touches the output directory
//! until every stage of a command has succeeded.

use std::path::{Path, PathBuf};

use mkid_core::gapfit::{fit_gap, inv_qi_model_kondo, GapErrors, GapFitResult, QiSeries};
use mkid_core::io::{
    encode_records, off_csv, qi_series_csv, records_csv, spectrum_csv, sweep_csv, to_json_string, trace_csv, OffRow, QiSidecar,
    RecordFile, RecordHeader,
};
use mkid_core::iqcal::{fit_chain, CalibrationChain, CalibrationData, ChainReport};
use mkid_core::numeric::{variance, ComplexPoly};
use mkid_core::optfilter::{average_pulse, build_filter, estimate_amplitude, noise_psd, peak_to_peak, resolution};
use mkid_core::physics::delta_to_tc;
use mkid_core::pulse::{classify_record, detect_onset, shift_record, Record, Tag};
use mkid_core::resonance::{fit_resonance, synthesize, ComplexSweep, ResonanceError, ResonanceErrors, ResonanceFit};
use mkid_core::spectrum::{bin_integral, fit_spectrum, initial_guess, photon_count_estimate, Histogram, SpectrumErrors};
use mkid_core::synthgen::{
    analytic_resolution, gen_distorted_iq, gen_qi_series, gen_records, gen_sweep, Distortion, RecordSet,
    ScenarioConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const SWEEP: &str = "sweep.csv";
pub const QI_SERIES: &str = "qi_series.csv";
pub const CALIBRATION: &str = "calibration.json";
pub const SIGNAL: &str = "signal.json";
pub const NOISE: &str = "noise.json";
pub const TRUTH: &str = "truth.json";
pub const TRUTH_RECORDS: &str = "truth_records.csv";
pub const RESONANCE_FIT: &str = "resonance_fit.json";
pub const RESONANCE_MODEL: &str = "resonance_model.csv";
pub const GAP_FIT: &str = "gap_fit.json";
pub const GAP_MODEL: &str = "gap_model.csv";
pub const CHAIN: &str = "calibration_chain.json";
pub const CORRECTED: &str = "corrected_trace.csv";
pub const ALIGNED: &str = "aligned.json";
pub const ALIGNMENT: &str = "alignment.json";
pub const OFF: &str = "off.csv";
pub const OFFILTER: &str = "offilter.json";
pub const TEMPLATE: &str = "template.csv";
pub const SPECTRUM_FIT: &str = "spectrum_fit.json";
pub const SPECTRUM: &str = "spectrum.csv";
pub const REPORT: &str = "report.json";

/// Files produced by a command, written only once the command has succeeded.
#[derive(Default)]
pub struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    pub fn text(&mut self, name: &str, text: String) {
        self.0.push((name.to_string(), text.into_bytes()));
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) {
        self.text(name, to_json_string(value));
    }

    /// Header JSON at `name` plus its `.bin` payload.
    pub fn records(&mut self, name: &str, file: &RecordFile) -> Result<(), CliError> {
        let (header, payload) = encode_records(file)?;
        self.text(name, header);
        let bin = Path::new(name).with_extension("bin");
        self.0.push((bin.to_string_lossy().into_owned(), payload));
        Ok(())
    }

    pub fn extend(&mut self, other: Outputs) {
        self.0.extend(other.0);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_all(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.0 {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(format!("output directory {} does not exist", dir.display())))
    }
}

/// Sibling of `path` with another file name.
pub fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

/// Channel 0 of a record file.
pub fn records_from_file(file: RecordFile, what: &str) -> Result<Vec<Record>, CliError> {
    if file.header.n_records == 0 || file.header.record_length == 0 {
        return Err(CliError::Io(format!("{what}: no records")));
    }
    if file.header.channels > 1 {
        log::warn!("{what}: {} channels, using channel 0", file.header.channels);
    }
    let rate = file.header.sample_rate_hz;
    Ok(file
        .data
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .map(|s| Record::new(s, rate))
        .collect())
}

fn record_file(records: &[Record]) -> RecordFile {
    RecordFile {
        header: RecordHeader {
            sample_rate_hz: records.first().map_or(1.0, |r| r.sample_rate),
            record_length: records.first().map_or(0, Record::len),
            n_records: records.len(),
            channels: 1,
        },
        data: vec![records.iter().map(|r| r.samples.clone()).collect()],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Truth {
    scenario: ScenarioConfig,
    tc_k: f64,
    of_resolution: f64,
    distortion: Distortion,
}

pub struct Simulation {
    pub sweep: ComplexSweep,
    pub series: QiSeries,
    pub alpha: f64,
    pub calibration: CalibrationData,
    pub records: RecordSet,
}

pub fn simulate(cfg: &PipelineConfig) -> Result<(Simulation, Outputs), CliError> {
    let sc = &cfg.scenario;
    let sweep = gen_sweep(sc)?;
    let series = gen_qi_series(sc)?;
    let iq = gen_distorted_iq(sc)?;
    let records = gen_records(sc)?;

    let mut out = Outputs::default();
    out.text(SWEEP, sweep_csv(&sweep));
    out.text(QI_SERIES, qi_series_csv(&series));
    out.json(
        &Path::new(QI_SERIES).with_extension("json").to_string_lossy(),
        &QiSidecar {
            resonator_id: series.resonator_id.clone(),
            f0_hz: series.f0_hz,
            alpha: sc.gap.alpha,
        },
    );
    out.json(CALIBRATION, &iq.data);
    out.records(SIGNAL, &record_file(&records.signal))?;
    out.records(NOISE, &record_file(&records.noise))?;
    let mut truth_rows = String::from("record_index,onset,photons,amplitude\n");
    for i in 0..records.signal.len() {
        truth_rows.push_str(&format!(
            "{i},{},{},{}\n",
            records.onsets[i], records.photons[i], records.amplitudes[i]
        ));
    }
    out.text(TRUTH_RECORDS, truth_rows);
    out.json(
        TRUTH,
        &Truth {
            scenario: sc.clone(),
            tc_k: delta_to_tc(sc.gap.delta_ev).map_err(|e| CliError::Config(e.to_string()))?,
            of_resolution: analytic_resolution(sc)?,
            distortion: iq.truth.clone(),
        },
    );
    Ok((
        Simulation {
            sweep,
            series,
            alpha: sc.gap.alpha,
            calibration: iq.data,
            records,
        },
        out,
    ))
}

/// Resonance-fit output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceDoc {
    pub f0_hz: f64,
    pub q: f64,
    pub qc: f64,
    pub qi: f64,
    pub phi0: f64,
    pub background: ComplexPoly,
    pub errors: ResonanceErrors,
    pub converged: bool,
    pub cost: f64,
    pub chi2_dof: f64,
    pub iterations: usize,
}

impl From<&ResonanceFit> for ResonanceDoc {
    fn from(fit: &ResonanceFit) -> Self {
        let p = &fit.params;
        Self {
            f0_hz: p.f0,
            q: p.q_total,
            qc: p.q_c,
            qi: p.q_i,
            phi0: p.phi0,
            background: p.background.clone(),
            errors: p.uncertainties,
            converged: fit.converged,
            cost: fit.cost,
            chi2_dof: fit.chi2_dof,
            iterations: fit.iterations,
        }
    }
}

pub fn resonance_fit(sweep: &ComplexSweep, cfg: &PipelineConfig) -> Result<(ResonanceDoc, Outputs), CliError> {
    let fit = match fit_resonance(sweep, &cfg.resonance_fit()) {
        Ok(fit) => fit,
        Err(ResonanceError::NonConvergence { iterations, .. }) => {
            return Err(CliError::Numerical(format!(
                "resonance fit did not converge after {iterations} iterations"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let model = synthesize(sweep.freqs(), &fit.params)?;
    let doc = ResonanceDoc::from(&fit);
    let mut out = Outputs::default();
    out.json(RESONANCE_FIT, &doc);
    out.text(
        RESONANCE_MODEL,
        sweep_csv(&ComplexSweep::new(sweep.freqs().to_vec(), model)?),
    );
    Ok((doc, out))
}

/// Gap-fit output document; Δ in eV, Tc in K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDoc {
    pub delta_ev: f64,
    pub tc_k: f64,
    pub inv_qi0: f64,
    pub kondo_b: f64,
    pub kondo_tk: f64,
    pub alpha: f64,
    pub use_kondo: bool,
    pub errors: GapErrors,
    pub chi2_dof: f64,
    pub iterations: usize,
}

impl From<&GapFitResult> for GapDoc {
    fn from(f: &GapFitResult) -> Self {
        Self {
            delta_ev: f.delta,
            tc_k: f.tc,
            inv_qi0: f.inv_qi0,
            kondo_b: f.kondo_b,
            kondo_tk: f.kondo_tk,
            alpha: f.alpha,
            use_kondo: f.use_kondo,
            errors: f.uncertainties,
            chi2_dof: f.chi2_dof,
            iterations: f.iterations,
        }
    }
}

pub fn gap_fit(series: &QiSeries, alpha: f64, cfg: &PipelineConfig) -> Result<(GapDoc, Outputs), CliError> {
    let fit = fit_gap(series, alpha, &cfg.gap_fit())?;
    let omega = series.omega();
    let mut model = String::from("temperature_k,inv_qi,model\n");
    for k in 0..series.temperatures.len() {
        let t = series.temperatures[k];
        let m = inv_qi_model_kondo(t, fit.delta, fit.inv_qi0, fit.alpha, omega, fit.kondo_b, fit.kondo_tk)?;
        model.push_str(&format!("{t},{},{m}\n", series.inv_qi[k]));
    }
    let doc = GapDoc::from(&fit);
    let mut out = Outputs::default();
    out.json(GAP_FIT, &doc);
    out.text(GAP_MODEL, model);
    Ok((doc, out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDoc {
    pub chain: CalibrationChain,
    pub report: ChainReport,
}

pub fn iq_calibrate(data: &CalibrationData, cfg: &PipelineConfig) -> Result<(ChainDoc, Outputs), CliError> {
    let (chain, report) = fit_chain(data, &cfg.chain())?;
    let corrected = chain.apply_trace(&data.resonance)?;
    let mut out = Outputs::default();
    let doc = ChainDoc { chain, report };
    out.json(CHAIN, &doc);
    out.text(CORRECTED, trace_csv(&corrected));
    Ok((doc, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedEntry {
    pub record_index: usize,
    pub tag: Tag,
    pub onset: Option<usize>,
    pub shift: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagCounts {
    pub good: usize,
    pub empty: usize,
    pub multiple: usize,
    pub bad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDoc {
    pub target_index: usize,
    pub n_records: usize,
    pub n_aligned: usize,
    pub tags: TagCounts,
    /// Input indices of records without a detectable onset.
    pub flagged: Vec<usize>,
    /// Order matches the aligned records file.
    pub records: Vec<AlignedEntry>,
}

pub fn trigger_align(records: &[Record], cfg: &PipelineConfig) -> Result<(AlignmentDoc, Vec<Record>, Outputs), CliError> {
    if records.is_empty() {
        return Err(CliError::Io("no records to align".into()));
    }
    cfg.check_records(records[0].len())?;
    let det = &cfg.trigger.detector;
    let target = cfg.trigger.target_index;
    let mut aligned = Vec::new();
    let mut entries = Vec::new();
    let mut flagged = Vec::new();
    let mut tags = TagCounts::default();
    for (k, r) in records.iter().enumerate() {
        let tag = classify_record(r, det);
        match tag {
            Tag::Good => tags.good += 1,
            Tag::Empty => tags.empty += 1,
            Tag::Multiple => tags.multiple += 1,
            Tag::Bad => tags.bad += 1,
        }
        let onset = if tag == Tag::Bad { None } else { detect_onset(&r.samples, det).ok() };
        match onset {
            Some(onset) => {
                let mut s = shift_record(r, onset, target);
                s.tag = Some(tag);
                entries.push(AlignedEntry {
                    record_index: k,
                    tag,
                    onset: Some(onset),
                    shift: s.shift,
                });
                aligned.push(s);
            }
            None => flagged.push(k),
        }
    }
    if aligned.is_empty() {
        return Err(CliError::Numerical("no record has a detectable onset".into()));
    }
    let doc = AlignmentDoc {
        target_index: target,
        n_records: records.len(),
        n_aligned: aligned.len(),
        tags,
        flagged,
        records: entries,
    };
    let mut out = Outputs::default();
    out.records(ALIGNED, &record_file(&aligned))?;
    out.json(ALIGNMENT, &doc);
    Ok((doc, aligned, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfDoc {
    pub pretrigger: usize,
    pub n_template_records: usize,
    pub n_noise_records: usize,
    /// Standard deviation of the estimator on the noise records.
    pub resolution: f64,
    pub normalization: f64,
    pub off_variance: f64,
    pub peak_to_peak_variance: f64,
}

pub fn offilter(
    aligned: &[Record],
    alignment: &AlignmentDoc,
    noise: &[Record],
    cfg: &PipelineConfig,
) -> Result<(OfDoc, Vec<OffRow>, Outputs), CliError> {
    if aligned.len() != alignment.records.len() {
        return Err(CliError::Io(format!(
            "alignment lists {} records but the aligned file holds {}",
            alignment.records.len(),
            aligned.len()
        )));
    }
    if aligned.is_empty() || noise.is_empty() {
        return Err(CliError::Io("optimum filter needs aligned and noise records".into()));
    }
    if noise[0].len() != aligned[0].len() {
        return Err(CliError::Config("noise and signal records differ in length".into()));
    }
    let pretrigger = cfg.pretrigger();
    cfg.check_records(aligned[0].len())?;
    let good: Vec<Record> = aligned
        .iter()
        .zip(&alignment.records)
        .filter(|(_, e)| e.tag == Tag::Good)
        .map(|(r, _)| r.clone())
        .collect();
    if good.is_empty() {
        return Err(CliError::Numerical("no good records for the template".into()));
    }
    let template = average_pulse(&good, pretrigger)?;
    let model = build_filter(&template, &noise_psd(noise)?, pretrigger)?;
    let mut rows = Vec::with_capacity(aligned.len());
    for (r, e) in aligned.iter().zip(&alignment.records) {
        rows.push(OffRow {
            record_index: e.record_index,
            off_value: estimate_amplitude(&r.samples, &model)?,
            tag: e.tag,
        });
    }
    let noise_slices: Vec<&[f64]> = noise.iter().map(|r| r.samples.as_slice()).collect();
    let good_off: Vec<f64> = rows.iter().filter(|r| r.tag == Tag::Good).map(|r| r.off_value).collect();
    let good_p2p: Vec<f64> = good.iter().map(|r| peak_to_peak(&r.samples)).collect();
    let doc = OfDoc {
        pretrigger,
        n_template_records: good.len(),
        n_noise_records: noise.len(),
        resolution: resolution(&noise_slices, &model)?,
        normalization: model.normalization,
        off_variance: variance(&good_off),
        peak_to_peak_variance: variance(&good_p2p),
    };
    let mut out = Outputs::default();
    out.text(OFF, off_csv(&rows));
    out.json(OFFILTER, &doc);
    out.text(TEMPLATE, records_csv(std::slice::from_ref(&model.template)));
    Ok((doc, rows, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonCount {
    pub mu: f64,
    pub mu_err: f64,
}

/// Spectrum-fit output document; `a` is the event-count amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDoc {
    pub mu: f64,
    pub mu_err: f64,
    pub a: f64,
    pub shift: f64,
    pub e_gamma: f64,
    pub sigma_fixed: f64,
    pub chi2_dof: f64,
    pub n_bins: usize,
    pub errors: SpectrumErrors,
    pub n_free: usize,
    pub n_events: usize,
    pub n_excluded: usize,
    pub iterations: usize,
}

pub fn spectrum_fit(rows: &[OffRow], sigma: f64, cfg: &PipelineConfig) -> Result<(SpectrumDoc, Outputs), CliError> {
    let values: Vec<f64> = rows.iter().filter(|r| r.tag == Tag::Good).map(|r| r.off_value).collect();
    if values.is_empty() {
        return Err(CliError::Io("no good events in the OFF table".into()));
    }
    let hist = Histogram::from_values(&values, cfg.binning(sigma))?;
    let mut init = initial_guess(&hist, sigma)?;
    let s = &cfg.spectrum;
    if let Some(mu) = s.fix_mu {
        init.mu = mu;
    }
    if let Some(e) = s.fix_e_gamma {
        init.e_gamma = e;
    }
    if let Some(sh) = s.fix_shift {
        init.shift = sh;
    }
    let fit = fit_spectrum(&hist, &init, &cfg.constraints())?;
    let (mu, mu_err) = photon_count_estimate(&fit);
    let model: Vec<f64> = (0..hist.len())
        .map(|i| bin_integral(hist.edges[i], hist.edges[i + 1], &fit.model))
        .collect();
    let m = &fit.model;
    let doc = SpectrumDoc {
        mu,
        mu_err,
        a: m.amplitude,
        shift: m.shift,
        e_gamma: m.e_gamma,
        sigma_fixed: m.sigma,
        chi2_dof: fit.chi2_dof,
        n_bins: fit.n_bins,
        errors: fit.errors,
        n_free: fit.n_free,
        n_events: values.len(),
        n_excluded: rows.len() - values.len(),
        iterations: fit.iterations,
    };
    let mut out = Outputs::default();
    out.json(SPECTRUM_FIT, &doc);
    out.text(SPECTRUM, spectrum_csv(&hist.centers(), &hist.counts, &model));
    Ok((doc, out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub photon_count: PhotonCount,
    pub configured_mu: f64,
    pub resonance: ResonanceDoc,
    pub gap: GapDoc,
    pub calibration_residual_fraction: f64,
    pub alignment: TagCounts,
    pub n_aligned: usize,
    pub of_resolution: f64,
    pub spectrum_chi2_dof: f64,
}

/// Simulation followed by every analysis stage.
pub fn run(cfg: &PipelineConfig) -> Result<(Report, Outputs), CliError> {
    cfg.check_records(cfg.scenario.acquisition.record_length)?;
    let (sim, mut out) = simulate(cfg)?;
    let (res, o) = resonance_fit(&sim.sweep, cfg)?;
    out.extend(o);
    let (gap, o) = gap_fit(&sim.series, cfg.gap.alpha.unwrap_or(sim.alpha), cfg)?;
    out.extend(o);
    let (chain, o) = iq_calibrate(&sim.calibration, cfg)?;
    out.extend(o);
    let (alignment, aligned, o) = trigger_align(&sim.records.signal, cfg)?;
    out.extend(o);
    let (of, rows, o) = offilter(&aligned, &alignment, &sim.records.noise, cfg)?;
    out.extend(o);
    let (sp, o) = spectrum_fit(&rows, cfg.spectrum.sigma.unwrap_or(of.resolution), cfg)?;
    out.extend(o);
    let report = Report {
        photon_count: PhotonCount {
            mu: sp.mu,
            mu_err: sp.mu_err,
        },
        configured_mu: cfg.scenario.photons.mu,
        resonance: res,
        gap,
        calibration_residual_fraction: chain.report.residual_fraction,
        alignment: alignment.tags,
        n_aligned: alignment.n_aligned,
        of_resolution: of.resolution,
        spectrum_chi2_dof: sp.chi2_dof,
    };
    out.json(REPORT, &report);
    Ok((report, out))
}
