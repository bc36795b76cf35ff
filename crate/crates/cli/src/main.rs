use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mkid_core::io::{read_json, read_off, read_qi_series, read_records, read_sweep};
use mkid_core::iqcal::CalibrationData;

mod config;
mod error;
mod stages;

use config::PipelineConfig;
use error::CliError;
use stages::{AlignmentDoc, OfDoc, Outputs};

/// MKID single-photon analysis pipeline.
#[derive(Debug, Parser)]
#[command(name = "mkid", version, about)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to anything omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Stage input file.
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Existing directory receiving the stage outputs.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sweep, 1/Qi series, IQ calibration data and pulse records.
    Simulate,
    /// Fit a resonance sweep CSV (`freq_hz,re,im`).
    ResonanceFit,
    /// Fit the energy gap to a 1/Qi(T) CSV with its JSON sidecar.
    GapFit,
    /// Fit the IQ correction chain to a calibration JSON.
    IqCalibrate,
    /// Tag records and align their onsets.
    TriggerAlign,
    /// Build the optimum filter and compute OFF values of aligned records.
    Offilter {
        /// Pulse-free records; defaults to `noise.json` next to the input.
        #[arg(long, value_name = "PATH")]
        noise: Option<PathBuf>,
        /// Alignment table; defaults to `alignment.json` next to the input.
        #[arg(long, value_name = "PATH")]
        alignment: Option<PathBuf>,
    },
    /// Fit the Poisson-Gaussian comb to an OFF table.
    SpectrumFit {
        /// Gaussian width; defaults to config, then to `offilter.json` next to the input.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Simulate and run every stage.
    Run,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required for this subcommand")))
}

fn execute(cli: &Cli) -> Result<Outputs, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate()?;
    let out_dir = required(&cli.output, "output")?;
    stages::ensure_dir(out_dir)?;

    let outputs = match &cli.command {
        Command::Simulate => stages::simulate(&cfg)?.1,
        Command::Run => {
            let (report, out) = stages::run(&cfg)?;
            log::info!(
                "photon count μ = {:.3} ± {:.3} (configured {})",
                report.photon_count.mu,
                report.photon_count.mu_err,
                report.configured_mu
            );
            out
        }
        Command::ResonanceFit => {
            let sweep = read_sweep(required(&cli.input, "input")?)?;
            stages::resonance_fit(&sweep, &cfg)?.1
        }
        Command::GapFit => {
            let (series, side) = read_qi_series(required(&cli.input, "input")?)?;
            stages::gap_fit(&series, cfg.gap.alpha.unwrap_or(side.alpha), &cfg)?.1
        }
        Command::IqCalibrate => {
            let data: CalibrationData = read_json(required(&cli.input, "input")?)?;
            stages::iq_calibrate(&data, &cfg)?.1
        }
        Command::TriggerAlign => {
            let input = required(&cli.input, "input")?;
            let records = stages::records_from_file(read_records(input)?, &input.display().to_string())?;
            stages::trigger_align(&records, &cfg)?.2
        }
        Command::Offilter { noise, alignment } => {
            let input = required(&cli.input, "input")?;
            let noise = noise.clone().unwrap_or_else(|| stages::sibling(input, stages::NOISE));
            let alignment = alignment
                .clone()
                .unwrap_or_else(|| stages::sibling(input, stages::ALIGNMENT));
            let aligned = stages::records_from_file(read_records(input)?, &input.display().to_string())?;
            let noise = stages::records_from_file(read_records(&noise)?, &noise.display().to_string())?;
            let alignment: AlignmentDoc = read_json(&alignment)?;
            stages::offilter(&aligned, &alignment, &noise, &cfg)?.2
        }
        Command::SpectrumFit { sigma } => {
            let input = required(&cli.input, "input")?;
            let rows = read_off(input)?;
            let sigma = match sigma.or(cfg.spectrum.sigma) {
                Some(s) if s.is_finite() && s > 0.0 => s,
                Some(s) => return Err(CliError::Config(format!("sigma must be positive, got {s}"))),
                None => {
                    let path = stages::sibling(input, stages::OFFILTER);
                    let doc: OfDoc = read_json(&path).map_err(|e| {
                        CliError::Config(format!("no sigma configured and no optimum-filter summary: {e}"))
                    })?;
                    doc.resolution
                }
            };
            stages::spectrum_fit(&rows, sigma, &cfg)?.1
        }
    };
    outputs.write_all(out_dir)?;
    for name in outputs.names() {
        log::debug!("wrote {}", out_dir.join(name).display());
    }
    Ok(outputs)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
