use mkid_core::gapfit::GapError;
use mkid_core::io::IoError;
use mkid_core::iqcal::IqCalError;
use mkid_core::optfilter::OfError;
use mkid_core::pulse::PulseError;
use mkid_core::resonance::ResonanceError;
use mkid_core::spectrum::SpectrumError;
use mkid_core::synthgen::SynthError;
use serde::Serialize;
use thiserror::Error;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid flags or configuration (exit 2).
    #[error("{0}")]
    Config(String),
    /// Unreadable, malformed or empty input, or unwritable output (exit 3).
    #[error("{0}")]
    Io(String),
    /// The analysis itself failed (exit 4).
    #[error("{0}")]
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// One-line JSON document for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorDoc {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        })
        .expect("error document serializes")
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => CliError::Config(format!("scenario: {m}")),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

macro_rules! numerical {
    ($($t:ty => $stage:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(format!(concat!($stage, ": {}"), e))
            }
        })*
    };
}

numerical!(
    ResonanceError => "resonance fit",
    GapError => "gap fit",
    IqCalError => "iq calibration",
    PulseError => "trigger",
    OfError => "optimum filter",
    SpectrumError => "spectrum fit",
);
